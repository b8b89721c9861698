#include "fda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fda/loss.hpp"
#include "fda/model.hpp"
#include "fda/rng.hpp"

namespace fda::nn {
inline namespace FDA_NN_ABI {

GradCheckOptions default_check_options() {
  GradCheckOptions o;
#ifdef FDA_DOUBLE
  o.h = 1e-5;
  o.tol = 1e-6;
  o.zero_atol = 1e-7;
#endif
  return o;
}

namespace {

Real f32_round(double v) { return static_cast<Real>(static_cast<float>(v)); }

double project(const Tensor& out, const std::vector<Real>& r) {
  double s = 0.0;
  for (size_t i = 0; i < r.size(); ++i) s += double(r[i]) * out.data()[i];
  return s;
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const std::function<Tensor()>& f, const std::vector<Leaf>& leaves,
                           const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = name;
  if (leaves.empty()) throw ValidationError("grad_check needs at least one leaf");
  CounterRng rng(opts.seed);

  Tensor out = f();
  std::vector<Real> r(static_cast<size_t>(out.numel()));
  for (auto& v : r) v = f32_round(rng.uniform(-1.0, 1.0));
  for (const Leaf& l : leaves) l.tensor.node()->grad.clear();
  backward(out, r);

  int64_t total = 0;
  for (const Leaf& l : leaves) total += l.tensor.numel();
  const int64_t want = std::min<int64_t>(opts.samples, total);
  std::set<std::pair<size_t, int64_t>> picked;
  for (size_t k = 0; static_cast<int64_t>(picked.size()) < want; ++k) {
    const size_t li = k % leaves.size();
    const int64_t n = leaves[li].tensor.numel();
    if (static_cast<int64_t>(std::count_if(picked.begin(), picked.end(), [&](auto& p) { return p.first == li; })) >= n)
      continue;
    picked.insert({li, static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)))});
  }

  for (const auto& [li, idx] : picked) {
    Tensor t = leaves[li].tensor;
    const double analytic = t.has_grad() ? double(t.grad()[idx]) : 0.0;
    Real& slot = t.data()[idx];
    const Real orig = slot;
    const Real xp = static_cast<Real>(orig + opts.h);
    const Real xm = static_cast<Real>(orig - opts.h);
    double fp, fm;
    {
      NoGradGuard ng;
      slot = xp;
      fp = project(f(), r);
      slot = xm;
      fm = project(f(), r);
    }
    slot = orig;
    const double numeric = (fp - fm) / (double(xp) - double(xm));
    const double abs_err = std::abs(analytic - numeric);
    const bool zero = std::abs(analytic) <= opts.zero_atol && std::abs(numeric) <= opts.zero_atol;
    const double rel = zero ? (abs_err <= opts.zero_atol ? 0.0 : 1.0) : grad_rel_error(analytic, numeric);
    rep.samples.push_back({leaves[li].name, idx, analytic, numeric});
    ++rep.coords;
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    if (rel >= rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst = leaves[li].name + "[" + std::to_string(idx) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
    }
  }
  rep.passed = rep.max_rel_err <= opts.tol;
  return rep;
}

namespace {

Tensor rand_tensor(const Shape5& s, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<Real> v(static_cast<size_t>(s.numel()));
  for (auto& x : v) x = f32_round(rng.uniform(lo, hi));
  return Tensor::from(s, std::move(v), true);
}

// Values bounded away from zero, for kinked activations.
Tensor away_from_zero(const Shape5& s, CounterRng& rng) {
  std::vector<Real> v(static_cast<size_t>(s.numel()));
  for (auto& x : v) x = f32_round((rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0));
  return Tensor::from(s, std::move(v), true);
}

// Distinct values on a 0.01 grid in random order, so maxima are never near-tied.
Tensor distinct(const Shape5& s, CounterRng& rng) {
  std::vector<Real> v(static_cast<size_t>(s.numel()));
  for (size_t i = 0; i < v.size(); ++i) v[i] = f32_round(0.01 * double(i) - 0.005 * double(v.size()));
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return Tensor::from(s, std::move(v), true);
}

using Builder = std::function<GradCheckReport(const GradCheckOptions&, CounterRng&, const std::string&)>;

GradCheckCase make_case(const std::string& name, Builder b) {
  return {name, [name, b](const GradCheckOptions& o) {
            CounterRng rng(o.seed, std::hash<std::string>{}(name));
            return b(o, rng, name);
          }};
}

// Small toy network for end-to-end checks on an 8^3 input.
GradCheckReport model_check(const GradCheckOptions& o, CounterRng& rng, const std::string& name, bool noisy) {
  auto model = std::make_shared<FdaModel>(FdaConfig::toy(), rng.next_u64());
  // Non-trivial affine and slope parameters so that their gradients are generic.
  for (auto& e : model->params().entries())
    if (e.name.find(".in.") != std::string::npos || e.name.find(".prelu.") != std::string::npos ||
        e.name.find(".b") == e.name.size() - 2)
      for (auto& v : e.tensor.data()) v = f32_round(v + f32_round(rng.uniform(-0.2, 0.2)));
  Tensor x = rand_tensor({1, 1, 8, 8, 8}, rng, 0.0, 1.0);
  std::vector<Leaf> leaves{{"x", x}};
  for (auto& e : model->params().entries())
    if (!noisy ? (e.group == "enc_clean" || e.group == "cse" || e.group == "dec_clean")
               : (e.group != "cse" && e.group != "dec_clean"))
      leaves.push_back({e.name, e.tensor});
  GradCheckOptions opts = o;
  opts.samples = std::max(2 * o.samples, static_cast<int>(leaves.size()));
  return grad_check(name, [model, x, noisy] { return noisy ? model->forward_noisy(x) : model->forward_clean(x); },
                    leaves, opts);
}

std::vector<GradCheckCase> build_checks() {
  std::vector<GradCheckCase> c;
  c.push_back(make_case("conv3d", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({2, 2, 4, 4, 4}, rng), w = rand_tensor({3, 2, 3, 3, 3}, rng), b = rand_tensor({3, 1, 1, 1, 1}, rng);
    return grad_check(n, [=] { return conv3d(x, w, b, 1, 1); }, {{"x", x}, {"w", w}, {"b", b}}, o);
  }));
  c.push_back(make_case("conv3d_stride2", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 3, 5, 4, 6}, rng), w = rand_tensor({2, 3, 3, 3, 3}, rng);
    return grad_check(n, [=] { return conv3d(x, w, {}, 2, 1); }, {{"x", x}, {"w", w}}, o);
  }));
  c.push_back(make_case("conv3d_pointwise", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({2, 3, 3, 4, 5}, rng), w = rand_tensor({4, 3, 1, 1, 1}, rng), b = rand_tensor({4, 1, 1, 1, 1}, rng);
    return grad_check(n, [=] { return conv3d(x, w, b, 1, 0); }, {{"x", x}, {"w", w}, {"b", b}}, o);
  }));
  c.push_back(make_case("instance_norm", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({2, 3, 4, 4, 4}, rng), g = rand_tensor({3, 1, 1, 1, 1}, rng, 0.5, 1.5),
           b = rand_tensor({3, 1, 1, 1, 1}, rng);
    return grad_check(n, [=] { return instance_norm(x, g, b); }, {{"x", x}, {"gamma", g}, {"beta", b}}, o);
  }));
  c.push_back(make_case("prelu", [](auto& o, auto& rng, auto& n) {
    Tensor x = away_from_zero({1, 3, 4, 4, 4}, rng), a = rand_tensor({3, 1, 1, 1, 1}, rng, 0.1, 0.4);
    return grad_check(n, [=] { return prelu(x, a); }, {{"x", x}, {"a", a}}, o);
  }));
  c.push_back(make_case("relu", [](auto& o, auto& rng, auto& n) {
    Tensor x = away_from_zero({1, 4, 4, 4, 4}, rng);
    GradCheckOptions all = o;
    all.samples = static_cast<int>(x.numel());
    return grad_check(n, [=] { return relu(x); }, {{"x", x}}, all);
  }));
  c.push_back(make_case("sigmoid", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 2, 4, 4, 4}, rng, -3.0, 3.0);
    return grad_check(n, [=] { return sigmoid(x); }, {{"x", x}}, o);
  }));
  c.push_back(make_case("tanh", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 2, 4, 4, 4}, rng, -2.0, 2.0);
    return grad_check(n, [=] { return tanh(x); }, {{"x", x}}, o);
  }));
  c.push_back(make_case("global_avg_pool", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({2, 3, 3, 4, 5}, rng);
    return grad_check(n, [=] { return global_avg_pool(x); }, {{"x", x}}, o);
  }));
  c.push_back(make_case("linear", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({4, 8, 1, 1, 1}, rng), w = rand_tensor({6, 8, 1, 1, 1}, rng), b = rand_tensor({6, 1, 1, 1, 1}, rng);
    return grad_check(n, [=] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}}, o);
  }));
  c.push_back(make_case("cse_block", [](auto& o, auto& rng, auto& n) {
    Tensor u = rand_tensor({1, 4, 4, 4, 4}, rng, -1.0, 2.0), w1 = rand_tensor({2, 4, 1, 1, 1}, rng),
           w2 = rand_tensor({4, 2, 1, 1, 1}, rng);
    return grad_check(n, [=] { return cse_block(u, w1, w2); }, {{"u", u}, {"w1", w1}, {"w2", w2}}, o);
  }));
  c.push_back(make_case("maxpool3d", [](auto& o, auto& rng, auto& n) {
    // Only one input in eight is a window maximum; check every coordinate.
    Tensor x = distinct({2, 4, 4, 4, 4}, rng);
    GradCheckOptions all = o;
    all.samples = static_cast<int>(x.numel());
    return grad_check(n, [=] { return maxpool3d(x, 2, 2); }, {{"x", x}}, all);
  }));
  c.push_back(make_case("upsample_nearest", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 3, 3, 4, 3}, rng);
    return grad_check(n, [=] { return upsample_nearest(x, 2); }, {{"x", x}}, o);
  }));
  c.push_back(make_case("add", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 2, 3, 3, 3}, rng), y = rand_tensor({1, 2, 3, 3, 3}, rng);
    return grad_check(n, [=] { return add(x, y); }, {{"x", x}, {"y", y}}, o);
  }));
  c.push_back(make_case("mul", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 2, 3, 3, 3}, rng), y = rand_tensor({1, 2, 3, 3, 3}, rng);
    return grad_check(n, [=] { return mul(x, y); }, {{"x", x}, {"y", y}}, o);
  }));
  c.push_back(make_case("concat_channels", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({2, 2, 2, 3, 3}, rng), y = rand_tensor({2, 3, 2, 3, 3}, rng);
    return grad_check(n, [=] { return concat_channels(x, y); }, {{"x", x}, {"y", y}}, o);
  }));
  c.push_back(make_case("scale_broadcast", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({2, 3, 3, 3, 3}, rng), s = rand_tensor({2, 3, 1, 1, 1}, rng);
    return grad_check(n, [=] { return scale_broadcast(x, s); }, {{"x", x}, {"s", s}}, o);
  }));
  c.push_back(make_case("sum_mean_reshape", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 3, 3, 3, 3}, rng);
    return grad_check(n, [=] { return add(sum(mul(x, x)), mean(reshape(x, {9, 9, 1, 1, 1}))); }, {{"x", x}}, o);
  }));
  c.push_back(make_case("l_reg", [](auto& o, auto& rng, auto& n) {
    Tensor f = rand_tensor({1, 1, 4, 4, 4}, rng, -0.9, 0.9);
    Tensor y = rand_tensor({1, 1, 4, 4, 4}, rng, -1.0, 1.0);
    for (size_t i = 0; i < f.data().size(); ++i)  // keep |f - y| away from the L1 kink
      if (std::abs(f.data()[i] - y.data()[i]) < 0.01) f.data()[i] = f32_round(f.data()[i] + 0.02);
    return grad_check(n, [=] { return l_reg(f, y).value; }, {{"f", f}}, o);
  }));
  c.push_back(make_case("l_seg", [](auto& o, auto& rng, auto& n) {
    Tensor p = rand_tensor({1, 1, 4, 4, 4}, rng, 0.05, 0.95);
    std::vector<Real> gv(64);
    for (auto& v : gv) v = rng.bernoulli(0.4) ? Real(1) : Real(0);
    Tensor g = Tensor::from({1, 1, 4, 4, 4}, gv);
    return grad_check(n, [=] { return l_seg(p, g).value; }, {{"p", p}}, o);
  }));
  c.push_back(make_case("conv_in_prelu_cse_sum", [](auto& o, auto& rng, auto& n) {
    Tensor x = rand_tensor({1, 2, 4, 4, 4}, rng), w = rand_tensor({4, 2, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor g = rand_tensor({4, 1, 1, 1, 1}, rng, 0.5, 1.5), b = rand_tensor({4, 1, 1, 1, 1}, rng, -0.2, 0.2);
    Tensor a = rand_tensor({4, 1, 1, 1, 1}, rng, 0.1, 0.4);
    Tensor w1 = rand_tensor({2, 4, 1, 1, 1}, rng), w2 = rand_tensor({4, 2, 1, 1, 1}, rng);
    return grad_check(
        n, [=] { return sum(cse_block(prelu(instance_norm(conv3d(x, w, {}, 1, 1), g, b), a), w1, w2)); },
        {{"x", x}, {"w", w}, {"gamma", g}, {"beta", b}, {"a", a}, {"w1", w1}, {"w2", w2}}, o);
  }));
  c.push_back(make_case("forward_clean", [](auto& o, auto& rng, auto& n) { return model_check(o, rng, n, false); }));
  c.push_back(make_case("forward_noisy", [](auto& o, auto& rng, auto& n) { return model_check(o, rng, n, true); }));
  return c;
}

}  // namespace

const std::vector<GradCheckCase>& registered_checks() {
  static const std::vector<GradCheckCase> checks = build_checks();
  return checks;
}

std::vector<GradCaseResult> run_registered(const GradRunParams& p) {
  GradCheckOptions o;
  o.h = p.h;
  o.samples = p.samples;
  o.seed = p.seed;
  std::vector<GradCaseResult> out;
  for (const auto& c : registered_checks()) {
    GradCheckReport r = c.run(o);
    out.push_back({r.name, c.name.rfind("forward_", 0) == 0, std::move(r.samples)});
  }
  return out;
}

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
