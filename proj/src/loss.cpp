#include "fda/loss.hpp"

#include <algorithm>
#include <cmath>

namespace fda::nn {
inline namespace FDA_NN_ABI {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                          to_string(b.shape()));
}

const Shape5 kScalar{1, 1, 1, 1, 1};

}  // namespace

void validate(const LossConfig& cfg) {
  if (!(cfg.prob_clip > 0.0 && cfg.prob_clip < 0.5)) throw ValidationError("prob_clip must lie in (0, 0.5)");
  if (!(cfg.dice_eps > 0.0)) throw ValidationError("dice_eps must be > 0");
}

nlohmann::ordered_json to_json(const LossConfig& cfg) {
  return {{"reduction", cfg.reduction == Reduction::mean ? "mean" : "sum"},
          {"dice_eps", cfg.dice_eps},
          {"prob_clip", cfg.prob_clip},
          {"focal", cfg.focal == FocalMode::two_sided ? "two_sided" : "literal"}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig c;
  try {
    const std::string red = j.value("reduction", std::string("mean"));
    if (red != "mean" && red != "sum") throw ValidationError("reduction must be sum or mean");
    c.reduction = red == "mean" ? Reduction::mean : Reduction::sum;
    const std::string focal = j.value("focal", std::string("two_sided"));
    if (focal != "two_sided" && focal != "literal") throw ValidationError("focal must be two_sided or literal");
    c.focal = focal == "two_sided" ? FocalMode::two_sided : FocalMode::literal;
    c.dice_eps = j.value("dice_eps", c.dice_eps);
    c.prob_clip = j.value("prob_clip", c.prob_clip);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad loss config: ") + e.what());
  }
  validate(c);
  return c;
}

RegLoss l_reg(const Tensor& f, const Tensor& y, const LossConfig& cfg) {
  same_shape(f, y, "l_reg");
  validate(cfg);
  const auto& fd = f.data();
  const auto& yd = y.data();
  const size_t n = fd.size();
  const double scale = cfg.reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  double l1 = 0.0, ratio = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double a = fd[i], b = yd[i];
    l1 += std::abs(a - b);
    const double den = a * b + a * a + b * b;
    if (den != 0.0) ratio += a * b / den;
  }
  RegLoss out;
  out.l1 = l1 * scale;
  out.ratio = -ratio * scale;
  std::vector<Real> target(yd);
  out.value = make_result(kScalar, {static_cast<Real>(out.l1 + out.ratio)}, {f},
                          [scale, target = std::move(target)](Node& self) {
                            const auto& fd = self.inputs[0]->data;
                            auto& df = self.inputs[0]->ensure_grad();
                            const double g = self.grad[0] * scale;
                            for (size_t i = 0; i < fd.size(); ++i) {
                              const double a = fd[i], b = target[i];
                              double d = a > b ? 1.0 : (a < b ? -1.0 : 0.0);
                              const double den = a * b + a * a + b * b;
                              if (den != 0.0) d -= b * (b * b - a * a) / (den * den);
                              df[i] += static_cast<Real>(g * d);
                            }
                          });
  return out;
}

SegLoss l_seg(const Tensor& p, const Tensor& g, const LossConfig& cfg) {
  same_shape(p, g, "l_seg");
  validate(cfg);
  const auto& pd = p.data();
  const auto& gd = g.data();
  const size_t n = pd.size();
  const double lo = cfg.prob_clip, hi = 1.0 - cfg.prob_clip, eps = cfg.dice_eps;
  const bool two_sided = cfg.focal == FocalMode::two_sided;
  double inter = 0.0, total = 0.0, focal = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (gd[i] != 0 && gd[i] != 1) throw ValidationError("l_seg: ground truth must be binary");
    const double pc = std::clamp(double(pd[i]), lo, hi);
    inter += pc * gd[i];
    total += pc + gd[i];
    const double q = (two_sided && gd[i] == 0) ? 1.0 - pc : pc;
    focal -= (1.0 - q) * (1.0 - q) * std::log(q);
  }
  SegLoss out;
  out.dice = -(2.0 * inter + eps) / (total + eps);
  out.focal = focal / static_cast<double>(n);
  std::vector<Real> truth(gd);
  out.value = make_result(kScalar, {static_cast<Real>(out.dice + out.focal)}, {p},
                          [=, truth = std::move(truth)](Node& self) {
                            const auto& pd = self.inputs[0]->data;
                            auto& dp = self.inputs[0]->ensure_grad();
                            const double g0 = self.grad[0];
                            const double den = total + eps, num = 2.0 * inter + eps;
                            for (size_t i = 0; i < pd.size(); ++i) {
                              const double raw = pd[i];
                              if (raw < lo || raw > hi) continue;
                              const double gt = truth[i];
                              double d = -(2.0 * gt * den - num) / (den * den);
                              const bool flip = two_sided && gt == 0;
                              const double q = flip ? 1.0 - raw : raw;
                              // d/dq of -(1 - q)^2 log q
                              const double dq = 2.0 * (1.0 - q) * std::log(q) - (1.0 - q) * (1.0 - q) / q;
                              d += (flip ? -dq : dq) / static_cast<double>(n);
                              dp[i] += static_cast<Real>(g0 * d);
                            }
                          });
  return out;
}

Tensor l_total(const Tensor& seg, const Tensor& reg) { return add(seg, reg); }

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
