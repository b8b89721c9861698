#include "fda/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace fda::nn {
inline namespace FDA_NN_ABI {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::atomic<uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

bool needs(const Node& n, size_t i) { return i < n.inputs.size() && n.inputs[i] && n.inputs[i]->requires_grad; }

Shape5 vec_shape(int64_t n) { return {n, 1, 1, 1, 1}; }

}  // namespace

std::string to_string(const Shape5& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.d) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

std::vector<Real>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  return grad;
}

Tensor Tensor::zeros(const Shape5& shape, bool requires_grad) { return full(shape, Real(0), requires_grad); }

Tensor Tensor::full(const Shape5& shape, Real value, bool requires_grad) {
  return from(shape, std::vector<Real>(static_cast<size_t>(shape.numel()), value), requires_grad);
}

Tensor Tensor::from(const Shape5& shape, std::vector<Real> data, bool requires_grad) {
  require(shape.n > 0 && shape.c > 0 && shape.d > 0 && shape.h > 0 && shape.w > 0,
          "tensor dims must be positive: " + to_string(shape));
  require(static_cast<int64_t>(data.size()) == shape.numel(), "tensor data length does not match shape");
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = g_next_id++;
  return Tensor(std::move(node));
}

const Shape5& Tensor::shape() const { return node_->shape; }
std::vector<Real>& Tensor::data() { return node_->data; }
const std::vector<Real>& Tensor::data() const { return node_->data; }
std::vector<Real>& Tensor::grad() { return node_->ensure_grad(); }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::zero_grad() { node_->grad.clear(); }
uint64_t Tensor::id() const { return node_->id; }

Real Tensor::item() const {
  require(numel() == 1, "item() needs a single-element tensor, got " + to_string(shape()));
  return node_->data[0];
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(const Shape5& shape, std::vector<Real> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  Tensor out = Tensor::from(shape, std::move(data));
  if (!t_grad_enabled) return out;
  bool any = false;
  for (const Tensor& t : inputs) any = any || (t.defined() && t.requires_grad());
  if (!any) return out;
  Node& n = *out.node();
  n.requires_grad = true;
  for (const Tensor& t : inputs) n.inputs.push_back(t.shared());
  n.backward = std::move(backward_fn);
  return out;
}

void backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, "backward() needs a scalar loss");
  backward(loss, {Real(1)});
}

void backward(const Tensor& out, const std::vector<Real>& cotangent) {
  require(out.defined(), "backward() on an undefined tensor");
  require(static_cast<int64_t>(cotangent.size()) == out.numel(), "cotangent length does not match output");
  if (!out.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{out.node(), 0}};
  seen.insert(out.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* in = node->inputs[next++].get();
      if (in && in->requires_grad && !seen.count(in)) {
        seen.insert(in);
        stack.push_back({in, 0});
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Node* n : order)
    if (n->backward) n->grad.assign(n->data.size(), Real(0));
  auto& g = out.node()->ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += cotangent[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// ---- convolution ----

namespace {

struct ConvGeom {
  int64_t cin, k, stride, pad;
  Shape3 in, out;
  int64_t rows() const { return cin * k * k * k; }
  int64_t cols() const { return out.numel(); }
};

// Valid output range [lo, hi) along one axis for kernel offset `kk`.
inline void valid_range(int64_t kk, const ConvGeom& g, int64_t in_len, int64_t out_len, int64_t& lo, int64_t& hi) {
  // need 0 <= o*s + kk - pad < in_len
  const int64_t off = kk - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int64_t lim = in_len - off;  // o*s < lim
  hi = lim <= 0 ? 0 : std::min(out_len, (lim + g.stride - 1) / g.stride);
  lo = std::min(lo, hi);
}

void im2col(const Real* x, const ConvGeom& g, Real* col) {
  const int64_t P = g.cols();
  std::fill(col, col + g.rows() * P, Real(0));
  int64_t r = 0;
  for (int64_t c = 0; c < g.cin; ++c)
    for (int64_t kz = 0; kz < g.k; ++kz)
      for (int64_t ky = 0; ky < g.k; ++ky)
        for (int64_t kx = 0; kx < g.k; ++kx, ++r) {
          int64_t z0, z1, y0, y1, x0, x1;
          valid_range(kz, g, g.in.d, g.out.d, z0, z1);
          valid_range(ky, g, g.in.h, g.out.h, y0, y1);
          valid_range(kx, g, g.in.w, g.out.w, x0, x1);
          Real* row = col + r * P;
          const Real* xc = x + c * g.in.numel();
          for (int64_t oz = z0; oz < z1; ++oz) {
            const int64_t iz = oz * g.stride + kz - g.pad;
            for (int64_t oy = y0; oy < y1; ++oy) {
              const int64_t iy = oy * g.stride + ky - g.pad;
              const Real* src = xc + (iz * g.in.h + iy) * g.in.w + kx - g.pad;
              Real* dst = row + (oz * g.out.h + oy) * g.out.w;
              if (g.stride == 1) {
                std::memcpy(dst + x0, src + x0, sizeof(Real) * (x1 - x0));
              } else {
                for (int64_t ox = x0; ox < x1; ++ox) dst[ox] = src[ox * g.stride];
              }
            }
          }
        }
}

void col2im(const Real* col, const ConvGeom& g, Real* x) {
  const int64_t P = g.cols();
  int64_t r = 0;
  for (int64_t c = 0; c < g.cin; ++c)
    for (int64_t kz = 0; kz < g.k; ++kz)
      for (int64_t ky = 0; ky < g.k; ++ky)
        for (int64_t kx = 0; kx < g.k; ++kx, ++r) {
          int64_t z0, z1, y0, y1, x0, x1;
          valid_range(kz, g, g.in.d, g.out.d, z0, z1);
          valid_range(ky, g, g.in.h, g.out.h, y0, y1);
          valid_range(kx, g, g.in.w, g.out.w, x0, x1);
          const Real* row = col + r * P;
          Real* xc = x + c * g.in.numel();
          for (int64_t oz = z0; oz < z1; ++oz) {
            const int64_t iz = oz * g.stride + kz - g.pad;
            for (int64_t oy = y0; oy < y1; ++oy) {
              const int64_t iy = oy * g.stride + ky - g.pad;
              Real* dst = xc + (iz * g.in.h + iy) * g.in.w + kx - g.pad;
              const Real* src = row + (oz * g.out.h + oy) * g.out.w;
              for (int64_t ox = x0; ox < x1; ++ox) dst[ox * g.stride] += src[ox];
            }
          }
        }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  const Shape5& xs = x.shape();
  const Shape5& ws = w.shape();
  require(ws.c == xs.c, "conv3d: kernel expects " + std::to_string(ws.c) + " input channels, got " +
                            std::to_string(xs.c));
  require(ws.d == ws.h && ws.h == ws.w, "conv3d: kernel must be cubic");
  require(stride >= 1 && padding >= 0, "conv3d: bad stride/padding");
  if (b.defined()) require(b.numel() == ws.n, "conv3d: bias length must equal output channels");
  ConvGeom g{xs.c, ws.d, stride, padding, xs.shape3(), {}};
  auto out_len = [&](int64_t n) { return (n + 2 * padding - g.k) / stride + 1; };
  g.out = {out_len(xs.d), out_len(xs.h), out_len(xs.w)};
  require(g.out.d > 0 && g.out.h > 0 && g.out.w > 0, "conv3d: output dims must be positive");

  const int64_t cout = ws.n, R = g.rows(), P = g.cols();
  const bool pointwise = g.k == 1 && stride == 1 && padding == 0;
  const Shape5 os{xs.n, cout, g.out.d, g.out.h, g.out.w};
  std::vector<Real> out(static_cast<size_t>(os.numel()));
  std::vector<Real> col(pointwise ? 0 : static_cast<size_t>(R * P));
  CMapMat W(w.data().data(), cout, R);
  for (int64_t n = 0; n < xs.n; ++n) {
    const Real* xn = x.data().data() + n * xs.c * xs.spatial();
    if (!pointwise) im2col(xn, g, col.data());
    CMapMat C(pointwise ? xn : col.data(), R, P);
    MapMat Y(out.data() + n * cout * P, cout, P);
    Y.noalias() = W * C;
    if (b.defined())
      for (int64_t o = 0; o < cout; ++o) Y.row(o).array() += b.data()[o];
  }

  return make_result(os, std::move(out), {x, w, b}, [g, pointwise](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    const int64_t cout = wn.shape.n, R = g.rows(), P = g.cols(), N = xn.shape.n;
    std::vector<Real> col(pointwise ? 0 : static_cast<size_t>(R * P));
    std::vector<Real> dcol(static_cast<size_t>(R * P));
    CMapMat W(wn.data.data(), cout, R);
    for (int64_t n = 0; n < N; ++n) {
      CMapMat dY(self.grad.data() + n * cout * P, cout, P);
      const Real* xp = xn.data.data() + n * xn.shape.c * xn.shape.spatial();
      if (needs(self, 1)) {
        if (!pointwise) im2col(xp, g, col.data());
        CMapMat C(pointwise ? xp : col.data(), R, P);
        MapMat dW(wn.ensure_grad().data(), cout, R);
        dW.noalias() += dY * C.transpose();
      }
      if (needs(self, 0)) {
        Real* dx = xn.ensure_grad().data() + n * xn.shape.c * xn.shape.spatial();
        if (pointwise) {
          MapMat dX(dx, R, P);
          dX.noalias() += W.transpose() * dY;
        } else {
          MapMat dC(dcol.data(), R, P);
          dC.noalias() = W.transpose() * dY;
          col2im(dcol.data(), g, dx);
        }
      }
      if (needs(self, 2)) {
        auto& db = self.inputs[2]->ensure_grad();
        for (int64_t o = 0; o < cout; ++o) {
          double s = 0.0;
          for (int64_t p = 0; p < P; ++p) s += dY(o, p);
          db[o] += static_cast<Real>(s);
        }
      }
    }
  });
}

// ---- normalization and activations ----

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape5& s = x.shape();
  require(gamma.numel() == s.c && beta.numel() == s.c, "instance_norm: affine size must equal channels");
  const int64_t S = s.spatial();
  std::vector<Real> xhat(static_cast<size_t>(s.numel()));
  std::vector<Real> inv_std(static_cast<size_t>(s.n * s.c));
  std::vector<Real> out(xhat.size());
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const Real* xp = x.data().data() + nc * S;
    double m = 0.0;
    for (int64_t i = 0; i < S; ++i) m += xp[i];
    m /= static_cast<double>(S);
    double v = 0.0;
    for (int64_t i = 0; i < S; ++i) v += (xp[i] - m) * (xp[i] - m);
    v /= static_cast<double>(S);
    const double inv = 1.0 / std::sqrt(v + eps);
    inv_std[nc] = static_cast<Real>(inv);
    const int64_t c = nc % s.c;
    const Real gm = gamma.data()[c], bt = beta.data()[c];
    for (int64_t i = 0; i < S; ++i) {
      xhat[nc * S + i] = static_cast<Real>((xp[i] - m) * inv);
      out[nc * S + i] = gm * xhat[nc * S + i] + bt;
    }
  }
  return make_result(s, std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Shape5& s = self.shape;
                       const int64_t S = s.spatial();
                       const Real* gamma = self.inputs[1]->data.data();
                       Real* dx = needs(self, 0) ? self.inputs[0]->ensure_grad().data() : nullptr;
                       Real* dg = needs(self, 1) ? self.inputs[1]->ensure_grad().data() : nullptr;
                       Real* db = needs(self, 2) ? self.inputs[2]->ensure_grad().data() : nullptr;
                       for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
                         const int64_t c = nc % s.c;
                         const Real* gy = self.grad.data() + nc * S;
                         const Real* xh = xhat.data() + nc * S;
                         double sg = 0.0, sgx = 0.0;
                         for (int64_t i = 0; i < S; ++i) {
                           sg += gy[i];
                           sgx += double(gy[i]) * xh[i];
                         }
                         if (db) db[c] += static_cast<Real>(sg);
                         if (dg) dg[c] += static_cast<Real>(sgx);
                         if (dx) {
                           const double mg = gamma[c] * sg / S, mgx = gamma[c] * sgx / S;
                           const double inv = inv_std[nc];
                           for (int64_t i = 0; i < S; ++i)
                             dx[nc * S + i] += static_cast<Real>(inv * (gamma[c] * double(gy[i]) - mg - xh[i] * mgx));
                         }
                       }
                     });
}

Tensor prelu(const Tensor& x, const Tensor& a) {
  const Shape5& s = x.shape();
  require(a.numel() == s.c, "prelu: slope count must equal channels");
  const int64_t S = s.spatial();
  std::vector<Real> out(x.data());
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const Real slope = a.data()[nc % s.c];
    for (int64_t i = nc * S; i < (nc + 1) * S; ++i)
      if (!(out[i] > 0)) out[i] *= slope;
  }
  return make_result(s, std::move(out), {x, a}, [](Node& self) {
    const Shape5& s = self.shape;
    const int64_t S = s.spatial();
    const Real* xd = self.inputs[0]->data.data();
    const Real* av = self.inputs[1]->data.data();
    Real* dx = needs(self, 0) ? self.inputs[0]->ensure_grad().data() : nullptr;
    Real* da = needs(self, 1) ? self.inputs[1]->ensure_grad().data() : nullptr;
    for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
      const int64_t c = nc % s.c;
      double acc = 0.0;
      for (int64_t i = nc * S; i < (nc + 1) * S; ++i) {
        const Real g = self.grad[i];
        if (xd[i] > 0) {
          if (dx) dx[i] += g;
        } else {
          if (dx) dx[i] += av[c] * g;
          acc += double(g) * xd[i];
        }
      }
      if (da) da[c] += static_cast<Real>(acc);
    }
  });
}

namespace {

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df_from_x_y) {
  std::vector<Real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(x.data()[i]);
  return make_result(x.shape(), std::move(out), {x}, [df_from_x_y](Node& self) {
    const auto& xd = self.inputs[0]->data;
    auto& dx = self.inputs[0]->ensure_grad();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * df_from_x_y(xd[i], self.data[i]);
  });
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary(
      x, [](Real v) { return v > 0 ? v : Real(0); }, [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real(1) - y * y; });
}

// ---- pooling, resampling, channel ops ----

Tensor global_avg_pool(const Tensor& x) {
  const Shape5& s = x.shape();
  const int64_t S = s.spatial();
  std::vector<Real> out(static_cast<size_t>(s.n * s.c));
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    double acc = 0.0;
    for (int64_t i = nc * S; i < (nc + 1) * S; ++i) acc += x.data()[i];
    out[nc] = static_cast<Real>(acc / static_cast<double>(S));
  }
  return make_result({s.n, s.c, 1, 1, 1}, std::move(out), {x}, [](Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    const int64_t S = self.inputs[0]->shape.spatial();
    for (size_t nc = 0; nc < self.grad.size(); ++nc) {
      const Real g = self.grad[nc] / static_cast<Real>(S);
      for (int64_t i = 0; i < S; ++i) dx[nc * S + i] += g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape5& xs = x.shape();
  const Shape5& ws = w.shape();
  require(xs.spatial() == 1 && ws.spatial() == 1, "linear: operands must have unit spatial extent");
  require(ws.c == xs.c, "linear: weight expects " + std::to_string(ws.c) + " features, got " + std::to_string(xs.c));
  if (b.defined()) require(b.numel() == ws.n, "linear: bias length must equal output features");
  const int64_t N = xs.n, fin = xs.c, fout = ws.n;
  std::vector<Real> out(static_cast<size_t>(N * fout));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < fout; ++o) {
      double acc = b.defined() ? b.data()[o] : 0.0;
      for (int64_t i = 0; i < fin; ++i) acc += double(w.data()[o * fin + i]) * x.data()[n * fin + i];
      out[n * fout + o] = static_cast<Real>(acc);
    }
  return make_result({N, fout, 1, 1, 1}, std::move(out), {x, w, b}, [N, fin, fout](Node& self) {
    const Real* xd = self.inputs[0]->data.data();
    const Real* wd = self.inputs[1]->data.data();
    Real* dx = needs(self, 0) ? self.inputs[0]->ensure_grad().data() : nullptr;
    Real* dw = needs(self, 1) ? self.inputs[1]->ensure_grad().data() : nullptr;
    Real* db = needs(self, 2) ? self.inputs[2]->ensure_grad().data() : nullptr;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < fout; ++o) {
        const Real g = self.grad[n * fout + o];
        if (db) db[o] += g;
        for (int64_t i = 0; i < fin; ++i) {
          if (dw) dw[o * fin + i] += g * xd[n * fin + i];
          if (dx) dx[n * fin + i] += g * wd[o * fin + i];
        }
      }
  });
}

int64_t cse_hidden(int64_t channels, int64_t r) {
  require(channels >= 1 && r >= 1, "cse: channels and reduction must be >= 1");
  return std::max<int64_t>(1, (channels + r - 1) / r);
}

Tensor cse_block(const Tensor& u, const Tensor& w1, const Tensor& w2) {
  const Tensor z = global_avg_pool(u);
  const Tensor gate = sigmoid(linear(relu(linear(z, w1)), w2));
  return scale_broadcast(u, gate);
}

Tensor maxpool3d(const Tensor& x, int k, int stride) {
  const Shape5& s = x.shape();
  require(k >= 1 && stride >= 1, "maxpool3d: bad kernel/stride");
  const Shape5 os{s.n, s.c, (s.d - k) / stride + 1, (s.h - k) / stride + 1, (s.w - k) / stride + 1};
  require(s.d >= k && s.h >= k && s.w >= k, "maxpool3d: input smaller than kernel");
  std::vector<Real> out(static_cast<size_t>(os.numel()));
  std::vector<int64_t> arg(out.size());
  int64_t o = 0;
  for (int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const int64_t base = nc * s.spatial();
    for (int64_t z = 0; z < os.d; ++z)
      for (int64_t y = 0; y < os.h; ++y)
        for (int64_t xx = 0; xx < os.w; ++xx, ++o) {
          int64_t best = -1;
          for (int64_t a = 0; a < k; ++a)
            for (int64_t bb = 0; bb < k; ++bb)
              for (int64_t c = 0; c < k; ++c) {
                const int64_t i = base + ((z * stride + a) * s.h + y * stride + bb) * s.w + xx * stride + c;
                if (best < 0 || x.data()[i] > x.data()[best]) best = i;
              }
          arg[o] = best;
          out[o] = x.data()[best];
        }
  }
  return make_result(os, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += self.grad[i];
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  const Shape5& s = x.shape();
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int64_t f = factor;
  const Shape5 os{s.n, s.c, s.d * f, s.h * f, s.w * f};
  std::vector<Real> out(static_cast<size_t>(os.numel()));
  int64_t o = 0;
  for (int64_t nc = 0; nc < s.n * s.c; ++nc)
    for (int64_t z = 0; z < os.d; ++z)
      for (int64_t y = 0; y < os.h; ++y)
        for (int64_t xx = 0; xx < os.w; ++xx, ++o)
          out[o] = x.data()[nc * s.spatial() + ((z / f) * s.h + y / f) * s.w + xx / f];
  return make_result(os, std::move(out), {x}, [f](Node& self) {
    const Shape5& s = self.inputs[0]->shape;
    const Shape5& os = self.shape;
    auto& dx = self.inputs[0]->ensure_grad();
    int64_t o = 0;
    for (int64_t nc = 0; nc < s.n * s.c; ++nc)
      for (int64_t z = 0; z < os.d; ++z)
        for (int64_t y = 0; y < os.h; ++y)
          for (int64_t xx = 0; xx < os.w; ++xx, ++o)
            dx[nc * s.spatial() + ((z / f) * s.h + y / f) * s.w + xx / f] += self.grad[o];
  });
}

Tensor add(const Tensor& x, const Tensor& y) {
  require(x.shape() == y.shape(), "add: shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  std::vector<Real> out(x.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] += y.data()[i];
  return make_result(x.shape(), std::move(out), {x, y}, [](Node& self) {
    for (size_t k = 0; k < 2; ++k)
      if (needs(self, k)) {
        auto& d = self.inputs[k]->ensure_grad();
        for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
      }
  });
}

Tensor mul(const Tensor& x, const Tensor& y) {
  require(x.shape() == y.shape(), "mul: shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  std::vector<Real> out(x.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= y.data()[i];
  return make_result(x.shape(), std::move(out), {x, y}, [](Node& self) {
    for (size_t k = 0; k < 2; ++k)
      if (needs(self, k)) {
        auto& d = self.inputs[k]->ensure_grad();
        const auto& other = self.inputs[1 - k]->data;
        for (size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * other[i];
      }
  });
}

Tensor concat_channels(const Tensor& x, const Tensor& y) {
  const Shape5& a = x.shape();
  const Shape5& b = y.shape();
  require(a.n == b.n && a.shape3() == b.shape3(), "concat_channels: batch/spatial mismatch");
  const int64_t S = a.spatial();
  const Shape5 os{a.n, a.c + b.c, a.d, a.h, a.w};
  std::vector<Real> out(static_cast<size_t>(os.numel()));
  for (int64_t n = 0; n < a.n; ++n) {
    std::copy_n(x.data().begin() + n * a.c * S, a.c * S, out.begin() + n * os.c * S);
    std::copy_n(y.data().begin() + n * b.c * S, b.c * S, out.begin() + (n * os.c + a.c) * S);
  }
  return make_result(os, std::move(out), {x, y}, [](Node& self) {
    const int64_t ca = self.inputs[0]->shape.c, cb = self.inputs[1]->shape.c;
    const int64_t S = self.shape.spatial(), C = self.shape.c;
    for (int64_t n = 0; n < self.shape.n; ++n) {
      if (needs(self, 0)) {
        Real* d = self.inputs[0]->ensure_grad().data() + n * ca * S;
        const Real* g = self.grad.data() + n * C * S;
        for (int64_t i = 0; i < ca * S; ++i) d[i] += g[i];
      }
      if (needs(self, 1)) {
        Real* d = self.inputs[1]->ensure_grad().data() + n * cb * S;
        const Real* g = self.grad.data() + (n * C + ca) * S;
        for (int64_t i = 0; i < cb * S; ++i) d[i] += g[i];
      }
    }
  });
}

Tensor scale_broadcast(const Tensor& x, const Tensor& s) {
  const Shape5& a = x.shape();
  require(s.shape() == Shape5{a.n, a.c, 1, 1, 1}, "scale_broadcast: scale must be (N, C, 1, 1, 1)");
  const int64_t S = a.spatial();
  std::vector<Real> out(x.data());
  for (int64_t nc = 0; nc < a.n * a.c; ++nc)
    for (int64_t i = nc * S; i < (nc + 1) * S; ++i) out[i] *= s.data()[nc];
  return make_result(a, std::move(out), {x, s}, [](Node& self) {
    const int64_t S = self.shape.spatial();
    const Real* xd = self.inputs[0]->data.data();
    const Real* sd = self.inputs[1]->data.data();
    Real* dx = needs(self, 0) ? self.inputs[0]->ensure_grad().data() : nullptr;
    Real* ds = needs(self, 1) ? self.inputs[1]->ensure_grad().data() : nullptr;
    for (int64_t nc = 0; nc < self.shape.n * self.shape.c; ++nc) {
      double acc = 0.0;
      for (int64_t i = nc * S; i < (nc + 1) * S; ++i) {
        if (dx) dx[i] += self.grad[i] * sd[nc];
        acc += double(self.grad[i]) * xd[i];
      }
      if (ds) ds[nc] += static_cast<Real>(acc);
    }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  return make_result(vec_shape(1), {static_cast<Real>(acc)}, {x}, [](Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (auto& v : dx) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  return make_result(vec_shape(1), {static_cast<Real>(acc / n)}, {x}, [n](Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    const Real g = static_cast<Real>(self.grad[0] / n);
    for (auto& v : dx) v += g;
  });
}

Tensor reshape(const Tensor& x, const Shape5& shape) {
  require(shape.numel() == x.numel(), "reshape: element count mismatch");
  return make_result(shape, x.data(), {x}, [](Node& self) {
    auto& dx = self.inputs[0]->ensure_grad();
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

// ---- parameters ----

Tensor& ParamStore::add(const std::string& name, const std::string& group, Tensor t) {
  require(!contains(name), "duplicate parameter name: " + name);
  t.node()->requires_grad = true;
  index_[name] = entries_.size();
  entries_.push_back({name, group, std::move(t)});
  return entries_.back().tensor;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter: " + name);
  return entries_[it->second].tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter: " + name);
  return entries_[it->second].tensor;
}

int64_t ParamStore::numel() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
