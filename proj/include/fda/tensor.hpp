#pragma once

// Reverse-mode differentiable 5-axis tensors (N, C, D, H, W).

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fda/common.hpp"

// The scalar type is fixed at build time; the two builds live in distinct inline
// namespaces so that both can be linked into one program.
#ifdef FDA_DOUBLE
#define FDA_NN_ABI f64
#else
#define FDA_NN_ABI f32
#endif

namespace fda::nn {
inline namespace FDA_NN_ABI {

#ifdef FDA_DOUBLE
using Real = double;
#else
using Real = float;
#endif

struct Shape5 {
  int64_t n = 1;
  int64_t c = 1;
  int64_t d = 1;
  int64_t h = 1;
  int64_t w = 1;

  constexpr int64_t spatial() const { return d * h * w; }
  constexpr int64_t numel() const { return n * c * spatial(); }
  constexpr Shape3 shape3() const { return {d, h, w}; }
  friend constexpr bool operator==(const Shape5&, const Shape5&) = default;
};

std::string to_string(const Shape5& s);

struct Node;

/// Handle to a tape node. Copies share storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape5& shape, bool requires_grad = false);
  static Tensor full(const Shape5& shape, Real value, bool requires_grad = false);
  static Tensor from(const Shape5& shape, std::vector<Real> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape5& shape() const;
  int64_t numel() const { return shape().numel(); }
  std::vector<Real>& data();
  const std::vector<Real>& data() const;
  /// Gradient buffer; allocated (zero-filled) on first access.
  std::vector<Real>& grad();
  bool has_grad() const;
  bool requires_grad() const;
  void zero_grad();
  uint64_t id() const;
  /// Value of a single-element tensor.
  Real item() const;
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape5 shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  /// Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
  uint64_t id = 0;

  std::vector<Real>& ensure_grad();
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// Builds an op result. The closure is kept only when recording is enabled and
/// some input requires a gradient.
Tensor make_result(const Shape5& shape, std::vector<Real> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

/// Populates d(loss)/d(leaf) for every leaf reachable from `loss`. Leaf grads
/// accumulate across calls; intermediate grads are reset on each call.
void backward(const Tensor& loss);
/// Vector-Jacobian product: seeds `out` with `cotangent` instead of 1.
void backward(const Tensor& out, const std::vector<Real>& cotangent);

// ---- primitives ----

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int padding = 1);
/// Per (n, c) standardization with eps = 1e-5 followed by per-channel affine.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor prelu(const Tensor& x, const Tensor& a);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// (N, C, D, H, W) -> (N, C, 1, 1, 1).
Tensor global_avg_pool(const Tensor& x);
/// x: (N, Fin, 1, 1, 1), w: (Fout, Fin, 1, 1, 1), b: (Fout) or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});
/// Channel attention: U * sigmoid(W2 relu(W1 gap(U))).
Tensor cse_block(const Tensor& u, const Tensor& w1, const Tensor& w2);
/// Number of hidden units for `channels` features at reduction `r`.
int64_t cse_hidden(int64_t channels, int64_t r);
Tensor maxpool3d(const Tensor& x, int k = 2, int stride = 2);
Tensor upsample_nearest(const Tensor& x, int factor = 2);
Tensor add(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);
Tensor concat_channels(const Tensor& x, const Tensor& y);
/// x: (N, C, D, H, W) scaled by s: (N, C, 1, 1, 1).
Tensor scale_broadcast(const Tensor& x, const Tensor& s);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape5& shape);

/// Named parameters in insertion order, each tagged with a group.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor tensor;
  };

  Tensor& add(const std::string& name, const std::string& group, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }
  int64_t numel() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace FDA_NN_ABI
}  // namespace fda::nn
