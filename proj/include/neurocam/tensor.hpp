#pragma once

// Dense f64 tensors with reverse-mode automatic differentiation.
// Graphs are rebuilt on every forward pass; backward() walks the graph in
// reverse topological order and accumulates gradients on every node that
// requires them. Just enough primitives for the conformer model and for
// gradient-based explanation.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace neurocam {

// Counter-based RNG: identical (seed, counter) produces identical draws on
// any platform. Cheap to fork per trial/channel for parallel generation.
struct RngState {
  std::uint64_t seed{0};
  std::uint64_t counter{0};

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // standard normal, Box-Muller
  RngState fork(std::uint64_t stream) const;  // independent substream
};

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;      // sized lazily during backward
  bool requires_grad{false};
  bool grad_live{false};         // grad holds the result of a finished backward
  bool backward_called{false};   // set on the node backward() was invoked on
  std::string op;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // propagates this->grad to parents
  std::shared_ptr<void> payload;                 // op-specific extras (dropout mask)

  void ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t size() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  Tensor& set_requires_grad(bool b);

  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws when no backward has run
  void zero_grad();

  const std::string& op() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  detail::TensorNode& n();
  const detail::TensorNode& n() const;
  std::shared_ptr<detail::TensorNode> node_;
};

// --- graph execution -------------------------------------------------------

// Reverse topological gradient accumulation from a scalar loss. Errors when
// the loss is not scalar, when backward() already ran on this node, or when a
// reachable node still carries a live gradient (no silent accumulation).
void backward(const Tensor& loss);

// Switches ELU/GELU backward rules to the guided variant (gradient passes only
// where the forward pre-activation and the incoming gradient are both
// positive) for the lifetime of the guard.
class GuidedBackwardGuard {
 public:
  GuidedBackwardGuard();
  ~GuidedBackwardGuard();
  GuidedBackwardGuard(const GuidedBackwardGuard&) = delete;
  GuidedBackwardGuard& operator=(const GuidedBackwardGuard&) = delete;
};
bool guided_backward_active();

// Worker bound for the heavy kernels (conv/matmul). Results are
// bit-deterministic regardless of the count (pure element partitioning).
void set_num_threads(int n);
int num_threads();

// --- primitives -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor add_bias(const Tensor& x, const Tensor& bias);   // bias over last axis
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);  // x (N,C,H,W), bias (C)

// (..., M, K) @ (..., K, N) with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// Valid cross-correlation. input (N,C,H,W), kernel (K,C/groups,kh,kw).
Tensor conv2d_valid(const Tensor& input, const Tensor& kernel,
                    std::size_t stride_h = 1, std::size_t stride_w = 1,
                    std::size_t groups = 1);

Tensor avg_pool2d(const Tensor& x, std::size_t pool_h, std::size_t pool_w,
                  std::size_t stride_h, std::size_t stride_w);

// Running statistics owned by the caller; updated in train mode only.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum{0.1};
  double eps{1e-5};
};
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);  // over last axis

Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor gelu(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);

// Train mode draws a keep mask from rng (recorded on the node, retrievable via
// dropout_mask) and scales by 1/(1-p); eval mode is the identity.
Tensor dropout(const Tensor& x, double p, RngState& rng, bool training);
const std::vector<std::uint8_t>& dropout_mask(const Tensor& dropout_result);

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape);
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor mean_all(const Tensor& x);      // scalar
Tensor pick(const Tensor& x, std::size_t flat_index);  // scalar view of one element

// Mean over the batch of -log softmax(logits)[target]. logits (N,C).
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& targets);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // all (D,D) / (D)
};
// Scaled dot-product self-attention, x (N,T,D), D divisible by heads.
Tensor multihead_attention(const Tensor& x, std::size_t heads, const AttentionParams& p);

// --- verification utility ----------------------------------------------------

// Max over coordinates of |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) using
// central differences. fn must return a scalar tensor.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, Tensor input,
                  double eps = 1e-5);

}  // namespace neurocam
