#include "neurocam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace neurocam {

// --- rng ---------------------------------------------------------------

namespace {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngState::next_u64() {
  ++counter;
  return mix64(seed + 0x9E3779B97F4A7C15ULL * counter);
}

double RngState::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngState::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

RngState RngState::fork(std::uint64_t stream) const {
  return RngState{mix64(seed ^ (0xD2B74407B1CE6E93ULL * (stream + 1))), 0};
}

// --- node / tensor handle ------------------------------------------------

namespace detail {

void TensorNode::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

}  // namespace detail

using detail::TensorNode;

namespace {

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::shared_ptr<TensorNode> make_node(std::vector<std::size_t> shape, std::string op,
                                      std::vector<std::shared_ptr<TensorNode>> parents) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values.assign(numel(n->shape), 0.0);
  n->op = std::move(op);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p && p->requires_grad) n->requires_grad = true;
  }
  return n;
}

void require_defined(const Tensor& t, const char* who) {
  if (!t.defined()) throw std::invalid_argument(std::string(who) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

int g_threads = 0;

int effective_threads() {
  if (g_threads > 0) return g_threads;
  if (const char* env = std::getenv("NEUROCAM_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

thread_local bool g_guided = false;

}  // namespace

void set_num_threads(int n) { g_threads = n; }
int num_threads() { return effective_threads(); }

GuidedBackwardGuard::GuidedBackwardGuard() { g_guided = true; }
GuidedBackwardGuard::~GuidedBackwardGuard() { g_guided = false; }
bool guided_backward_active() { return g_guided; }

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto n = make_node(std::move(shape), "leaf", {});
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
  if (numel(shape) != values.size())
    throw std::invalid_argument("from_values: size does not match shape");
  auto n = make_node(std::move(shape), "leaf", {});
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

TensorNode& Tensor::n() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}
const TensorNode& Tensor::n() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}

const std::vector<std::size_t>& Tensor::shape() const { return n().shape; }
std::size_t Tensor::size() const { return n().values.size(); }
std::vector<double>& Tensor::values() { return n().values; }
const std::vector<double>& Tensor::values() const { return n().values; }

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item(): tensor is not scalar");
  return n().values[0];
}

bool Tensor::requires_grad() const { return n().requires_grad; }
Tensor& Tensor::set_requires_grad(bool b) {
  n().requires_grad = b;
  return *this;
}

bool Tensor::has_grad() const { return defined() && node_->grad_live; }
const std::vector<double>& Tensor::grad() const {
  if (!n().grad_live) throw std::logic_error("grad(): no backward pass has produced a gradient");
  return n().grad;
}
void Tensor::zero_grad() {
  auto& nd = n();
  nd.grad.assign(nd.values.size(), 0.0);
  nd.grad_live = false;
  nd.backward_called = false;
}

const std::string& Tensor::op() const { return n().op; }

// --- backward ---------------------------------------------------------------

namespace {

std::vector<TensorNode*> topo_order(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next].get();
      ++next;
      if (p && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children; reverse for backprop
}

void run_backward(TensorNode* root) {
  if (root->values.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (root->backward_called) throw std::logic_error("backward: already called on this node");
  auto order = topo_order(root);
  for (TensorNode* nd : order) {
    if (nd->requires_grad && nd->grad_live)
      throw std::logic_error("backward: node '" + nd->op +
                             "' carries a gradient from a previous pass; call zero_grad first");
  }
  for (TensorNode* nd : order) {
    if (nd->requires_grad) nd->grad.assign(nd->values.size(), 0.0);
  }
  root->backward_called = true;
  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* nd = *it;
    if (nd->requires_grad && nd->backward_fn) nd->backward_fn(*nd);
  }
  for (TensorNode* nd : order) {
    if (nd->requires_grad) nd->grad_live = true;
  }
}

}  // namespace

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  run_backward(loss.node().get());
}

// --- elementwise ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape(a, b, "add");
  auto out = make_node(a.shape(), "add", {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = av[i] + bv[i];
  if (out->requires_grad) {
    out->backward_fn = [](TensorNode& nd) {
      for (int k = 0; k < 2; ++k) {
        auto& p = nd.parents[k];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) p->grad[i] += nd.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape(a, b, "sub");
  auto out = make_node(a.shape(), "sub", {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = av[i] - bv[i];
  if (out->requires_grad) {
    out->backward_fn = [](TensorNode& nd) {
      auto& pa = nd.parents[0];
      auto& pb = nd.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) pa->grad[i] += nd.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) pb->grad[i] -= nd.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape(a, b, "mul");
  auto out = make_node(a.shape(), "mul", {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = av[i] * bv[i];
  if (out->requires_grad) {
    out->backward_fn = [](TensorNode& nd) {
      auto& pa = nd.parents[0];
      auto& pb = nd.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) pa->grad[i] += nd.grad[i] * pb->values[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) pb->grad[i] += nd.grad[i] * pa->values[i];
      }
    };
  }
  return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
  require_defined(a, "scale");
  auto out = make_node(a.shape(), "scale", {a.node()});
  const auto& av = a.values();
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = av[i] * c;
  if (out->requires_grad) {
    out->backward_fn = [c](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      for (std::size_t i = 0; i < nd.grad.size(); ++i) p->grad[i] += nd.grad[i] * c;
    };
  }
  return Tensor(out);
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_defined(bias, "add_bias");
  if (bias.ndim() != 1 || x.ndim() < 1 || x.shape().back() != bias.dim(0))
    throw std::invalid_argument("add_bias: bias must match last axis");
  const std::size_t c = bias.dim(0);
  auto out = make_node(x.shape(), "add_bias", {x.node(), bias.node()});
  const auto& xv = x.values();
  const auto& bv = bias.values();
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = xv[i] + bv[i % c];
  if (out->requires_grad) {
    out->backward_fn = [c](TensorNode& nd) {
      auto& px = nd.parents[0];
      auto& pb = nd.parents[1];
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) px->grad[i] += nd.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) pb->grad[i % c] += nd.grad[i];
      }
    };
  }
  return Tensor(out);
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_channel_bias");
  require_defined(bias, "add_channel_bias");
  if (x.ndim() != 4 || bias.ndim() != 1 || bias.dim(0) != x.dim(1))
    throw std::invalid_argument("add_channel_bias: expects x (N,C,H,W), bias (C)");
  const std::size_t C = x.dim(1), HW = x.dim(2) * x.dim(3);
  auto out = make_node(x.shape(), "add_channel_bias", {x.node(), bias.node()});
  const auto& xv = x.values();
  const auto& bv = bias.values();
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = xv[i] + bv[(i / HW) % C];
  if (out->requires_grad) {
    out->backward_fn = [C, HW](TensorNode& nd) {
      auto& px = nd.parents[0];
      auto& pb = nd.parents[1];
      if (px->requires_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) px->grad[i] += nd.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) pb->grad[(i / HW) % C] += nd.grad[i];
      }
    };
  }
  return Tensor(out);
}

// --- matmul -------------------------------------------------------------------

namespace {

// C(M,N) += A(M,K) @ B(K,N)
void mm_acc(const double* a, const double* b, double* c, std::size_t M, std::size_t K,
            std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    double* crow = c + i * N;
    const double* arow = a + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = arow[k];
      const double* brow = b + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA(M,K) += G(M,N) @ B(K,N)^T
void mm_gbt_acc(const double* g, const double* b, double* da, std::size_t M, std::size_t K,
                std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* grow = g + i * N;
    double* darow = da + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double* brow = b + k * N;
      double acc = 0.0;
      for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
      darow[k] += acc;
    }
  }
}

// dB(K,N) += A(M,K)^T @ G(M,N)
void mm_atg_acc(const double* a, const double* g, double* db, std::size_t M, std::size_t K,
                std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* arow = a + i * K;
    const double* grow = g + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      double* dbrow = db + k * N;
      for (std::size_t j = 0; j < N; ++j) dbrow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.ndim() < 2 || b.ndim() < 2 || a.ndim() != b.ndim())
    throw std::invalid_argument("matmul: operands need matching rank >= 2");
  const std::size_t nd = a.ndim();
  for (std::size_t i = 0; i + 2 < nd; ++i)
    if (a.dim(i) != b.dim(i)) throw std::invalid_argument("matmul: leading dims mismatch");
  const std::size_t M = a.dim(nd - 2), K = a.dim(nd - 1);
  if (b.dim(nd - 2) != K) throw std::invalid_argument("matmul: inner dims mismatch");
  const std::size_t N = b.dim(nd - 1);
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < nd; ++i) batch *= a.dim(i);

  std::vector<std::size_t> oshape(a.shape());
  oshape[nd - 1] = N;
  auto out = make_node(std::move(oshape), "matmul", {a.node(), b.node()});
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* cp = out->values.data();
  const std::size_t asz = M * K, bsz = K * N, csz = M * N;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (batch > 1 && csz * batch > 16384)
#endif
  for (long long bi = 0; bi < static_cast<long long>(batch); ++bi)
    mm_acc(ap + bi * asz, bp + bi * bsz, cp + bi * csz, M, K, N);

  if (out->requires_grad) {
    out->backward_fn = [M, K, N, batch, asz, bsz, csz](TensorNode& nd) {
      auto& pa = nd.parents[0];
      auto& pb = nd.parents[1];
      const double* g = nd.grad.data();
      if (pa->requires_grad) {
        pa->ensure_grad();
        double* da = pa->grad.data();
        const double* bp2 = pb->values.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (batch > 1 && asz * batch > 16384)
#endif
        for (long long bi = 0; bi < static_cast<long long>(batch); ++bi)
          mm_gbt_acc(g + bi * csz, bp2 + bi * bsz, da + bi * asz, M, K, N);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        double* db = pb->grad.data();
        const double* ap2 = pa->values.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (batch > 1 && bsz * batch > 16384)
#endif
        for (long long bi = 0; bi < static_cast<long long>(batch); ++bi)
          mm_atg_acc(ap2 + bi * asz, g + bi * csz, db + bi * bsz, M, K, N);
      }
    };
  }
  return Tensor(out);
}

// --- convolution ----------------------------------------------------------------

Tensor conv2d_valid(const Tensor& input, const Tensor& kernel, std::size_t stride_h,
                    std::size_t stride_w, std::size_t groups) {
  require_defined(input, "conv2d_valid");
  require_defined(kernel, "conv2d_valid");
  if (input.ndim() != 4 || kernel.ndim() != 4)
    throw std::invalid_argument("conv2d_valid: expects input (N,C,H,W), kernel (K,Cg,kh,kw)");
  if (stride_h < 1 || stride_w < 1) throw std::invalid_argument("conv2d_valid: stride must be >= 1");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t K = kernel.dim(0), Cg = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (groups < 1 || C % groups != 0 || K % groups != 0 || Cg != C / groups)
    throw std::invalid_argument("conv2d_valid: channel/group mismatch");
  if (kh > H || kw > W) throw std::invalid_argument("conv2d_valid: kernel larger than input");
  const std::size_t Ho = (H - kh) / stride_h + 1;
  const std::size_t Wo = (W - kw) / stride_w + 1;
  const std::size_t Kg = K / groups;

  auto out = make_node({N, K, Ho, Wo}, "conv2d", {input.node(), kernel.node()});
  const double* in = input.values().data();
  const double* ker = kernel.values().data();
  double* o = out->values.data();
  const std::size_t in_chw = C * H * W, in_hw = H * W;
  const std::size_t out_khw = K * Ho * Wo, out_hw = Ho * Wo;
  const std::size_t ker_cs = Cg * kh * kw;

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) num_threads(effective_threads()) if (N * K * out_hw > 4096)
#endif
  for (long long n = 0; n < static_cast<long long>(N); ++n) {
    for (long long ko = 0; ko < static_cast<long long>(K); ++ko) {
      const std::size_t g = ko / Kg;
      double* orow0 = o + n * out_khw + ko * out_hw;
      for (std::size_t ci = 0; ci < Cg; ++ci) {
        const std::size_t c = g * Cg + ci;
        const double* iplane = in + n * in_chw + c * in_hw;
        const double* kplane = ker + ko * ker_cs + ci * kh * kw;
        for (std::size_t i = 0; i < kh; ++i) {
          for (std::size_t j = 0; j < kw; ++j) {
            const double kv = kplane[i * kw + j];
            if (kv == 0.0) continue;
            for (std::size_t ho = 0; ho < Ho; ++ho) {
              const double* irow = iplane + (ho * stride_h + i) * W + j;
              double* orow = orow0 + ho * Wo;
              if (stride_w == 1) {
                for (std::size_t wo = 0; wo < Wo; ++wo) orow[wo] += kv * irow[wo];
              } else {
                for (std::size_t wo = 0; wo < Wo; ++wo) orow[wo] += kv * irow[wo * stride_w];
              }
            }
          }
        }
      }
    }
  }

  if (out->requires_grad) {
    const auto sh = stride_h, sw = stride_w;
    out->backward_fn = [N, C, H, W, K, Cg, kh, kw, Ho, Wo, Kg, sh, sw, in_chw, in_hw, out_khw,
                        out_hw, ker_cs](TensorNode& nd) {
      auto& pin = nd.parents[0];
      auto& pker = nd.parents[1];
      const double* g = nd.grad.data();
      const double* in = pin->values.data();
      const double* ker = pker->values.data();
      if (pin->requires_grad) {
        pin->ensure_grad();
        double* din = pin->grad.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (N > 1 && N * K * out_hw > 4096)
#endif
        for (long long n = 0; n < static_cast<long long>(N); ++n) {
          for (std::size_t ko = 0; ko < K; ++ko) {
            const std::size_t grp = ko / Kg;
            const double* grow0 = g + n * out_khw + ko * out_hw;
            for (std::size_t ci = 0; ci < Cg; ++ci) {
              const std::size_t c = grp * Cg + ci;
              double* dplane = din + n * in_chw + c * in_hw;
              const double* kplane = ker + ko * ker_cs + ci * kh * kw;
              for (std::size_t i = 0; i < kh; ++i) {
                for (std::size_t j = 0; j < kw; ++j) {
                  const double kv = kplane[i * kw + j];
                  if (kv == 0.0) continue;
                  for (std::size_t ho = 0; ho < Ho; ++ho) {
                    double* drow = dplane + (ho * sh + i) * W + j;
                    const double* grow = grow0 + ho * Wo;
                    if (sw == 1) {
                      for (std::size_t wo = 0; wo < Wo; ++wo) drow[wo] += kv * grow[wo];
                    } else {
                      for (std::size_t wo = 0; wo < Wo; ++wo) drow[wo * sw] += kv * grow[wo];
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (pker->requires_grad) {
        pker->ensure_grad();
        double* dker = pker->grad.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads()) if (K > 1 && N * K * out_hw > 4096)
#endif
        for (long long ko = 0; ko < static_cast<long long>(K); ++ko) {
          const std::size_t grp = ko / Kg;
          for (std::size_t ci = 0; ci < Cg; ++ci) {
            const std::size_t c = grp * Cg + ci;
            double* dkplane = dker + ko * ker_cs + ci * kh * kw;
            for (std::size_t i = 0; i < kh; ++i) {
              for (std::size_t j = 0; j < kw; ++j) {
                double acc = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                  const double* iplane = in + n * in_chw + c * in_hw;
                  const double* grow0 = g + n * out_khw + ko * out_hw;
                  for (std::size_t ho = 0; ho < Ho; ++ho) {
                    const double* irow = iplane + (ho * sh + i) * W + j;
                    const double* grow = grow0 + ho * Wo;
                    if (sw == 1) {
                      for (std::size_t wo = 0; wo < Wo; ++wo) acc += irow[wo] * grow[wo];
                    } else {
                      for (std::size_t wo = 0; wo < Wo; ++wo) acc += irow[wo * sw] * grow[wo];
                    }
                  }
                }
                dkplane[i * kw + j] += acc;
              }
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

// --- pooling ----------------------------------------------------------------

Tensor avg_pool2d(const Tensor& x, std::size_t pool_h, std::size_t pool_w, std::size_t stride_h,
                  std::size_t stride_w) {
  require_defined(x, "avg_pool2d");
  if (x.ndim() != 4) throw std::invalid_argument("avg_pool2d: expects (N,C,H,W)");
  if (pool_h < 1 || pool_w < 1 || stride_h < 1 || stride_w < 1)
    throw std::invalid_argument("avg_pool2d: window/stride must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (pool_h > H || pool_w > W) throw std::invalid_argument("avg_pool2d: window larger than input");
  const std::size_t Ho = (H - pool_h) / stride_h + 1;
  const std::size_t Wo = (W - pool_w) / stride_w + 1;
  auto out = make_node({N, C, Ho, Wo}, "avg_pool2d", {x.node()});
  const double inv = 1.0 / static_cast<double>(pool_h * pool_w);
  const double* in = x.values().data();
  double* o = out->values.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* plane = in + nc * H * W;
    double* oplane = o + nc * Ho * Wo;
    for (std::size_t ho = 0; ho < Ho; ++ho) {
      for (std::size_t wo = 0; wo < Wo; ++wo) {
        double acc = 0.0;
        for (std::size_t i = 0; i < pool_h; ++i) {
          const double* row = plane + (ho * stride_h + i) * W + wo * stride_w;
          for (std::size_t j = 0; j < pool_w; ++j) acc += row[j];
        }
        oplane[ho * Wo + wo] = acc * inv;
      }
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [N, C, H, W, Ho, Wo, pool_h, pool_w, stride_h, stride_w,
                        inv](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      double* din = p->grad.data();
      const double* g = nd.grad.data();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        double* dplane = din + nc * H * W;
        const double* gplane = g + nc * Ho * Wo;
        for (std::size_t ho = 0; ho < Ho; ++ho) {
          for (std::size_t wo = 0; wo < Wo; ++wo) {
            const double gv = gplane[ho * Wo + wo] * inv;
            for (std::size_t i = 0; i < pool_h; ++i) {
              double* row = dplane + (ho * stride_h + i) * W + wo * stride_w;
              for (std::size_t j = 0; j < pool_w; ++j) row[j] += gv;
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

// --- normalisation ------------------------------------------------------------

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training) {
  require_defined(x, "batch_norm2d");
  if (x.ndim() != 4) throw std::invalid_argument("batch_norm2d: expects (N,C,H,W)");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.size() != C || beta.size() != C)
    throw std::invalid_argument("batch_norm2d: gamma/beta size mismatch");
  if (state.running_mean.size() != C) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }
  const double eps = state.eps;
  const std::size_t m = N * HW;

  auto mean = std::make_shared<std::vector<double>>(C, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(C, 0.0);
  const double* in = x.values().data();
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* row = in + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += row[i];
      }
      (*mean)[c] = s / static_cast<double>(m);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      const double mu = (*mean)[c];
      for (std::size_t n = 0; n < N; ++n) {
        const double* row = in + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = row[i] - mu;
          s += d * d;
        }
      }
      const double var = s / static_cast<double>(m);
      (*inv_std)[c] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? s / static_cast<double>(m - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] +
                              state.momentum * (*mean)[c];
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                             state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*inv_std)[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }

  auto out = make_node(x.shape(), "batch_norm2d", {x.node(), gamma.node(), beta.node()});
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  double* o = out->values.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double mu = (*mean)[c], is = (*inv_std)[c], ga = gv[c], be = bv[c];
      const double* row = in + (n * C + c) * HW;
      double* orow = o + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) orow[i] = ga * (row[i] - mu) * is + be;
    }
  }

  if (out->requires_grad) {
    out->backward_fn = [N, C, HW, m, mean, inv_std, training](TensorNode& nd) {
      auto& px = nd.parents[0];
      auto& pg = nd.parents[1];
      auto& pb = nd.parents[2];
      const double* in = px->values.data();
      const double* gval = pg->values.data();
      const double* g = nd.grad.data();
      // per-channel sums of g and g*xhat
      std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          const double mu = (*mean)[c], is = (*inv_std)[c];
          const double* row = in + (n * C + c) * HW;
          const double* grow = g + (n * C + c) * HW;
          double sg = 0.0, sgx = 0.0;
          for (std::size_t i = 0; i < HW; ++i) {
            sg += grow[i];
            sgx += grow[i] * (row[i] - mu) * is;
          }
          sum_g[c] += sg;
          sum_gx[c] += sgx;
        }
      }
      if (pg->requires_grad) {
        pg->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) pg->grad[c] += sum_gx[c];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) pb->grad[c] += sum_g[c];
      }
      if (px->requires_grad) {
        px->ensure_grad();
        double* dx = px->grad.data();
        const double invm = 1.0 / static_cast<double>(m);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const double mu = (*mean)[c], is = (*inv_std)[c], ga = gval[c];
            const double* row = in + (n * C + c) * HW;
            const double* grow = g + (n * C + c) * HW;
            double* drow = dx + (n * C + c) * HW;
            if (training) {
              for (std::size_t i = 0; i < HW; ++i) {
                const double xhat = (row[i] - mu) * is;
                drow[i] += ga * is * (grow[i] - invm * sum_g[c] - xhat * invm * sum_gx[c]);
              }
            } else {
              for (std::size_t i = 0; i < HW; ++i) drow[i] += ga * is * grow[i];
            }
          }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  if (x.ndim() < 1) throw std::invalid_argument("layer_norm: rank >= 1 required");
  const std::size_t D = x.shape().back();
  if (gamma.size() != D || beta.size() != D)
    throw std::invalid_argument("layer_norm: gamma/beta size mismatch");
  const std::size_t rows = x.size() / D;

  auto mean = std::make_shared<std::vector<double>>(rows, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(rows, 0.0);
  auto out = make_node(x.shape(), "layer_norm", {x.node(), gamma.node(), beta.node()});
  const double* in = x.values().data();
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  double* o = out->values.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * D;
    double mu = 0.0;
    for (std::size_t i = 0; i < D; ++i) mu += row[i];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      const double d = row[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*mean)[r] = mu;
    (*inv_std)[r] = is;
    double* orow = o + r * D;
    for (std::size_t i = 0; i < D; ++i) orow[i] = gv[i] * (row[i] - mu) * is + bv[i];
  }

  if (out->requires_grad) {
    out->backward_fn = [rows, D, mean, inv_std](TensorNode& nd) {
      auto& px = nd.parents[0];
      auto& pg = nd.parents[1];
      auto& pb = nd.parents[2];
      const double* in = px->values.data();
      const double* gval = pg->values.data();
      const double* g = nd.grad.data();
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      if (px->requires_grad) px->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double mu = (*mean)[r], is = (*inv_std)[r];
        const double* row = in + r * D;
        const double* grow = g + r * D;
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
          const double xhat = (row[i] - mu) * is;
          const double dxhat = grow[i] * gval[i];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (pg->requires_grad) pg->grad[i] += grow[i] * xhat;
          if (pb->requires_grad) pb->grad[i] += grow[i];
        }
        if (px->requires_grad) {
          double* drow = px->grad.data() + r * D;
          const double invd = 1.0 / static_cast<double>(D);
          for (std::size_t i = 0; i < D; ++i) {
            const double xhat = (row[i] - mu) * is;
            const double dxhat = grow[i] * gval[i];
            drow[i] += is * (dxhat - invd * sum_dxhat - xhat * invd * sum_dxhat_xhat);
          }
        }
      }
    };
  }
  return Tensor(out);
}

// --- nonlinearities ------------------------------------------------------------

Tensor elu(const Tensor& x, double alpha) {
  require_defined(x, "elu");
  auto out = make_node(x.shape(), "elu", {x.node()});
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = xv[i] > 0.0 ? xv[i] : alpha * (std::exp(xv[i]) - 1.0);
  if (out->requires_grad) {
    out->backward_fn = [alpha](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      const bool guided = guided_backward_active();
      for (std::size_t i = 0; i < nd.grad.size(); ++i) {
        const double xv = p->values[i];
        const double g = nd.grad[i];
        if (guided) {
          if (xv > 0.0 && g > 0.0) p->grad[i] += g;
        } else {
          p->grad[i] += g * (xv > 0.0 ? 1.0 : alpha * std::exp(xv));
        }
      }
    };
  }
  return Tensor(out);
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  auto out = make_node(x.shape(), "gelu", {x.node()});
  const auto& xv = x.values();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  if (out->requires_grad) {
    out->backward_fn = [](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      const bool guided = guided_backward_active();
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < nd.grad.size(); ++i) {
        const double xv = p->values[i];
        const double g = nd.grad[i];
        const double cdf = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
        const double d = cdf + xv * pdf;
        if (guided) {
          if (xv > 0.0 && g > 0.0) p->grad[i] += g * d;
        } else {
          p->grad[i] += g * d;
        }
      }
    };
  }
  return Tensor(out);
}

Tensor softmax_lastdim(const Tensor& x) {
  require_defined(x, "softmax_lastdim");
  if (x.ndim() < 1 || x.shape().back() == 0)
    throw std::invalid_argument("softmax_lastdim: empty axis");
  const std::size_t D = x.shape().back();
  const std::size_t rows = x.size() / D;
  auto out = make_node(x.shape(), "softmax", {x.node()});
  const double* in = x.values().data();
  double* o = out->values.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * D;
    double mx = row[0];
    for (std::size_t i = 1; i < D; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    double* orow = o + r * D;
    for (std::size_t i = 0; i < D; ++i) {
      orow[i] = std::exp(row[i] - mx);
      sum += orow[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < D; ++i) orow[i] *= inv;
  }
  if (out->requires_grad) {
    out->backward_fn = [rows, D](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      const double* y = nd.values.data();
      const double* g = nd.grad.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yrow = y + r * D;
        const double* grow = g + r * D;
        double dot = 0.0;
        for (std::size_t i = 0; i < D; ++i) dot += grow[i] * yrow[i];
        double* drow = p->grad.data() + r * D;
        for (std::size_t i = 0; i < D; ++i) drow[i] += yrow[i] * (grow[i] - dot);
      }
    };
  }
  return Tensor(out);
}

// --- dropout ---------------------------------------------------------------------

namespace {
// masks kept alive by the node's backward closure and a side registry
struct DropoutPayload {
  std::vector<std::uint8_t> mask;
};
}  // namespace

static std::vector<std::uint8_t> g_empty_mask;

Tensor dropout(const Tensor& x, double p, RngState& rng, bool training) {
  require_defined(x, "dropout");
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  auto out = make_node(x.shape(), "dropout", {x.node()});
  auto payload = std::make_shared<DropoutPayload>();
  payload->mask.resize(x.size());
  const double keep = 1.0 - p;
  const double inv_keep = 1.0 / keep;
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    const bool keep_i = rng.uniform() >= p;
    payload->mask[i] = keep_i ? 1 : 0;
    out->values[i] = keep_i ? xv[i] * inv_keep : 0.0;
  }
  out->payload = payload;
  if (out->requires_grad) {
    out->backward_fn = [payload, inv_keep](TensorNode& nd) {
      auto& par = nd.parents[0];
      par->ensure_grad();
      for (std::size_t i = 0; i < nd.grad.size(); ++i)
        if (payload->mask[i]) par->grad[i] += nd.grad[i] * inv_keep;
    };
  }
  return Tensor(out);
}

const std::vector<std::uint8_t>& dropout_mask(const Tensor& t) {
  auto node = t.node();
  if (node && node->payload) {
    return static_cast<DropoutPayload*>(node->payload.get())->mask;
  }
  return g_empty_mask;
}

// --- shape ops --------------------------------------------------------------------

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape) {
  require_defined(x, "reshape");
  if (numel(new_shape) != x.size()) throw std::invalid_argument("reshape: element count mismatch");
  auto out = make_node(std::move(new_shape), "reshape", {x.node()});
  out->values = x.values();
  if (out->requires_grad) {
    out->backward_fn = [](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      for (std::size_t i = 0; i < nd.grad.size(); ++i) p->grad[i] += nd.grad[i];
    };
  }
  return Tensor(out);
}

namespace {
std::vector<std::size_t> row_major_strides(const std::vector<std::size_t>& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}
}  // namespace

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
  require_defined(x, "transpose");
  const std::size_t nd = x.ndim();
  if (perm.size() != nd) throw std::invalid_argument("transpose: perm rank mismatch");
  std::vector<bool> seen(nd, false);
  for (std::size_t p : perm) {
    if (p >= nd || seen[p]) throw std::invalid_argument("transpose: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> oshape(nd);
  for (std::size_t i = 0; i < nd; ++i) oshape[i] = x.dim(perm[i]);
  auto out = make_node(oshape, "transpose", {x.node()});
  const auto in_strides = row_major_strides(x.shape());
  const auto out_strides = row_major_strides(oshape);
  // mapping: out index i (in out coords) reads in index with coord c_out[k] = c_in[perm[k]]
  auto map_index = std::make_shared<std::vector<std::size_t>>(x.size());
  const double* in = x.values().data();
  double* o = out->values.data();
  const std::size_t total = x.size();
  for (std::size_t oi = 0; oi < total; ++oi) {
    std::size_t rem = oi, ii = 0;
    for (std::size_t k = 0; k < nd; ++k) {
      const std::size_t coord = rem / out_strides[k];
      rem %= out_strides[k];
      ii += coord * in_strides[perm[k]];
    }
    (*map_index)[oi] = ii;
    o[oi] = in[ii];
  }
  if (out->requires_grad) {
    out->backward_fn = [map_index](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      for (std::size_t oi = 0; oi < nd.grad.size(); ++oi)
        p->grad[(*map_index)[oi]] += nd.grad[oi];
    };
  }
  return Tensor(out);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t nd = parts[0].ndim();
  if (axis >= nd) throw std::invalid_argument("concat: axis out of range");
  std::vector<std::size_t> oshape = parts[0].shape();
  for (std::size_t pi = 1; pi < parts.size(); ++pi) {
    const auto& s = parts[pi].shape();
    if (s.size() != nd) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t k = 0; k < nd; ++k)
      if (k != axis && s[k] != oshape[k]) throw std::invalid_argument("concat: dim mismatch");
    oshape[axis] += s[axis];
  }
  std::vector<std::shared_ptr<TensorNode>> pnodes;
  for (const auto& t : parts) pnodes.push_back(t.node());
  auto out = make_node(oshape, "concat", pnodes);

  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= oshape[k];
  for (std::size_t k = axis + 1; k < nd; ++k) inner *= oshape[k];
  auto widths = std::make_shared<std::vector<std::size_t>>();
  for (const auto& t : parts) widths->push_back(t.dim(axis) * inner);
  const std::size_t ow = oshape[axis] * inner;

  double* o = out->values.data();
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const double* in = parts[pi].values().data();
    const std::size_t w = (*widths)[pi];
    for (std::size_t r = 0; r < outer; ++r)
      std::memcpy(o + r * ow + off, in + r * w, w * sizeof(double));
    off += w;
  }
  if (out->requires_grad) {
    out->backward_fn = [outer, ow, widths](TensorNode& nd) {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < nd.parents.size(); ++pi) {
        auto& p = nd.parents[pi];
        const std::size_t w = (*widths)[pi];
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t i = 0; i < w; ++i) p->grad[r * w + i] += nd.grad[r * ow + off + i];
        }
        off += w;
      }
    };
  }
  return Tensor(out);
}

Tensor mean_all(const Tensor& x) {
  require_defined(x, "mean_all");
  if (x.size() == 0) throw std::invalid_argument("mean_all: empty tensor");
  auto out = make_node({1}, "mean_all", {x.node()});
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  out->values[0] = s * inv;
  if (out->requires_grad) {
    out->backward_fn = [inv](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      const double g = nd.grad[0] * inv;
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    };
  }
  return Tensor(out);
}

Tensor pick(const Tensor& x, std::size_t flat_index) {
  require_defined(x, "pick");
  if (flat_index >= x.size()) throw std::out_of_range("pick: index out of range");
  auto out = make_node({1}, "pick", {x.node()});
  out->values[0] = x.values()[flat_index];
  if (out->requires_grad) {
    out->backward_fn = [flat_index](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      p->grad[flat_index] += nd.grad[0];
    };
  }
  return Tensor(out);
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& targets) {
  require_defined(logits, "cross_entropy_with_logits");
  if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be (N,C)");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (targets.size() != N) throw std::invalid_argument("cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= C)
      throw std::out_of_range("cross_entropy: target index out of range");

  auto probs = std::make_shared<std::vector<double>>(N * C, 0.0);
  auto tgt = std::make_shared<std::vector<int>>(targets);
  const double* in = logits.values().data();
  double loss = 0.0;
  for (std::size_t r = 0; r < N; ++r) {
    const double* row = in + r * C;
    double mx = row[0];
    for (std::size_t i = 1; i < C; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < C; ++i) sum += std::exp(row[i] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - row[targets[r]];
    for (std::size_t i = 0; i < C; ++i) (*probs)[r * C + i] = std::exp(row[i] - lse);
  }
  auto out = make_node({1}, "cross_entropy", {logits.node()});
  out->values[0] = loss / static_cast<double>(N);
  if (out->requires_grad) {
    out->backward_fn = [N, C, probs, tgt](TensorNode& nd) {
      auto& p = nd.parents[0];
      p->ensure_grad();
      const double g = nd.grad[0] / static_cast<double>(N);
      for (std::size_t r = 0; r < N; ++r) {
        for (std::size_t i = 0; i < C; ++i) {
          double d = (*probs)[r * C + i];
          if (static_cast<std::size_t>((*tgt)[r]) == i) d -= 1.0;
          p->grad[r * C + i] += g * d;
        }
      }
    };
  }
  return Tensor(out);
}

// --- attention ---------------------------------------------------------------------

Tensor multihead_attention(const Tensor& x, std::size_t heads, const AttentionParams& p) {
  require_defined(x, "multihead_attention");
  if (x.ndim() != 3) throw std::invalid_argument("multihead_attention: expects (N,T,D)");
  const std::size_t N = x.dim(0), T = x.dim(1), D = x.dim(2);
  if (heads == 0 || D % heads != 0)
    throw std::invalid_argument("multihead_attention: D must be divisible by heads");
  const std::size_t dh = D / heads;

  Tensor x2 = reshape(x, {N * T, D});
  Tensor q = add_bias(matmul(x2, p.wq), p.bq);
  Tensor k = add_bias(matmul(x2, p.wk), p.bk);
  Tensor v = add_bias(matmul(x2, p.wv), p.bv);
  auto split = [&](const Tensor& t) {
    return transpose(reshape(t, {N, T, heads, dh}), {0, 2, 1, 3});  // (N,H,T,dh)
  };
  Tensor qh = split(q), kh = split(k), vh = split(v);
  Tensor scores = scale(matmul(qh, transpose(kh, {0, 1, 3, 2})), 1.0 / std::sqrt(double(dh)));
  Tensor attn = softmax_lastdim(scores);            // rows sum to 1
  Tensor ctx = matmul(attn, vh);                    // (N,H,T,dh)
  Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {N * T, D});
  Tensor out = add_bias(matmul(merged, p.wo), p.bo);
  return reshape(out, {N, T, D});
}

// --- gradient check -------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& fn, Tensor input, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  input.set_requires_grad(true);
  input.zero_grad();
  Tensor out = fn(input);
  if (out.size() != 1) throw std::invalid_argument("grad_check: fn must be scalar-valued");
  if (!std::isfinite(out.item())) throw std::runtime_error("grad_check: non-finite output");

  auto order = topo_order(out.node().get());
  run_backward(out.node().get());
  std::vector<double> g_ad = input.grad();
  // leave no live gradients behind so repeated checks over shared parameters work
  for (TensorNode* nd : order) {
    if (nd->requires_grad) {
      nd->grad.assign(nd->values.size(), 0.0);
      nd->grad_live = false;
      nd->backward_called = false;
    }
  }

  double max_err = 0.0;
  auto& vals = input.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double v0 = vals[i];
    vals[i] = v0 + eps;
    const double fp = fn(input).item();
    vals[i] = v0 - eps;
    const double fm = fn(input).item();
    vals[i] = v0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite output during perturbation");
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(g_ad[i] - g_fd) / std::max(1e-8, std::abs(g_ad[i]) + std::abs(g_fd));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace neurocam
