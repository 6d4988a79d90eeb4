#include "rat/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace rat {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<Tensor> parents;
  detail::BackwardFn fn;
};

struct TensorAccess {
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
  static TensorImpl& impl(const Tensor& t) { return *t.impl_; }
};

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<bool> g_check_finite{false};

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape, std::size_t n) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto s : shape)
    if (s == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero extent");
  if (product(shape) != n)
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(n) +
                         " values");
}

Tensor make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape, data.size());
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return TensorAccess::wrap(std::move(impl));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = product(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = product(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make_leaf({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= dim()) throw DimensionError("axis out of range for shape " + shape_str(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::size_t Tensor::rows() const {
  require_2d(*this, "rows");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  require_2d(*this, "cols");
  return impl_->shape[1];
}

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw GraphError("only leaf tensors expose mutable data");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::is_leaf() const { return !impl_->fn; }
bool Tensor::has_grad() const { return impl_->has_grad; }

std::span<const double> Tensor::grad() const {
  if (!impl_->has_grad) return {};
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_->has_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return make_leaf(impl_->shape, impl_->data, false); }

// ---------------------------------------------------------------------------
// Graph

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn fn) {
  check_shape(shape, data.size());
  if (g_check_finite.load(std::memory_order_relaxed)) {
    for (double v : data)
      if (!std::isfinite(v)) throw NumericError("non-finite value produced by op");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool track =
      g_grad_enabled &&
      std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (track) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
    impl->fn = std::move(fn);
  }
  return TensorAccess::wrap(std::move(impl));
}

bool needs_grad(const Tensor& t) { return t.requires_grad(); }

std::span<double> grad_of(const Tensor& t) {
  auto& impl = TensorAccess::impl(t);
  if (!impl.has_grad) {
    impl.grad.assign(impl.data.size(), 0.0);
    impl.has_grad = true;
  }
  return impl.grad;
}

}  // namespace detail

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_check_finite(bool on) { g_check_finite.store(on); }
bool check_finite() { return g_check_finite.load(); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.numel() != 1)
    throw GraphError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw GraphError("loss does not depend on any tracked tensor");

  // Iterative post-order DFS over non-leaf nodes.
  enum : char { kOpen = 1, kDone = 2 };
  std::unordered_map<const TensorImpl*, char> state;
  std::vector<TensorImpl*> order;
  struct Frame {
    TensorImpl* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  auto* root = &TensorAccess::impl(loss);
  if (root->fn) {
    stack.push_back({root, 0});
    state[root] = kOpen;
  }
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.next < top.node->parents.size()) {
      auto* parent = &TensorAccess::impl(top.node->parents[top.next++]);
      if (!parent->fn) continue;
      auto it = state.find(parent);
      if (it == state.end()) {
        state[parent] = kOpen;
        stack.push_back({parent, 0});
      } else if (it->second == kOpen) {
        throw GraphError("cycle detected in autodiff graph");
      }
    } else {
      state[top.node] = kDone;
      order.push_back(top.node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    node->grad.assign(node->data.size(), 0.0);
    node->has_grad = true;
  }
  if (root->fn) {
    root->grad[0] = 1.0;
  } else {
    detail::grad_of(loss)[0] += 1.0;
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    node->fn(node->grad, node->data);
  }
}

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {a, b},
                             [a, b, m, k, n](std::span<const double> g, std::span<const double>) {
                               if (detail::needs_grad(a))
                                 gemm_nt(g.data(), b.data().data(), detail::grad_of(a).data(), m,
                                         n, k);
                               if (detail::needs_grad(b))
                                 gemm_tn(a.data().data(), g.data(), detail::grad_of(b).data(), m,
                                         k, n);
                             });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), {a, b},
                             [a, b, m, k, n](std::span<const double> g, std::span<const double>) {
                               if (detail::needs_grad(a))
                                 gemm_nn(g.data(), b.data().data(), detail::grad_of(a).data(), m,
                                         n, k);
                               if (detail::needs_grad(b))
                                 gemm_tn(g.data(), a.data().data(), detail::grad_of(b).data(), m,
                                         n, k);
                             });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const auto r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return detail::make_result({c, r}, std::move(out), {a},
                             [a, r, c](std::span<const double> g, std::span<const double>) {
                               auto ga = detail::grad_of(a);
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g, std::span<const double>) {
                               if (detail::needs_grad(a)) add_into(detail::grad_of(a), g);
                               if (detail::needs_grad(b)) add_into(detail::grad_of(b), g);
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g, std::span<const double>) {
                               if (detail::needs_grad(a)) add_into(detail::grad_of(a), g);
                               if (detail::needs_grad(b)) {
                                 auto gb = detail::grad_of(b);
                                 for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
                               }
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [a, b](std::span<const double> g, std::span<const double>) {
                               if (detail::needs_grad(a)) {
                                 auto ga = detail::grad_of(a);
                                 auto y = b.data();
                                 for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i];
                               }
                               if (detail::needs_grad(b)) {
                                 auto gb = detail::grad_of(b);
                                 auto x = a.data();
                                 for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * x[i];
                               }
                             });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a, s](std::span<const double> g, std::span<const double>) {
                               auto ga = detail::grad_of(a);
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
                             });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a](std::span<const double> g, std::span<const double>) {
                               add_into(detail::grad_of(a), g);
                             });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const auto r = x.rows(), c = x.cols();
  if (bias.numel() != c)
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                         shape_str(x.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  return detail::make_result(x.shape(), std::move(out), {x, bias},
                             [x, bias, r, c](std::span<const double> g, std::span<const double>) {
                               if (detail::needs_grad(x)) add_into(detail::grad_of(x), g);
                               if (detail::needs_grad(bias)) {
                                 auto gb = detail::grad_of(bias);
                                 for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                               }
                             });
}

Tensor mul_const(const Tensor& a, std::vector<double> factors) {
  if (factors.size() != a.numel())
    throw DimensionError("mul_const: " + std::to_string(factors.size()) +
                         " factors for shape " + shape_str(a.shape()));
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factors[i];
  return detail::make_result(
      a.shape(), std::move(out), {a},
      [a, f = std::move(factors)](std::span<const double> g, std::span<const double>) {
        auto ga = detail::grad_of(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * f[i];
      });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({1}, {s}, {a}, [a](std::span<const double> g, std::span<const double>) {
    auto ga = detail::grad_of(a);
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a](std::span<const double> g, std::span<const double>) {
                               auto ga = detail::grad_of(a);
                               auto x = a.data();
                               for (std::size_t i = 0; i < ga.size(); ++i)
                                 if (x[i] > 0.0) ga[i] += g[i];
                             });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x[i] >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    } else {
      const double e = std::exp(x[i]);
      out[i] = e / (1.0 + e);
    }
  }
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a](std::span<const double> g, std::span<const double> y) {
                               auto ga = detail::grad_of(a);
                               for (std::size_t i = 0; i < ga.size(); ++i)
                                 ga[i] += g[i] * y[i] * (1.0 - y[i]);
                             });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x[i]);
  return detail::make_result(a.shape(), std::move(out), {a},
                             [a](std::span<const double> g, std::span<const double>) {
                               auto ga = detail::grad_of(a);
                               auto x = a.data();
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] / x[i];
                             });
}

Tensor softmax_rows(const Tensor& e) {
  require_2d(e, "softmax_rows");
  const auto r = e.rows(), c = e.cols();
  std::vector<double> out(r * c);
  auto x = e.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    double* yi = out.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      s += yi[j];
    }
    for (std::size_t j = 0; j < c; ++j) yi[j] /= s;
  }
  return detail::make_result(e.shape(), std::move(out), {e},
                             [e, r, c](std::span<const double> g, std::span<const double> y) {
                               auto ge = detail::grad_of(e);
                               for (std::size_t i = 0; i < r; ++i) {
                                 const auto o = i * c;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < c; ++j) dot += g[o + j] * y[o + j];
                                 for (std::size_t j = 0; j < c; ++j)
                                   ge[o + j] += y[o + j] * (g[o + j] - dot);
                               }
                             });
}

Tensor log_softmax_rows(const Tensor& e) {
  require_2d(e, "log_softmax_rows");
  const auto r = e.rows(), c = e.cols();
  std::vector<double> out(r * c);
  auto x = e.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = x.data() + i * c;
    const double mx = *std::max_element(xi, xi + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xi[j] - lse;
  }
  return detail::make_result(e.shape(), std::move(out), {e},
                             [e, r, c](std::span<const double> g, std::span<const double> y) {
                               auto ge = detail::grad_of(e);
                               for (std::size_t i = 0; i < r; ++i) {
                                 const auto o = i * c;
                                 double gs = 0.0;
                                 for (std::size_t j = 0; j < c; ++j) gs += g[o + j];
                                 for (std::size_t j = 0; j < c; ++j)
                                   ge[o + j] += g[o + j] - std::exp(y[o + j]) * gs;
                               }
                             });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
  const auto rows = x.numel() / d;
  std::vector<double> xhat(x.numel()), rstd(rows), out(x.numel());
  auto xv = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xi[j] - mu) * rstd[i];
      out[i * d + j] = gv[j] * xhat[i * d + j] + bv[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
          std::span<const double> g, std::span<const double>) {
        if (detail::needs_grad(gain)) {
          auto gg = detail::grad_of(gain);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (detail::needs_grad(bias)) {
          auto gb = detail::grad_of(bias);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
        if (!detail::needs_grad(x)) return;
        auto gx = detail::grad_of(x);
        auto gv = gain.data();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t i = 0; i < rows; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * gv[j];
            m1 += dxh;
            m2 += dxh * xhat[i * d + j];
          }
          m1 *= inv_d;
          m2 *= inv_d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = g[i * d + j] * gv[j];
            gx[i * d + j] += rstd[i] * (dxh - m1 - xhat[i * d + j] * m2);
          }
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (product(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " +
                         shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), {a},
                             [a](std::span<const double> g, std::span<const double>) {
                               add_into(detail::grad_of(a), g);
                             });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_2d(a, "slice_cols");
  const auto r = a.rows(), c = a.cols();
  if (count == 0 || start + count > c)
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_str(a.shape()));
  std::vector<double> out(r * count);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.data() + i * c + start, count, out.data() + i * count);
  return detail::make_result({r, count}, std::move(out), {a},
                             [a, r, c, start, count](std::span<const double> g,
                                                     std::span<const double>) {
                               auto ga = detail::grad_of(a);
                               for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < count; ++j)
                                   ga[i * c + start + j] += g[i * count + j];
                             });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const auto r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw DimensionError("concat_cols: row counts differ (" + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()) + ")");
    c += p.cols();
  }
  std::vector<double> out(r * c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto pc = p.cols();
    auto x = p.data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data() + i * pc, pc, out.data() + i * c + off);
    off += pc;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return detail::make_result({r, c}, std::move(out), parents,
                             [parents, r, c](std::span<const double> g, std::span<const double>) {
                               std::size_t off = 0;
                               for (const auto& p : parents) {
                                 const auto pc = p.cols();
                                 if (detail::needs_grad(p)) {
                                   auto gp = detail::grad_of(p);
                                   for (std::size_t i = 0; i < r; ++i)
                                     for (std::size_t j = 0; j < pc; ++j)
                                       gp[i * pc + j] += g[i * c + off + j];
                                 }
                                 off += pc;
                               }
                             });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_2d(a, "slice_rows");
  const auto r = a.rows(), c = a.cols();
  if (count == 0 || start + count > r)
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " +
                         shape_str(a.shape()));
  auto x = a.data();
  std::vector<double> out(x.begin() + start * c, x.begin() + (start + count) * c);
  return detail::make_result({count, c}, std::move(out), {a},
                             [a, c, start](std::span<const double> g, std::span<const double>) {
                               auto ga = detail::grad_of(a);
                               for (std::size_t i = 0; i < g.size(); ++i) ga[start * c + i] += g[i];
                             });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const auto c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw DimensionError("concat_rows: column counts differ (" + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()) + ")");
    r += p.rows();
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return detail::make_result({r, c}, std::move(out), parents,
                             [parents](std::span<const double> g, std::span<const double>) {
                               std::size_t off = 0;
                               for (const auto& p : parents) {
                                 if (detail::needs_grad(p))
                                   add_into(detail::grad_of(p), g.subspan(off, p.numel()));
                                 off += p.numel();
                               }
                             });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require_2d(table, "gather_rows");
  const auto r = table.rows(), c = table.cols();
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  std::vector<double> out(indices.size() * c);
  auto x = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= r)
      throw DimensionError("gather_rows: index " + std::to_string(indices[i]) +
                           " out of range for " + shape_str(table.shape()));
    std::copy_n(x.data() + indices[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return detail::make_result({idx.size(), c}, std::move(out), {table},
                             [table, c, idx](std::span<const double> g, std::span<const double>) {
                               auto gt = detail::grad_of(table);
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                 for (std::size_t j = 0; j < c; ++j)
                                   gt[idx[i] * c + j] += g[i * c + j];
                             });
}

Tensor block_matmul_nt(const Tensor& a, const Tensor& b, std::size_t blocks) {
  require_2d(a, "block_matmul_nt");
  require_2d(b, "block_matmul_nt");
  if (blocks == 0 || a.rows() % blocks || b.rows() % blocks || a.cols() != b.cols())
    throw DimensionError("block_matmul_nt: " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not split into " + std::to_string(blocks) +
                         " blocks");
  const auto m = a.rows() / blocks, n = b.rows() / blocks, k = a.cols();
  std::vector<double> out(blocks * m * n, 0.0);
  for (std::size_t blk = 0; blk < blocks; ++blk)
    gemm_nt(a.data().data() + blk * m * k, b.data().data() + blk * n * k,
            out.data() + blk * m * n, m, k, n);
  return detail::make_result(
      {blocks * m, n}, std::move(out), {a, b},
      [a, b, blocks, m, n, k](std::span<const double> g, std::span<const double>) {
        for (std::size_t blk = 0; blk < blocks; ++blk) {
          const double* gb = g.data() + blk * m * n;
          if (detail::needs_grad(a))
            gemm_nn(gb, b.data().data() + blk * n * k, detail::grad_of(a).data() + blk * m * k, m,
                    n, k);
          if (detail::needs_grad(b))
            gemm_tn(gb, a.data().data() + blk * m * k, detail::grad_of(b).data() + blk * n * k, m,
                    n, k);
        }
      });
}

Tensor block_matmul(const Tensor& g, const Tensor& v, std::size_t blocks) {
  require_2d(g, "block_matmul");
  require_2d(v, "block_matmul");
  if (blocks == 0 || g.rows() % blocks || v.rows() % blocks || v.rows() / blocks != g.cols())
    throw DimensionError("block_matmul: " + shape_str(g.shape()) + " and " +
                         shape_str(v.shape()) + " do not split into " + std::to_string(blocks) +
                         " blocks");
  const auto m = g.rows() / blocks, n = g.cols(), p = v.cols();
  std::vector<double> out(blocks * m * p, 0.0);
  for (std::size_t blk = 0; blk < blocks; ++blk)
    gemm_nn(g.data().data() + blk * m * n, v.data().data() + blk * n * p,
            out.data() + blk * m * p, m, n, p);
  return detail::make_result(
      {blocks * m, p}, std::move(out), {g, v},
      [g, v, blocks, m, n, p](std::span<const double> go, std::span<const double>) {
        for (std::size_t blk = 0; blk < blocks; ++blk) {
          const double* gb = go.data() + blk * m * p;
          if (detail::needs_grad(g))
            gemm_nt(gb, v.data().data() + blk * n * p, detail::grad_of(g).data() + blk * m * n, m,
                    p, n);
          if (detail::needs_grad(v))
            gemm_tn(g.data().data() + blk * m * n, gb, detail::grad_of(v).data() + blk * n * p, m,
                    n, p);
        }
      });
}

Tensor block_mean_rows(const Tensor& x, std::size_t blocks) {
  require_2d(x, "block_mean_rows");
  if (blocks == 0 || x.rows() % blocks)
    throw DimensionError("block_mean_rows: " + shape_str(x.shape()) + " does not split into " +
                         std::to_string(blocks) + " blocks");
  const auto n = x.rows() / blocks, c = x.cols();
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> out(blocks * c, 0.0);
  auto xv = x.data();
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * c + j] += xv[(b * n + i) * c + j];
  for (auto& v : out) v *= inv;
  return detail::make_result({blocks, c}, std::move(out), {x},
                             [x, blocks, n, c, inv](std::span<const double> g,
                                                    std::span<const double>) {
                               auto gx = detail::grad_of(x);
                               for (std::size_t b = 0; b < blocks; ++b)
                                 for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                     gx[(b * n + i) * c + j] += g[b * c + j] * inv;
                             });
}

Tensor mask_fill(const Tensor& e, std::span<const std::uint8_t> mask, std::size_t blocks) {
  require_2d(e, "mask_fill");
  if (blocks == 0 || e.rows() % blocks || mask.size() != (e.rows() / blocks) * e.cols())
    throw DimensionError("mask_fill: mask of " + std::to_string(mask.size()) +
                         " entries does not fit " + shape_str(e.shape()) + " in " +
                         std::to_string(blocks) + " blocks");
  const auto per = mask.size();
  std::vector<double> out(e.data().begin(), e.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i % per]) out[i] = kMaskSentinel;
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return detail::make_result(e.shape(), std::move(out), {e},
                             [e, m, per](std::span<const double> g, std::span<const double>) {
                               auto ge = detail::grad_of(e);
                               for (std::size_t i = 0; i < ge.size(); ++i)
                                 if (!m[i % per]) ge[i] += g[i];
                             });
}

// ---------------------------------------------------------------------------
// Oracle

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  NoGradGuard guard;
  std::vector<double> base(x.data().begin(), x.data().end());
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from(x.shape(), std::move(plus)));
    const double fm = f(Tensor::from(x.shape(), std::move(minus)));
    out[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(out));
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace rat
