#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rat {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct TensorImpl;

/// Dense row-major f64 array with an optional gradient slot.
///
/// A Tensor is a cheap handle; copies share storage. Values are fixed once an
/// op produces them. Only leaves (parameters, inputs) expose mutable data, so
/// the optimizer can update them in place between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  // 2-D accessors; throw DimensionError for other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, no history, no gradient tracking.
  Tensor detach() const;
  const TensorImpl* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend struct TensorAccess;
};

// ---------------------------------------------------------------------------
// Graph construction.

namespace detail {

// Receives the result's gradient and its forward values.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

// Builds an op result. When gradient recording is on and some parent needs a
// gradient, the result carries `fn`, which must push grad_out into parents via
// grad_of(). Otherwise `fn` is dropped.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn fn);

bool needs_grad(const Tensor& t);
// Gradient buffer of t, allocated as zeros on first use.
std::span<double> grad_of(const Tensor& t);

}  // namespace detail

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// When on, every op result is scanned and a NumericError thrown on NaN/Inf.
void set_check_finite(bool on);
bool check_finite();

// Reverse pass from a scalar loss. Leaf gradients accumulate across calls;
// intermediate gradients are recomputed each call. The graph lives as long as
// the loss handle (or any intermediate handle) does.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Differentiable ops. Matrices are 2-D tensors.

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// x[r×c] + bias[c], bias broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Elementwise product with a constant (no gradient to the constant).
Tensor mul_const(const Tensor& a, std::vector<double> factors);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);

Tensor softmax_rows(const Tensor& e);
Tensor log_softmax_rows(const Tensor& e);
// Normalizes over the last axis, then gain ⊙ x̂ + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
// out row i = table row indices[i]; gradient scatters back.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

// Block-batched products: a holds `blocks` stacked row blocks.
// a[B·m×k], b[B·n×k] → [B·m×n]
Tensor block_matmul_nt(const Tensor& a, const Tensor& b, std::size_t blocks);
// g[B·m×n], v[B·n×p] → [B·m×p]
Tensor block_matmul(const Tensor& g, const Tensor& v, std::size_t blocks);
// x[B·n×c] → [B×c], mean over each block's rows.
Tensor block_mean_rows(const Tensor& x, std::size_t blocks);

// Value written into masked attention logits.
inline constexpr double kMaskSentinel = -1e30;
// e[B·m×n]; masked(i, j) = mask[i·n + j] for every block. Masked entries get
// kMaskSentinel and zero gradient.
Tensor mask_fill(const Tensor& e, std::span<const std::uint8_t> mask, std::size_t blocks);

// ---------------------------------------------------------------------------
// Gradient oracle.

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h per coordinate.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// ‖a − b‖ / max(‖a‖, ‖b‖, floor)
double relative_error(std::span<const double> a, std::span<const double> b,
                      double floor = 1e-10);

}  // namespace rat
