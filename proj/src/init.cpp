#include "rat/init.hpp"

namespace rat {

Tensor uniform_param(Shape shape, double limit, RngStream& rng) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> data(n);
  for (auto& v : data) v = (2.0 * rng.uniform() - 1.0) * limit;
  return Tensor::from(std::move(shape), std::move(data), true);
}

Tensor constant_param(Shape shape, double value) {
  return Tensor::full(std::move(shape), value, true);
}

}  // namespace rat
