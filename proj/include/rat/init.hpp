#pragma once

#include "rat/rng.hpp"
#include "rat/tensor.hpp"

namespace rat {

// Trainable leaf with entries drawn from U(−limit, limit).
Tensor uniform_param(Shape shape, double limit, RngStream& rng);
// Trainable leaf filled with `value`.
Tensor constant_param(Shape shape, double value);

}  // namespace rat
