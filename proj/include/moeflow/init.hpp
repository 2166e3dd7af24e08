#pragma once

#include <cmath>

#include "moeflow/rng.hpp"
#include "moeflow/tensor.hpp"

namespace moeflow {

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the default for every linear map
// and bias in the project.
inline Tensor fan_in_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::uniform(std::move(shape), rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

}  // namespace moeflow
