#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "advlab/core/rng.hpp"
#include "advlab/tensor/tensor.hpp"

namespace advlab::init {

// Every parameter draws from its own stream keyed by (model seed, name), so
// values do not depend on registration order.

template <typename T>
Tensor<T> truncated_normal(Shape shape, std::uint64_t seed, const std::string& name, double stddev = 0.02) {
  Rng rng(derive_seed(seed, "init:" + name));
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(rng.truncated_normal(0.0, stddev));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

// Kaiming-uniform with negative slope sqrt(5) (the common framework
// default for conv layers): bound = 1 / sqrt(fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::uint64_t seed, const std::string& name, std::size_t fan_in) {
  Rng rng(derive_seed(seed, "init:" + name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant(Shape shape, T value) {
  return Tensor<T>::full(std::move(shape), value, true);
}

}  // namespace advlab::init
