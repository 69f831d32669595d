#pragma once

// Central finite-difference oracle. It only evaluates the forward function
// in double precision and never reads gradients off the tape, so it stays
// independent of the backward code it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "advlab/tensor/tensor.hpp"

namespace advlab::testing {

using Inputs = std::vector<Tensor<double>>;
using ScalarGraph = std::function<Tensor<double>(const Inputs&)>;

inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

// d f / d inputs[which][i] for every i.
inline std::vector<double> numeric_gradient(const ScalarGraph& f, Inputs inputs, std::size_t which,
                                            double h = 1e-3) {
  const Tensor<double> base = inputs[which];
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus(base.values()), minus(base.values());
    plus[i] += h;
    minus[i] -= h;
    inputs[which] = Tensor<double>::from(base.shape(), plus);
    const double fp = f(inputs).item();
    inputs[which] = Tensor<double>::from(base.shape(), minus);
    const double fm = f(inputs).item();
    grad[i] = (fp - fm) / (2 * h);
  }
  return grad;
}

// Max relative error between tape gradients and finite differences over
// every element of every input.
inline double max_gradient_error(const ScalarGraph& f, const Inputs& inputs, double h = 1e-3) {
  Inputs leaves;
  for (const auto& t : inputs) leaves.push_back(t.detach(true));
  backward(f(leaves));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto numeric = numeric_gradient(f, inputs, k, h);
    const auto analytic = leaves[k].grad();
    for (std::size_t i = 0; i < numeric.size(); ++i)
      worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

}  // namespace advlab::testing
