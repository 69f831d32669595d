#pragma once

// Randomized finite-difference sweep over every differentiable primitive.
// Shared by the tensor unit tests and the acceptance suite.

#include <numeric>
#include <string>
#include <vector>

#include "advlab/core/rng.hpp"
#include "advlab/tensor/ops.hpp"
#include "grad_check.hpp"

namespace advlab::testing {

struct PrimitiveResult {
  std::string name;
  double worst_error = 0.0;
};

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// Values kept at least 0.02 away from zero so central differences never
// straddle the ReLU kink.
inline Tensor<double> away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    x = rng.uniform(-1.0, 1.0);
    if (std::abs(x) < 0.02) x += x < 0 ? -0.02 : 0.02;
  }
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// Distinct values spaced 0.05 apart so pooling windows have no near-ties.
inline Tensor<double> distinct_values(Rng& rng, Shape shape) {
  const std::size_t n = numel(shape);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.05 * static_cast<double>(order[i]) - 0.5;
  return Tensor<double>::from(std::move(shape), std::move(v));
}

inline std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// Projects an op output onto a fixed random direction so the scalar loss
// depends on every output element with a distinct weight.
inline Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape())));
}

inline std::vector<PrimitiveResult> run_primitive_sweep(std::size_t instances, std::uint64_t seed) {
  struct Case {
    std::string name;
    std::function<std::pair<ScalarGraph, Inputs>(Rng&)> make;
  };
  std::vector<Case> cases;

  cases.push_back({"add", [](Rng& r) {
                     Shape s{dim_in(r, 1, 3), dim_in(r, 1, 4)};
                     Inputs in{random_tensor(r, s), random_tensor(r, Shape{s[1]})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(add(x[0], x[1]), ps); }), in};
                   }});
  cases.push_back({"sub", [](Rng& r) {
                     Shape s{dim_in(r, 1, 3), dim_in(r, 1, 4)};
                     Inputs in{random_tensor(r, s), random_tensor(r, s)};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(sub(x[0], x[1]), ps); }), in};
                   }});
  cases.push_back({"mul", [](Rng& r) {
                     Shape s{dim_in(r, 1, 3), dim_in(r, 1, 4)};
                     Inputs in{random_tensor(r, s), random_tensor(r, Shape{s[1]})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(mul(x[0], x[1]), ps); }), in};
                   }});
  cases.push_back({"affine", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 6)})};
                     const double a = r.uniform(-2, 2), b = r.uniform(-1, 1);
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(affine(x[0], a, b), ps); }), in};
                   }});
  cases.push_back({"relu", [](Rng& r) {
                     Inputs in{away_from_zero(r, Shape{dim_in(r, 1, 3), dim_in(r, 2, 5)})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(relu(x[0]), ps); }), in};
                   }});
  cases.push_back({"gelu", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 3), dim_in(r, 2, 5)}, -3, 3)};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(gelu(x[0]), ps); }), in};
                   }});
  cases.push_back({"reshape", [](Rng& r) {
                     const std::size_t a = dim_in(r, 1, 3), b = dim_in(r, 1, 4);
                     Inputs in{random_tensor(r, Shape{a, b})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(reshape(x[0], Shape{b, a}), ps); }), in};
                   }});
  cases.push_back({"permute", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 3), dim_in(r, 1, 3), dim_in(r, 1, 3), dim_in(r, 1, 2)})};
                     std::vector<std::size_t> perm{0, 1, 2, 3};
                     for (std::size_t i = 4; i > 1; --i) std::swap(perm[i - 1], perm[r.below(i)]);
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(permute(x[0], perm), ps); }), in};
                   }});
  cases.push_back({"transpose", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 4), dim_in(r, 1, 4)})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(transpose(x[0]), ps); }), in};
                   }});
  cases.push_back({"select", [](Rng& r) {
                     Shape s{dim_in(r, 1, 3), dim_in(r, 2, 4), dim_in(r, 1, 3)};
                     const std::size_t idx = r.below(s[1]);
                     Inputs in{random_tensor(r, s)};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(select(x[0], 1, idx), ps); }), in};
                   }});
  cases.push_back({"concat", [](Rng& r) {
                     const std::size_t rows = dim_in(r, 1, 3);
                     Inputs in{random_tensor(r, Shape{rows, dim_in(r, 1, 3), 2}), random_tensor(r, Shape{rows, dim_in(r, 1, 3), 2})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(concat(x, 1), ps); }), in};
                   }});
  cases.push_back({"embedding_lookup", [](Rng& r) {
                     const std::size_t vocab = dim_in(r, 2, 5);
                     std::vector<std::size_t> idx(dim_in(r, 1, 6));
                     for (auto& i : idx) i = r.below(vocab);
                     Inputs in{random_tensor(r, Shape{vocab, dim_in(r, 1, 4)})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(embedding_lookup(x[0], std::span<const std::size_t>(idx)), ps); }), in};
                   }});
  cases.push_back({"sum", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 3), dim_in(r, 1, 4)})};
                     return std::pair{ScalarGraph([](const Inputs& x) { return sum(mul(x[0], x[0])); }), in};
                   }});
  cases.push_back({"mean", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 3), dim_in(r, 1, 4)})};
                     return std::pair{ScalarGraph([](const Inputs& x) { return mean(mul(x[0], x[0])); }), in};
                   }});
  cases.push_back({"mean_axis", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 3), dim_in(r, 1, 4), dim_in(r, 1, 3)})};
                     const long axis = static_cast<long>(r.below(3));
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(mean(x[0], axis), ps); }), in};
                   }});
  cases.push_back({"matmul", [](Rng& r) {
                     const std::size_t m = dim_in(r, 1, 4), k = dim_in(r, 1, 4), n = dim_in(r, 1, 4);
                     Inputs in{random_tensor(r, Shape{m, k}), random_tensor(r, Shape{k, n})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(matmul(x[0], x[1]), ps); }), in};
                   }});
  cases.push_back({"bmm", [](Rng& r) {
                     const std::size_t b = dim_in(r, 1, 3), m = dim_in(r, 1, 3), k = dim_in(r, 1, 3), n = dim_in(r, 1, 3);
                     Inputs in{random_tensor(r, Shape{b, m, k}), random_tensor(r, Shape{b, k, n})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(bmm(x[0], x[1]), ps); }), in};
                   }});
  cases.push_back({"linear", [](Rng& r) {
                     const std::size_t in_dim = dim_in(r, 1, 4), out_dim = dim_in(r, 1, 4);
                     Inputs in{random_tensor(r, Shape{2, dim_in(r, 1, 3), in_dim}), random_tensor(r, Shape{in_dim, out_dim}),
                               random_tensor(r, Shape{out_dim})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(linear(x[0], x[1], x[2]), ps); }), in};
                   }});
  cases.push_back({"softmax", [](Rng& r) {
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 3), dim_in(r, 2, 5)}, -3, 3)};
                     const long axis = static_cast<long>(r.below(2));
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(softmax(x[0], axis), ps); }), in};
                   }});
  cases.push_back({"layer_norm", [](Rng& r) {
                     // Rows of width >= 4 with O(1) spread: with d = 2 the output is
                     // +-1 regardless of input and central differences at h = 1e-3
                     // are dominated by curvature.
                     const std::size_t d = dim_in(r, 4, 8);
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 3), d}, -2, 2), random_tensor(r, Shape{d}, 0.5, 1.5),
                               random_tensor(r, Shape{d})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(layer_norm(x[0], x[1], x[2], 1e-5), ps); }), in};
                   }});
  cases.push_back({"cross_entropy", [](Rng& r) {
                     const std::size_t n = dim_in(r, 1, 4), k = dim_in(r, 2, 5);
                     std::vector<std::size_t> labels(n);
                     for (auto& l : labels) l = r.below(k);
                     Inputs in{random_tensor(r, Shape{n, k}, -3, 3)};
                     return std::pair{ScalarGraph([labels](const Inputs& x) { return cross_entropy_loss(x[0], std::span<const std::size_t>(labels)); }), in};
                   }});
  cases.push_back({"conv2d", [](Rng& r) {
                     const std::size_t c = dim_in(r, 1, 2), f = dim_in(r, 1, 3), k = dim_in(r, 1, 3);
                     const std::size_t stride = dim_in(r, 1, 2), pad = r.below(2);
                     const std::size_t hw = std::max<std::size_t>(k, dim_in(r, 3, 5));
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 2), c, hw, hw}), random_tensor(r, Shape{f, c, k, k})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([=](const Inputs& x) { return project(conv2d(x[0], x[1], stride, pad), ps); }), in};
                   }});
  cases.push_back({"add_channel_bias", [](Rng& r) {
                     const std::size_t c = dim_in(r, 1, 3);
                     Inputs in{random_tensor(r, Shape{dim_in(r, 1, 2), c, 2, dim_in(r, 1, 3)}), random_tensor(r, Shape{c})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(add_channel_bias(x[0], x[1]), ps); }), in};
                   }});
  cases.push_back({"max_pool2d", [](Rng& r) {
                     Inputs in{distinct_values(r, Shape{dim_in(r, 1, 2), dim_in(r, 1, 2), 2 * dim_in(r, 1, 3), 2 * dim_in(r, 1, 3)})};
                     const auto ps = r.next_u64();
                     return std::pair{ScalarGraph([ps](const Inputs& x) { return project(max_pool2d(x[0], 2, 2), ps); }), in};
                   }});

  std::vector<PrimitiveResult> results;
  for (const auto& c : cases) {
    Rng rng(derive_seed(seed, c.name));
    PrimitiveResult res{c.name, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      auto [graph, inputs] = c.make(rng);
      res.worst_error = std::max(res.worst_error, max_gradient_error(graph, inputs, 1e-3));
    }
    results.push_back(res);
  }
  return results;
}

}  // namespace advlab::testing
