#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlab/core/rng.hpp"
#include "advlab/models/model.hpp"

namespace advlab {

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  std::size_t steps = 10;
  bool random_start = false;
  bool targeted = false;

  /// A zero budget is accepted and yields the clean images unchanged.
  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("attack epsilon must lie in [0,1]");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("attack alpha must be positive");
    if (steps < 1) throw ConfigError("attack steps must be at least 1");
  }

  bool operator==(const AttackConfig&) const = default;
};

inline void to_json(nlohmann::ordered_json& j, const AttackConfig& c) {
  j = {{"epsilon", c.epsilon}, {"alpha", c.alpha}, {"steps", c.steps},
       {"random_start", c.random_start}, {"targeted", c.targeted}};
}

struct PerturbationMetrics {
  std::vector<double> linf;
  std::vector<double> l2;
  std::vector<double> psnr;  // +infinity for identical images
};

template <typename T>
struct AttackResult {
  Tensor<T> adversarial;
  std::vector<double> linf;
  std::vector<double> l2;
  std::vector<std::vector<double>> loss_trajectory;  // per sample, steps + 1 entries
  Labels clean_prediction;
  Labels adversarial_prediction;
  std::vector<bool> success;  // prediction changed from the clean prediction

  std::size_t size() const { return linf.size(); }
  double success_rate() const {
    return success.empty() ? 0.0
                           : static_cast<double>(std::count(success.begin(), success.end(), true)) /
                                 static_cast<double>(success.size());
  }
};

/// Clamps x into [orig - eps, orig + eps] intersected with [0,1], per pixel.
template <typename T>
Tensor<T> project(const Tensor<T>& x, const Tensor<T>& orig, double epsilon) {
  if (x.shape() != orig.shape()) {
    throw DimensionError("project: shape " + to_string(x.shape()) + " differs from " + to_string(orig.shape()));
  }
  const T eps = static_cast<T>(epsilon);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T lo = std::max(orig[i] - eps, T(0));
    const T hi = std::min(orig[i] + eps, T(1));
    out[i] = std::clamp(x[i], lo, hi);
  }
  return Tensor<T>::from(x.shape(), std::move(out));
}

/// Per-sample L-infinity, L2 and PSNR (peak 1) of adv - clean over the
/// leading axis.
template <typename T>
PerturbationMetrics perturbation_metrics(const Tensor<T>& clean, const Tensor<T>& adv) {
  if (clean.shape() != adv.shape()) {
    throw DimensionError("perturbation_metrics: shape " + to_string(clean.shape()) + " differs from " +
                         to_string(adv.shape()));
  }
  const std::size_t n = clean.rank() > 1 ? clean.dim(0) : 1;
  const std::size_t per = clean.size() / n;
  PerturbationMetrics m;
  for (std::size_t s = 0; s < n; ++s) {
    double mx = 0.0, sq = 0.0;
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
      const double d = static_cast<double>(adv[i]) - static_cast<double>(clean[i]);
      mx = std::max(mx, std::abs(d));
      sq += d * d;
    }
    const double mse = sq / static_cast<double>(per);
    m.linf.push_back(mx);
    m.l2.push_back(std::sqrt(sq));
    m.psnr.push_back(mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse));
  }
  return m;
}

/// Hook invoked after every step with the iterate before projection and the
/// iterate it was computed from.
template <typename T>
using AttackObserver = std::function<void(std::size_t step, const Tensor<T>& before_projection, const Tensor<T>& previous)>;

namespace detail {

template <typename T>
std::vector<double> per_sample_loss(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  const auto losses = cross_entropy_per_sample(logits, labels);
  return {losses.begin(), losses.end()};
}

}  // namespace detail

/// Projected sign-gradient iteration on the cross-entropy of `labels`:
/// ascent for untargeted attacks, descent toward `labels` when targeted.
/// `model` is any classifier for which `infer(model, x)` and
/// `input_gradient_with_logits(model, x, y)` are defined.
template <typename M, typename T>
AttackResult<T> pgd_attack(const M& model, const Tensor<T>& images, std::span<const std::size_t> labels,
                           const AttackConfig& cfg, std::uint64_t seed, const std::string& batch_tag = "batch",
                           const std::type_identity_t<AttackObserver<T>>& observer = {}) {
  cfg.validate();
  if (images.rank() < 2 || images.dim(0) != labels.size()) {
    throw DimensionError("pgd_attack: " + std::to_string(labels.size()) + " labels for images " +
                         to_string(images.shape()));
  }
  for (T v : images.values()) {
    if (!(v >= T(0) && v <= T(1))) throw InputError("pgd_attack: " + batch_tag + " has pixels outside [0,1]");
  }
  const std::size_t n = labels.size();
  const T alpha = static_cast<T>(cfg.alpha);

  AttackResult<T> r;
  r.loss_trajectory.assign(n, {});
  r.clean_prediction = argmax_rows(infer(model, images));

  Tensor<T> x = images;
  if (cfg.random_start && cfg.epsilon > 0.0) {
    Rng rng(seed);
    std::vector<T> start(images.values());
    for (T& v : start) v += static_cast<T>(rng.uniform(-cfg.epsilon, cfg.epsilon));
    x = project(Tensor<T>::from(images.shape(), std::move(start)), images, cfg.epsilon);
  }

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto g = input_gradient_with_logits(model, x, labels);
    const auto losses = detail::per_sample_loss(g.logits, labels);
    for (std::size_t s = 0; s < n; ++s) r.loss_trajectory[s].push_back(losses[s]);
    std::vector<T> next(x.values());
    for (std::size_t i = 0; i < next.size(); ++i) {
      const T gi = g.gradient[i];
      if (!std::isfinite(gi)) {
        throw AttackError("non-finite input gradient in " + batch_tag + " at step " + std::to_string(step));
      }
      const T sign = gi > T(0) ? T(1) : gi < T(0) ? T(-1) : T(0);
      next[i] += cfg.targeted ? -alpha * sign : alpha * sign;
    }
    auto before = Tensor<T>::from(x.shape(), std::move(next));
    if (observer) observer(step, before, x);
    x = project(before, images, cfg.epsilon);
  }

  const auto final_logits = infer(model, x);
  const auto final_losses = detail::per_sample_loss(final_logits, labels);
  for (std::size_t s = 0; s < n; ++s) r.loss_trajectory[s].push_back(final_losses[s]);
  r.adversarial_prediction = argmax_rows(final_logits);
  for (std::size_t s = 0; s < n; ++s) r.success.push_back(r.adversarial_prediction[s] != r.clean_prediction[s]);
  auto m = perturbation_metrics(images, x);
  r.linf = std::move(m.linf);
  r.l2 = std::move(m.l2);
  r.adversarial = std::move(x);
  return r;
}

}  // namespace advlab
