#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advlab/models/checkpoint.hpp"
#include "advlab/models/parameters.hpp"

namespace advlab {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments for one parameter buffer.
template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update of `param` in place. `step` is the 1-based
/// index of this update.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamMoments<T>& state, std::uint64_t step, double lr,
                 const AdamHyper& h = {}) {
  if (grad.size() != param.size()) throw DimensionError("adam: gradient and parameter sizes differ");
  if (state.m.size() != param.size()) {
    state.m.assign(param.size(), T(0));
    state.v.assign(param.size(), T(0));
  }
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2), eps = static_cast<T>(h.eps);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(step)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(step)));
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T m_hat = state.m[i] / c1;
    const T v_hat = state.v[i] / c2;
    param[i] -= rate * m_hat / (std::sqrt(v_hat) + eps);
  }
}

/// Adam over a whole ParameterSet, keyed by parameter order.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 1e-4, AdamHyper hyper = {}) : lr_(lr), hyper_(hyper) {}

  double learning_rate() const { return lr_; }
  std::uint64_t steps() const { return step_; }

  /// Applies one update from the gradients currently held by the parameters
  /// and clears them. Parameters that received no gradient see a zero one.
  void step(ParameterSet<T>& params) {
    if (moments_.empty()) moments_.resize(params.size());
    if (moments_.size() != params.size()) throw TrainingError("adam state does not match the parameter set");
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (T g : t.grad()) {
        if (!std::isfinite(g)) throw TrainingError("non-finite gradient for parameter '" + name + "'");
      }
    }
    ++step_;
    std::size_t i = 0;
    for (auto& [name, t] : params) {
      const std::vector<T> zeros = t.has_grad() ? std::vector<T>{} : std::vector<T>(t.size(), T(0));
      std::span<const T> g = t.has_grad() ? t.grad() : std::span<const T>(zeros);
      adam_update(t.mutable_data(), g, moments_[i++], step_, lr_, hyper_);
      t.zero_grad();
    }
  }

  /// Moments and step counter as named float buffers for a checkpoint.
  std::vector<NamedBuffer> export_state(const ParameterSet<T>& params) const {
    std::vector<NamedBuffer> out;
    out.push_back({"adam.step", {1}, {static_cast<float>(step_)}});
    std::size_t i = 0;
    for (const auto& [name, t] : params) {
      const auto& mo = i < moments_.size() ? moments_[i] : AdamMoments<T>{};
      auto as_float = [&](const std::vector<T>& src) {
        return src.empty() ? std::vector<float>(t.size(), 0.0f) : std::vector<float>(src.begin(), src.end());
      };
      out.push_back({"adam.m." + name, t.shape(), as_float(mo.m)});
      out.push_back({"adam.v." + name, t.shape(), as_float(mo.v)});
      ++i;
    }
    return out;
  }

  void import_state(const ParameterSet<T>& params, const std::vector<NamedBuffer>& buffers) {
    auto find = [&](const std::string& name) -> const NamedBuffer& {
      for (const auto& b : buffers)
        if (b.name == name) return b;
      throw CheckpointError("checkpoint lacks optimizer buffer '" + name + "'");
    };
    step_ = static_cast<std::uint64_t>(find("adam.step").values.at(0));
    moments_.assign(params.size(), {});
    std::size_t i = 0;
    for (const auto& [name, t] : params) {
      const auto& m = find("adam.m." + name);
      const auto& v = find("adam.v." + name);
      if (m.values.size() != t.size() || v.values.size() != t.size()) {
        throw CheckpointError("optimizer buffer size mismatch for '" + name + "'");
      }
      moments_[i].m.assign(m.values.begin(), m.values.end());
      moments_[i].v.assign(v.values.begin(), v.values.end());
      ++i;
    }
  }

 private:
  double lr_;
  AdamHyper hyper_;
  std::uint64_t step_ = 0;
  std::vector<AdamMoments<T>> moments_;
};

}  // namespace advlab
