#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "advlab/models/parameters.hpp"
#include "advlab/models/resnet.hpp"
#include "advlab/models/spec.hpp"
#include "advlab/models/vgg.hpp"
#include "advlab/models/vit.hpp"
#include "advlab/tensor/ops.hpp"

namespace advlab {

// Pixel inputs in [0,1] are mapped to model space with per-channel mean 0.5
// and std 0.5 inside forward, so attack budgets stay in pixel units.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.5;

template <typename T>
class Model {
 public:
  Model() = default;
  Model(ClassifierSpec spec, std::uint64_t seed, ParameterSet<T> params)
      : spec_(std::move(spec)), seed_(seed), params_(std::move(params)) {}

  const ClassifierSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const ParameterSet<T>& parameters() const { return params_; }
  ParameterSet<T>& parameters() { return params_; }
  std::size_t parameter_count() const { return params_.element_count(); }

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  void check_input(const Tensor<T>& images) const {
    const Shape expected{images.rank() == 4 ? images.dim(0) : 0, spec_.channels, spec_.resolution, spec_.resolution};
    if (images.rank() != 4 || images.shape() != expected) {
      throw DimensionError("model expects N x " + std::to_string(spec_.channels) + " x " +
                           std::to_string(spec_.resolution) + " x " + std::to_string(spec_.resolution) +
                           " images, got " + to_string(images.shape()));
    }
  }

  /// Logits with parameters on the tape (training path).
  Tensor<T> forward(const Tensor<T>& images) const { return run(params_, images); }

  /// Logits with parameters held constant; only the input can be tracked.
  Tensor<T> forward_frozen(const Tensor<T>& images) const { return run(params_.frozen(), images); }

  template <typename U>
  Model<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : params_) out.add(name, t.template cast<U>().detach(true));
    return Model<U>(spec_, seed_, std::move(out));
  }

 private:
  Tensor<T> run(const ParameterSet<T>& p, const Tensor<T>& images) const {
    check_input(images);
    const auto x = affine(images, T(1 / kPixelStd), T(-kPixelMean / kPixelStd));
    switch (spec_.arch) {
      case Architecture::vit: return vit::forward(spec_, p, x);
      case Architecture::resnet: return resnet::forward(spec_, p, x);
      case Architecture::vgg: return vgg::forward(spec_, p, x);
    }
    throw SpecError("unknown architecture");
  }

  ClassifierSpec spec_;
  std::uint64_t seed_ = 0;
  ParameterSet<T> params_;
  bool training_ = false;
};

template <typename T = float>
Model<T> build_model(const ClassifierSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParameterSet<T> p;
  switch (spec.arch) {
    case Architecture::vit: vit::init(spec, seed, p); break;
    case Architecture::resnet: resnet::init(spec, seed, p); break;
    case Architecture::vgg: vgg::init(spec, seed, p); break;
  }
  return Model<T>(spec, seed, std::move(p));
}

template <typename T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& images) {
  return model.forward(images);
}

template <typename T>
struct InputGradient {
  Tensor<T> gradient;  // same shape as the images
  Tensor<T> logits;    // forward pass the gradient was taken at
};

/// Gradient of mean cross-entropy with respect to raw pixels. Parameters are
/// frozen for the pass, so their gradient buffers are never touched.
template <typename T>
InputGradient<T> input_gradient_with_logits(const Model<T>& model, const Tensor<T>& images,
                                            std::span<const std::size_t> labels) {
  auto x = images.detach(true);
  auto logits = model.forward_frozen(x);
  backward(cross_entropy_loss(logits, labels));
  return {Tensor<T>::from(images.shape(), std::vector<T>(x.grad().begin(), x.grad().end())), logits.detach()};
}

template <typename T>
Tensor<T> input_gradient(const Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels) {
  return input_gradient_with_logits(model, images, labels).gradient;
}

/// Row-wise argmax; ties go to the lowest class index.
template <typename T>
Labels argmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected N x K logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Labels out(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[r * k + j] > logits[r * k + best]) best = j;
    out[r] = best;
  }
  return out;
}

/// Logits without recording parameter gradients.
template <typename T>
Tensor<T> infer(const Model<T>& model, const Tensor<T>& images) {
  return model.forward_frozen(images);
}

template <typename T>
Labels predict(const Model<T>& model, const Tensor<T>& images) {
  return argmax_rows(infer(model, images));
}

}  // namespace advlab
