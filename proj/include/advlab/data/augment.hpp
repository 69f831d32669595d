#pragma once

#include <cstddef>
#include <vector>

#include "advlab/core/rng.hpp"
#include "advlab/data/dataset.hpp"

namespace advlab {

/// Mirror index without repeating the edge pixel: -1 -> 1, n -> n-2.
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

struct AugmentDecision {
  bool flip = false;
  std::size_t dx = 0;  // crop offset into the padded image
  std::size_t dy = 0;

  bool operator==(const AugmentDecision&) const = default;
};

inline constexpr std::size_t kAugmentPad = 4;

/// Draws flip first, then the horizontal and vertical crop offsets.
inline AugmentDecision draw_augmentation(Rng& rng, std::size_t pad = kAugmentPad) {
  AugmentDecision d;
  d.flip = rng.bernoulli(0.5);
  d.dx = rng.below(2 * pad + 1);
  d.dy = rng.below(2 * pad + 1);
  return d;
}

inline Tensor<float> horizontal_flip(const Tensor<float>& image) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<float> out(image.size());
  const auto& v = image.values();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(ch * h + y) * w + x] = v[(ch * h + y) * w + (w - 1 - x)];
  return Tensor<float>::from(image.shape(), std::move(out));
}

/// Optional flip, then a reflect-padded crop back to the original size.
/// Offset (pad, pad) with no flip is the identity.
inline Tensor<float> apply_augmentation(const Tensor<float>& image, const AugmentDecision& d,
                                        std::size_t pad = kAugmentPad) {
  if (d.dx > 2 * pad || d.dy > 2 * pad) throw ParameterError("crop offset exceeds padded extent");
  const Tensor<float> src = d.flip ? horizontal_flip(image) : image;
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  const auto& v = src.values();
  std::vector<float> out(src.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = reflect_index(static_cast<long>(y + d.dy) - static_cast<long>(pad), h);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = reflect_index(static_cast<long>(x + d.dx) - static_cast<long>(pad), w);
        out[(ch * h + y) * w + x] = v[(ch * h + sy) * w + sx];
      }
    }
  }
  return Tensor<float>::from(src.shape(), std::move(out));
}

inline Sample augment(const Sample& sample, Rng& rng) {
  return Sample(apply_augmentation(sample.image(), draw_augmentation(rng)), sample.label(), sample.id());
}

}  // namespace advlab
