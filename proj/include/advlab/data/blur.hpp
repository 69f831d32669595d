#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "advlab/data/augment.hpp"
#include "advlab/tensor/tensor.hpp"

namespace advlab {

/// Normalized 1-D Gaussian of radius ceil(3 sigma), length 2*radius+1.
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("gaussian blur sigma must be positive, got " + std::to_string(sigma));
  }
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : k) w /= total;
  return k;
}

/// Separable blur of a C x H x W image with reflect padding; output clamped to [0,1].
inline Tensor<float> gaussian_blur(const Tensor<float>& image, double sigma) {
  const auto k = gaussian_kernel(sigma);
  if (image.rank() != 3) throw DimensionError("gaussian_blur expects C x H x W, got " + to_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const long radius = static_cast<long>(k.size() / 2);
  const auto& v = image.values();
  std::vector<double> rows(image.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t)
          acc += k[static_cast<std::size_t>(t + radius)] *
                 v[(ch * h + y) * w + reflect_index(static_cast<long>(x) + t, w)];
        rows[(ch * h + y) * w + x] = acc;
      }
  std::vector<float> out(image.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t)
          acc += k[static_cast<std::size_t>(t + radius)] *
                 rows[(ch * h + reflect_index(static_cast<long>(y) + t, h)) * w + x];
        out[(ch * h + y) * w + x] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
  return Tensor<float>::from(image.shape(), std::move(out));
}

/// Blurs every image of an N x C x H x W batch.
inline Tensor<float> gaussian_blur_batch(const Tensor<float>& batch, double sigma) {
  if (batch.rank() != 4) throw DimensionError("gaussian_blur_batch expects N x C x H x W");
  const Shape one{batch.dim(1), batch.dim(2), batch.dim(3)};
  const std::size_t per = numel(one);
  std::vector<float> out;
  out.reserve(batch.size());
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    std::vector<float> img(batch.values().begin() + static_cast<long>(n * per),
                           batch.values().begin() + static_cast<long>((n + 1) * per));
    auto blurred = gaussian_blur(Tensor<float>::from(one, std::move(img)), sigma);
    out.insert(out.end(), blurred.values().begin(), blurred.values().end());
  }
  return Tensor<float>::from(batch.shape(), std::move(out));
}

}  // namespace advlab
