#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "advlab/core/rng.hpp"
#include "advlab/data/dataset.hpp"

namespace advlab {

/// Knobs of the synthetic five-class generator. Geometry is expressed on a
/// 32-pixel canvas and scaled to `resolution`.
struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t per_class = 200;
  std::size_t resolution = 32;
  double noise_std = 0.05;
  double blob_amplitude = 0.4;
  double texture_amplitude = 0.08;
  double center_jitter = 1.5;
  double brightness_jitter = 0.1;
};

inline constexpr std::size_t kSynthClasses = 5;
inline constexpr std::size_t kSynthChannels = 3;

namespace detail {

struct SynthClass {
  std::vector<std::array<double, 2>> centers;  // (x, y)
  std::array<double, kSynthChannels> color;
  double frequency;
};

inline std::vector<SynthClass> synth_classes(std::uint64_t seed, double scale) {
  Rng rng(derive_seed(seed, "synth:classes"));
  std::vector<SynthClass> out(kSynthClasses);
  for (std::size_t k = 0; k < kSynthClasses; ++k) {
    for (std::size_t b = 0; b <= k; ++b) {
      const double x = rng.uniform(6.0, 26.0) * scale;
      const double y = rng.uniform(6.0, 26.0) * scale;
      out[k].centers.push_back({x, y});
    }
    // Scaled so the strongest channel has magnitude one: every class gets
    // full blob contrast whatever the draw.
    double peak = 0.0;
    for (double& c : out[k].color) {
      c = rng.uniform(-1.0, 1.0);
      peak = std::max(peak, std::abs(c));
    }
    for (double& c : out[k].color) c /= peak;
    out[k].frequency = static_cast<double>(k) + 1.5;
  }
  return out;
}

}  // namespace detail

/// Class k is a mixture of k+1 colored Gaussian blobs at seeded positions plus
/// an oriented sinusoid of class-specific frequency, with per-sample jitter,
/// brightness offset and additive Gaussian noise, clamped to [0,1]. Samples
/// are emitted class by class.
inline DatasetSplit synth_dataset(const SynthConfig& cfg) {
  if (cfg.per_class < 1) throw ConfigError("synth per_class must be at least 1");
  if (cfg.resolution < 1) throw ConfigError("synth resolution must be at least 1");
  if (!(cfg.noise_std >= 0.0)) throw ConfigError("synth noise_std must be non-negative");

  const std::size_t r = cfg.resolution;
  const double scale = static_cast<double>(r) / 32.0;
  const auto classes = detail::synth_classes(cfg.seed, scale);
  const double two_pi = 2.0 * std::numbers::pi;

  DatasetSplit split;
  split.tag = SplitTag::train;
  for (std::size_t k = 0; k < kSynthClasses; ++k) split.class_names.push_back("class" + std::to_string(k));
  split.samples.reserve(kSynthClasses * cfg.per_class);

  std::vector<double> img(kSynthChannels * r * r);
  for (std::size_t k = 0; k < kSynthClasses; ++k) {
    const auto& cls = classes[k];
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      Rng rng(derive_seed(cfg.seed, "synth:sample", k * cfg.per_class + i));
      std::fill(img.begin(), img.end(), 0.5 + rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter));

      for (const auto& center : cls.centers) {
        const double cx = center[0] + rng.normal(0.0, cfg.center_jitter * scale);
        const double cy = center[1] + rng.normal(0.0, cfg.center_jitter * scale);
        const double s = rng.uniform(2.5, 4.0) * scale;
        const double inv = 1.0 / (2.0 * s * s);
        for (std::size_t y = 0; y < r; ++y) {
          for (std::size_t x = 0; x < r; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double g = cfg.blob_amplitude * std::exp(-(dx * dx + dy * dy) * inv);
            for (std::size_t c = 0; c < kSynthChannels; ++c) img[(c * r + y) * r + x] += cls.color[c] * g;
          }
        }
      }

      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double phase = rng.uniform(0.0, two_pi);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t y = 0; y < r; ++y) {
        for (std::size_t x = 0; x < r; ++x) {
          const double u = static_cast<double>(x) * ct + static_cast<double>(y) * st;
          const double t = cfg.texture_amplitude * std::sin(two_pi * cls.frequency * u / static_cast<double>(r) + phase);
          for (std::size_t c = 0; c < kSynthChannels; ++c) img[(c * r + y) * r + x] += t;
        }
      }

      std::vector<float> pixels(img.size());
      for (std::size_t j = 0; j < img.size(); ++j) {
        const double noisy = cfg.noise_std > 0.0 ? img[j] + rng.normal(0.0, cfg.noise_std) : img[j];
        pixels[j] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
      char id[48];
      std::snprintf(id, sizeof id, "synth-%zu-%05zu", k, i);
      split.samples.emplace_back(Tensor<float>::from({kSynthChannels, r, r}, std::move(pixels)), k, id);
    }
  }
  return split;
}

inline DatasetSplit synth_dataset(std::uint64_t seed, std::size_t per_class, std::size_t resolution,
                                  double noise_std) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.per_class = per_class;
  cfg.resolution = resolution;
  cfg.noise_std = noise_std;
  return synth_dataset(cfg);
}

}  // namespace advlab
