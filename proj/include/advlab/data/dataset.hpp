#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "advlab/core/error.hpp"
#include "advlab/core/rng.hpp"
#include "advlab/tensor/tensor.hpp"

namespace advlab {

enum class SplitTag { train, val, test };

inline std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "?";
}

/// One labeled image in pixel space. The image is C x H x W with every value
/// in [0,1]; construction rejects anything else.
class Sample {
 public:
  Sample(Tensor<float> image, std::size_t label, std::string id)
      : image_(std::move(image)), label_(label), id_(std::move(id)) {
    if (image_.rank() != 3) {
      throw DimensionError("sample '" + id_ + "' must be C x H x W, got " + to_string(image_.shape()));
    }
    for (float v : image_.values()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw InputError("sample '" + id_ + "' has a pixel outside [0,1]");
    }
  }

  const Tensor<float>& image() const { return image_; }
  std::size_t label() const { return label_; }
  const std::string& id() const { return id_; }

 private:
  Tensor<float> image_;
  std::size_t label_;
  std::string id_;
};

struct DatasetSplit {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  SplitTag tag = SplitTag::train;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t num_classes() const { return class_names.size(); }

  const Shape& image_shape() const {
    if (samples.empty()) throw DatasetError("split '" + to_string(tag) + "' is empty");
    return samples.front().image().shape();
  }

  /// Checks label range, id uniqueness and a common image shape.
  void validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& s : samples) {
      if (s.label() >= class_names.size()) {
        throw DatasetError("sample '" + s.id() + "' has label " + std::to_string(s.label()) + " but only " +
                           std::to_string(class_names.size()) + " classes exist");
      }
      if (!ids.insert(s.id()).second) throw DatasetError("duplicate sample id '" + s.id() + "'");
      if (s.image().shape() != samples.front().image().shape()) {
        throw DatasetError("sample '" + s.id() + "' has shape " + to_string(s.image().shape()) +
                           ", expected " + to_string(samples.front().image().shape()));
      }
    }
  }

  Labels labels() const {
    Labels out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label());
    return out;
  }
};

/// Stacks the selected samples into an N x C x H x W batch.
inline Tensor<float> stack_images(const DatasetSplit& split, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DatasetError("cannot stack an empty selection");
  const Shape& s = split.samples.at(indices.front()).image().shape();
  const std::size_t per = numel(s);
  std::vector<float> out;
  out.reserve(per * indices.size());
  for (std::size_t i : indices) {
    const auto& img = split.samples.at(i).image();
    if (img.shape() != s) throw DatasetError("sample '" + split.samples[i].id() + "' has a different shape");
    out.insert(out.end(), img.values().begin(), img.values().end());
  }
  return Tensor<float>::from({indices.size(), s[0], s[1], s[2]}, std::move(out));
}

inline Tensor<float> stack_images(const DatasetSplit& split) {
  std::vector<std::size_t> all(split.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return stack_images(split, all);
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
};

struct TrainValTest {
  DatasetSplit train, val, test;
};

/// Stratified split: each class is shuffled with its own seeded stream and cut
/// at floor(ratio * count), with the remainder going to test. Sample order
/// within each split follows the source order.
inline TrainValTest split_dataset(const DatasetSplit& all, std::uint64_t seed, SplitRatios ratios = {}) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.train + ratios.val > 1.0) {
    throw ConfigError("split ratios must be non-negative and sum to at most 1");
  }
  std::vector<std::vector<std::size_t>> by_class(all.num_classes());
  for (std::size_t i = 0; i < all.size(); ++i) by_class.at(all.samples[i].label()).push_back(i);

  std::vector<SplitTag> assignment(all.size(), SplitTag::test);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    Rng rng(derive_seed(seed, "split", k));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const auto n_train = static_cast<std::size_t>(ratios.train * static_cast<double>(idx.size()) + 1e-9);
    const auto n_val = static_cast<std::size_t>(ratios.val * static_cast<double>(idx.size()) + 1e-9);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      assignment[idx[j]] = j < n_train ? SplitTag::train : j < n_train + n_val ? SplitTag::val : SplitTag::test;
    }
  }

  TrainValTest out;
  for (auto* s : {&out.train, &out.val, &out.test}) s->class_names = all.class_names;
  out.train.tag = SplitTag::train;
  out.val.tag = SplitTag::val;
  out.test.tag = SplitTag::test;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& dst = assignment[i] == SplitTag::train ? out.train : assignment[i] == SplitTag::val ? out.val : out.test;
    dst.samples.push_back(all.samples[i]);
  }
  return out;
}

/// Per-channel mean image of each class, used by the centroid baseline.
inline std::vector<std::vector<double>> class_centroids(const DatasetSplit& split) {
  const std::size_t per = numel(split.image_shape());
  std::vector<std::vector<double>> sums(split.num_classes(), std::vector<double>(per, 0.0));
  std::vector<std::size_t> counts(split.num_classes(), 0);
  for (const auto& s : split.samples) {
    auto& acc = sums[s.label()];
    for (std::size_t i = 0; i < per; ++i) acc[i] += s.image()[i];
    ++counts[s.label()];
  }
  for (std::size_t k = 0; k < sums.size(); ++k) {
    if (counts[k] == 0) continue;
    for (double& v : sums[k]) v /= static_cast<double>(counts[k]);
  }
  return sums;
}

}  // namespace advlab
