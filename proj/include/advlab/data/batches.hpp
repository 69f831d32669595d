#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "advlab/core/rng.hpp"
#include "advlab/data/dataset.hpp"

namespace advlab {

struct Batch {
  Tensor<float> images;  // N x C x H x W
  Labels labels;
  std::vector<std::string> ids;
  std::vector<std::size_t> indices;  // positions in the source split

  std::size_t size() const { return labels.size(); }
};

/// One pass over a split in fixed-size batches. A shuffle seed yields a
/// seeded Fisher-Yates permutation; without one the split order is kept. The
/// final batch may be short.
class BatchIterator {
 public:
  BatchIterator(const DatasetSplit& split, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed = {})
      : split_(&split), batch_size_(batch_size), order_(split.size()) {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (split.empty()) throw DatasetError("cannot iterate over empty split '" + to_string(split.tag) + "'");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_seed) {
      Rng rng(*shuffle_seed);
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
    }
  }

  std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }

  bool next(Batch& out) {
    if (pos_ >= order_.size()) return false;
    const std::size_t end = std::min(pos_ + batch_size_, order_.size());
    out.indices.assign(order_.begin() + static_cast<long>(pos_), order_.begin() + static_cast<long>(end));
    out.images = stack_images(*split_, out.indices);
    out.labels.clear();
    out.ids.clear();
    for (std::size_t i : out.indices) {
      out.labels.push_back(split_->samples[i].label());
      out.ids.push_back(split_->samples[i].id());
    }
    pos_ = end;
    return true;
  }

 private:
  const DatasetSplit* split_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline BatchIterator batch_iterator(const DatasetSplit& split, std::size_t batch_size,
                                    std::optional<std::uint64_t> shuffle_seed = {}) {
  return BatchIterator(split, batch_size, shuffle_seed);
}

}  // namespace advlab
