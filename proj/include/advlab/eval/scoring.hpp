#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advlab/attack/pgd.hpp"
#include "advlab/data/batches.hpp"

namespace advlab {

/// Per-sample outcome of running a model over a split, clean and optionally
/// under a white-box attack.
struct SplitScore {
  Labels labels;
  Labels clean_prediction;
  Labels adversarial_prediction;  // empty without an attack
  std::vector<double> clean_loss;
  std::vector<double> loss_initial;  // attack loss trajectory endpoints
  std::vector<double> loss_final;

  static double accuracy(const Labels& truth, const Labels& pred) {
    if (truth.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
    return static_cast<double>(hit) / static_cast<double>(truth.size());
  }
  double clean_accuracy() const { return accuracy(labels, clean_prediction); }
  double adversarial_accuracy() const { return accuracy(labels, adversarial_prediction); }
  double mean_clean_loss() const {
    double s = 0.0;
    for (double v : clean_loss) s += v;
    return clean_loss.empty() ? 0.0 : s / static_cast<double>(clean_loss.size());
  }
};

/// Attack seeds are derived per batch from `seed`, so a split scored twice
/// with the same arguments gives identical results.
template <typename T>
SplitScore score_split(const Model<T>& model, const DatasetSplit& split, std::size_t batch_size,
                       const std::optional<AttackConfig>& attack = std::nullopt, std::uint64_t seed = 0) {
  SplitScore out;
  auto it = batch_iterator(split, batch_size);
  Batch b;
  std::size_t index = 0;
  while (it.next(b)) {
    const Tensor<T> images = [&] {
      if constexpr (std::is_same_v<T, float>) return b.images;
      else return b.images.template cast<T>();
    }();
    const auto logits = infer(model, images);
    const auto pred = argmax_rows(logits);
    const auto losses = cross_entropy_per_sample(logits, b.labels);
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.clean_prediction.insert(out.clean_prediction.end(), pred.begin(), pred.end());
    out.clean_loss.insert(out.clean_loss.end(), losses.begin(), losses.end());
    if (attack) {
      const auto r = pgd_attack(model, images, b.labels, *attack, derive_seed(seed, "eval:attack", index),
                                "batch " + std::to_string(index));
      out.adversarial_prediction.insert(out.adversarial_prediction.end(), r.adversarial_prediction.begin(),
                                        r.adversarial_prediction.end());
      for (const auto& traj : r.loss_trajectory) {
        out.loss_initial.push_back(traj.front());
        out.loss_final.push_back(traj.back());
      }
    }
    ++index;
  }
  return out;
}

}  // namespace advlab
