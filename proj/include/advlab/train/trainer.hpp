#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlab/attack/pgd.hpp"
#include "advlab/core/format.hpp"
#include "advlab/data/augment.hpp"
#include "advlab/data/batches.hpp"
#include "advlab/eval/scoring.hpp"
#include "advlab/models/checkpoint.hpp"
#include "advlab/train/adam.hpp"

namespace advlab {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::string optimizer = "adam";
  bool adversarial = false;
  double mix_ratio = 0.5;
  AttackConfig attack{};
  std::uint64_t seed = 0;
  bool augment = true;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (optimizer != "adam") throw ConfigError("optimizer must be \"adam\", got \"" + optimizer + "\"");
    if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("mix_ratio must lie in [0,1]");
    attack.validate();
  }
};

inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
       {"optimizer", c.optimizer},         {"adversarial", c.adversarial}, {"mix_ratio", c.mix_ratio},
       {"attack", c.attack},               {"seed", c.seed},               {"augment", c.augment}};
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;
  double acc = 0;
  double val_loss = 0;
  double val_acc = 0;
  std::optional<double> adv_val_acc;
  double seconds = 0;
};

/// Formats with 6 significant digits, the precision used by every emitted table.
struct TrainLog {
  std::vector<EpochRecord> epochs;

  static constexpr const char* kCsvHeader = "epoch,loss,acc,val_loss,val_acc,adv_val_acc,seconds";

  std::string to_csv() const {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& e : epochs) {
      os << e.epoch << ',' << format_g6(e.loss) << ',' << format_g6(e.acc) << ',' << format_g6(e.val_loss) << ','
         << format_g6(e.val_acc) << ',' << (e.adv_val_acc ? format_g6(*e.adv_val_acc) : "") << ','
         << format_g6(e.seconds) << '\n';
    }
    return os.str();
  }

  nlohmann::ordered_json to_json(bool with_seconds = true) const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : epochs) {
      nlohmann::ordered_json j{{"epoch", e.epoch},       {"loss", e.loss},       {"acc", e.acc},
                               {"val_loss", e.val_loss}, {"val_acc", e.val_acc},
                               {"adv_val_acc", e.adv_val_acc ? nlohmann::ordered_json(*e.adv_val_acc) : nlohmann::ordered_json(nullptr)}};
      if (with_seconds) j["seconds"] = e.seconds;
      arr.push_back(std::move(j));
    }
    return {{"epochs", arr}};
  }

  static TrainLog from_json(const nlohmann::ordered_json& j) {
    TrainLog log;
    for (const auto& e : j.at("epochs")) {
      EpochRecord r;
      r.epoch = e.at("epoch").get<std::size_t>();
      r.loss = e.at("loss").get<double>();
      r.acc = e.at("acc").get<double>();
      r.val_loss = e.at("val_loss").get<double>();
      r.val_acc = e.at("val_acc").get<double>();
      if (!e.at("adv_val_acc").is_null()) r.adv_val_acc = e.at("adv_val_acc").get<double>();
      r.seconds = e.value("seconds", 0.0);
      log.epochs.push_back(r);
    }
    return log;
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "trainlog.csv") << to_csv();
    std::ofstream(dir / "trainlog.json") << to_json().dump(2) << '\n';
  }
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // best.json / final.json written here
  std::optional<std::filesystem::path> resume_from;     // a final.json from an earlier run
  std::ostream* progress = nullptr;
  std::size_t eval_batch_size = 64;
};

struct TrainResult {
  TrainLog log;
  std::size_t best_epoch = 0;
  double best_metric = -1.0;
  std::size_t optimizer_steps = 0;
};

/// Number of adversarial samples in a mixed batch of n.
inline std::size_t adversarial_count(double mix_ratio, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(mix_ratio * static_cast<double>(n) - 1e-12));
}

namespace detail {

inline nlohmann::ordered_json train_metadata(const TrainConfig& cfg, const TrainLog& log, std::size_t best_epoch,
                                             double best_metric, const std::string& kind) {
  return {{"kind", kind},
          {"train", cfg},
          {"epochs_completed", log.epochs.size()},
          {"best_epoch", best_epoch},
          {"best_metric", best_metric},
          {"log", log.to_json(false)}};
}

}  // namespace detail

/// Mini-batch training with Adam. Each epoch reshuffles with the stream
/// ("train:shuffle", epoch), augments with ("train:augment", epoch) and, for
/// adversarial training, seeds each batch attack with ("train:attack",
/// epoch, batch). The first ceil(mix_ratio * n) samples of every shuffled
/// batch are replaced by PGD examples crafted against the current parameters;
/// no attack runs when that count is zero. Model selection uses clean
/// validation accuracy, or adversarial validation accuracy when training
/// adversarially.
inline TrainResult train(Model<float>& model, const DatasetSplit& train_split, const DatasetSplit& val_split,
                         const TrainConfig& cfg, const TrainOptions& opts = {}) {
  cfg.validate();
  if (train_split.empty()) throw DatasetError("training split is empty");
  if (val_split.empty()) throw DatasetError("validation split is empty");
  const std::string kind = cfg.adversarial ? "adversarial" : "clean";
  Adam<float> adam(cfg.learning_rate);
  TrainResult result;

  std::size_t start_epoch = 0;
  if (opts.resume_from) {
    auto ck = load_checkpoint(*opts.resume_from);
    if (!(ck.model.spec() == model.spec())) throw CheckpointError("resume checkpoint has a different model spec");
    auto& dst = model.parameters();
    for (const auto& [name, src] : ck.model.parameters()) {
      auto data = dst.at(name).mutable_data();
      std::copy(src.values().begin(), src.values().end(), data.begin());
    }
    adam.import_state(model.parameters(), ck.extra);
    result.log = TrainLog::from_json(ck.metadata.at("log"));
    result.best_epoch = ck.metadata.at("best_epoch").get<std::size_t>();
    result.best_metric = ck.metadata.at("best_metric").get<double>();
    start_epoch = result.log.epochs.size();
  }

  const auto save = [&](const std::string& stem) {
    if (!opts.checkpoint_dir) return;
    save_checkpoint(*opts.checkpoint_dir / (stem + ".json"), model, adam.export_state(model.parameters()),
                    detail::train_metadata(cfg, result.log, result.best_epoch, result.best_metric, kind));
  };

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto it = batch_iterator(train_split, cfg.batch_size, derive_seed(cfg.seed, "train:shuffle", epoch));
    Rng aug_rng(derive_seed(cfg.seed, "train:augment", epoch));
    Batch b;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    while (it.next(b)) {
      Tensor<float> images = b.images;
      if (cfg.augment) {
        std::vector<float> v;
        v.reserve(images.size());
        for (std::size_t s = 0; s < b.size(); ++s) {
          const auto& img = train_split.samples[b.indices[s]].image();
          const auto out = apply_augmentation(img, draw_augmentation(aug_rng));
          v.insert(v.end(), out.values().begin(), out.values().end());
        }
        images = Tensor<float>::from(images.shape(), std::move(v));
      }
      if (cfg.adversarial) {
        const std::size_t k = std::min(adversarial_count(cfg.mix_ratio, b.size()), b.size());
        if (k > 0) {
          const std::size_t per = images.size() / b.size();
          std::vector<float> head(images.values().begin(), images.values().begin() + static_cast<long>(k * per));
          Shape hs = images.shape();
          hs[0] = k;
          const Labels head_labels(b.labels.begin(), b.labels.begin() + static_cast<long>(k));
          const auto r = pgd_attack(model, Tensor<float>::from(hs, std::move(head)), head_labels, cfg.attack,
                                    derive_seed(cfg.seed, "train:attack", (epoch << 32) | batch_index),
                                    "epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_index));
          std::vector<float> mixed(images.values());
          std::copy(r.adversarial.values().begin(), r.adversarial.values().end(), mixed.begin());
          images = Tensor<float>::from(images.shape(), std::move(mixed));
        }
      }

      const auto logits = model.forward(images);
      const auto loss = cross_entropy_loss(logits, b.labels);
      if (!std::isfinite(loss.item())) {
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch + 1) + " batch " +
                            std::to_string(batch_index));
      }
      backward(loss);
      try {
        adam.step(model.parameters());
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + " batch " +
                            std::to_string(batch_index));
      }
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b.size());
      const auto pred = argmax_rows(logits);
      for (std::size_t s = 0; s < b.size(); ++s) correct += pred[s] == b.labels[s];
      seen += b.size();
      ++batch_index;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / static_cast<double>(seen);
    rec.acc = static_cast<double>(correct) / static_cast<double>(seen);
    const auto val = score_split(model, val_split, opts.eval_batch_size,
                                 cfg.adversarial ? std::optional<AttackConfig>(cfg.attack) : std::nullopt,
                                 derive_seed(cfg.seed, "train:val", epoch));
    rec.val_loss = val.mean_clean_loss();
    rec.val_acc = val.clean_accuracy();
    if (cfg.adversarial) rec.adv_val_acc = val.adversarial_accuracy();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);

    const double metric = cfg.adversarial ? *rec.adv_val_acc : rec.val_acc;
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = rec.epoch;
      save("best");
    }
    save("final");
    if (opts.progress) {
      *opts.progress << kind << " epoch " << rec.epoch << "/" << cfg.epochs << " loss " << format_g6(rec.loss)
                     << " acc " << format_g6(rec.acc) << " val_acc " << format_g6(rec.val_acc);
      if (rec.adv_val_acc) *opts.progress << " adv_val_acc " << format_g6(*rec.adv_val_acc);
      *opts.progress << " (" << format_g6(rec.seconds) << " s)" << std::endl;
    }
  }
  result.optimizer_steps = adam.steps();
  if (opts.checkpoint_dir) result.log.write(*opts.checkpoint_dir);
  return result;
}

inline TrainResult train_clean(Model<float>& model, const DatasetSplit& train_split, const DatasetSplit& val_split,
                               const TrainConfig& cfg, const TrainOptions& opts = {}) {
  if (cfg.adversarial) throw ConfigError("train_clean called with the adversarial flag set");
  return train(model, train_split, val_split, cfg, opts);
}

inline TrainResult train_adversarial(Model<float>& model, const DatasetSplit& train_split,
                                     const DatasetSplit& val_split, const TrainConfig& cfg,
                                     const TrainOptions& opts = {}) {
  if (!cfg.adversarial) throw ConfigError("train_adversarial called without the adversarial flag");
  return train(model, train_split, val_split, cfg, opts);
}

}  // namespace advlab
