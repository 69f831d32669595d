#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlab/attack/pgd.hpp"
#include "advlab/data/dataset.hpp"
#include "advlab/models/spec.hpp"
#include "advlab/train/trainer.hpp"

namespace advlab::cli {

enum class DatasetSource { synthetic, directory };

struct DatasetConfig {
  DatasetSource source = DatasetSource::synthetic;
  std::filesystem::path path;  // directory source only, already resolved
  std::string path_as_written;
  std::size_t resolution = 32;
  std::size_t channels = 3;
  std::size_t per_class = 200;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  SplitRatios split{};
};

struct ModelEntry {
  std::string id;
  ClassifierSpec spec;  // resolution, channels and classes filled from the dataset
};

struct RunConfig {
  std::filesystem::path config_path;
  std::uint64_t seed = 0;
  std::filesystem::path output;
  std::string output_as_written = "runs";
  DatasetConfig dataset;
  std::vector<ModelEntry> models;
  TrainConfig train;
  AttackConfig attack;
  std::size_t eval_batch_size = 64;

  const ModelEntry& model(const std::string& id) const;
};

/// Named seed streams. The dataset seed also drives the split; the rest are
/// derived from the root seed.
struct SeedRoots {
  std::uint64_t root = 0;
  std::uint64_t dataset = 0;
  std::uint64_t train = 0;
  std::uint64_t attack = 0;
  std::uint64_t transfer = 0;
  std::uint64_t eval = 0;

  std::uint64_t init(const std::string& model_id) const;
};

SeedRoots seed_roots(const RunConfig& cfg);
nlohmann::ordered_json to_json(const SeedRoots& s);

/// Strict parse: unknown keys and wrongly typed values raise ConfigError
/// naming the offending field path. Relative paths are resolved against the
/// directory holding the config file. `seed_override` replaces the root seed.
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig parse_run_config(const nlohmann::ordered_json& doc, const std::filesystem::path& config_path,
                           std::optional<std::uint64_t> seed_override = std::nullopt);

/// Fully resolved config with every default filled in. Paths appear as
/// written in the file so the echo does not depend on where the run lives.
nlohmann::ordered_json resolved_json(const RunConfig& cfg);

/// Full model spec for `entry` given the dataset geometry and class count.
ClassifierSpec model_spec(const RunConfig& cfg, const ModelEntry& entry, std::size_t classes);

}  // namespace advlab::cli
