#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "advlab/core/rng.hpp"
#include "advlab/data/synth.hpp"

namespace advlab::cli {

namespace {

using Json = nlohmann::ordered_json;

// Reads the members of one JSON object, remembering which keys were used so
// that anything left over can be reported as unknown.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), field(key));
  }

  Section child(const std::string& key) {
    used_.insert(key);
    static const Json empty = Json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

  const Json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config root" : path_; }

  template <typename T>
  static T convert(const Json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(name + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(name + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError(name + ": expected a non-negative integer");
      }
      return static_cast<T>(v.get<std::uint64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(name + ": expected a number");
      return v.get<T>();
    } else {
      static_assert(std::is_same_v<T, std::vector<std::size_t>>);
      if (!v.is_array()) throw ConfigError(name + ": expected an array of integers");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<std::size_t>(v[i], name + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// Re-raises a library validation error with the section it came from.
template <typename F>
void checked(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    throw ConfigError(section + ": " + e.what());
  } catch (const SpecError& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

ModelEntry parse_model(Section s) {
  ModelEntry m;
  const ClassifierSpec d;
  if (!s.has("arch")) throw ConfigError(s.field("arch") + ": required field is missing");
  const auto arch = s.get<std::string>("arch", "");
  try {
    m.spec.arch = parse_architecture(arch);
  } catch (const SpecError& e) {
    throw ConfigError(s.field("arch") + ": " + e.what());
  }
  m.id = s.get<std::string>("id", arch);
  if (m.id.empty() || m.id.find_first_of("/\\,") != std::string::npos || m.id == "." || m.id == "..") {
    throw ConfigError(s.field("id") + ": must be a non-empty name without '/', '\\' or ','");
  }
  m.spec.patch_size = s.get<std::size_t>("patch_size", d.patch_size);
  m.spec.embed_dim = s.get<std::size_t>("embed_dim", d.embed_dim);
  m.spec.heads = s.get<std::size_t>("heads", d.heads);
  m.spec.depth = s.get<std::size_t>("depth", d.depth);
  m.spec.mlp_ratio = s.get<std::size_t>("mlp_ratio", d.mlp_ratio);
  m.spec.widths = s.get<std::vector<std::size_t>>("widths", d.widths);
  m.spec.blocks_per_stage = s.get<std::size_t>("blocks_per_stage", d.blocks_per_stage);
  m.spec.convs_per_block = s.get<std::size_t>("convs_per_block", d.convs_per_block);
  m.spec.dense_width = s.get<std::size_t>("dense_width", d.dense_width);
  s.finish();
  return m;
}

AttackConfig parse_attack(Section s) {
  const AttackConfig d;
  AttackConfig a;
  a.epsilon = s.get<double>("epsilon", d.epsilon);
  a.alpha = s.get<double>("alpha", d.alpha);
  a.steps = s.get<std::size_t>("steps", d.steps);
  a.random_start = s.get<bool>("random_start", d.random_start);
  a.targeted = s.get<bool>("targeted", d.targeted);
  s.finish();
  checked(s.where(), [&] { a.validate(); });
  return a;
}

}  // namespace

const ModelEntry& RunConfig::model(const std::string& id) const {
  for (const auto& m : models)
    if (m.id == id) return m;
  throw UsageError("config has no model with id '" + id + "'");
}

std::uint64_t SeedRoots::init(const std::string& model_id) const { return derive_seed(root, "init:" + model_id, 0); }

SeedRoots seed_roots(const RunConfig& cfg) {
  SeedRoots s;
  s.root = cfg.seed;
  s.dataset = cfg.dataset.seed;
  s.train = derive_seed(cfg.seed, "train", 0);
  s.attack = derive_seed(cfg.seed, "attack", 0);
  s.transfer = derive_seed(cfg.seed, "transfer", 0);
  s.eval = derive_seed(cfg.seed, "eval", 0);
  return s;
}

nlohmann::ordered_json to_json(const SeedRoots& s) {
  return {{"root", s.root},         {"dataset", s.dataset}, {"train", s.train},
          {"attack", s.attack},     {"transfer", s.transfer}, {"eval", s.eval}};
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  Json doc;
  try {
    doc = Json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc, path, seed_override);
}

RunConfig parse_run_config(const nlohmann::ordered_json& doc, const std::filesystem::path& config_path,
                           std::optional<std::uint64_t> seed_override) {
  namespace fs = std::filesystem;
  RunConfig cfg;
  cfg.config_path = config_path;
  const fs::path base = config_path.parent_path();

  Section root(doc, "");
  cfg.seed = root.get<std::uint64_t>("seed", 0);
  if (seed_override) cfg.seed = *seed_override;
  cfg.output_as_written = root.get<std::string>("output", "runs");
  cfg.output = base / cfg.output_as_written;

  {
    auto s = root.child("dataset");
    const auto source = s.get<std::string>("source", "synthetic");
    if (source == "synthetic") cfg.dataset.source = DatasetSource::synthetic;
    else if (source == "directory") cfg.dataset.source = DatasetSource::directory;
    else throw ConfigError(s.field("source") + ": expected \"synthetic\" or \"directory\", got \"" + source + "\"");
    cfg.dataset.path_as_written = s.get<std::string>("path", "");
    if (cfg.dataset.source == DatasetSource::directory) {
      if (cfg.dataset.path_as_written.empty()) throw ConfigError(s.field("path") + ": required for a directory source");
      cfg.dataset.path = base / cfg.dataset.path_as_written;
    } else if (!cfg.dataset.path_as_written.empty()) {
      throw ConfigError(s.field("path") + ": only valid for a directory source");
    }
    cfg.dataset.resolution = s.get<std::size_t>("resolution", 32);
    cfg.dataset.channels = s.get<std::size_t>("channels", 3);
    cfg.dataset.per_class = s.get<std::size_t>("per_class", 200);
    cfg.dataset.noise_std = s.get<double>("noise_std", 0.05);
    cfg.dataset.seed = s.get<std::uint64_t>("seed", cfg.seed);
    if (seed_override) cfg.dataset.seed = *seed_override;
    auto sp = s.child("split");
    cfg.dataset.split.train = sp.get<double>("train", 0.8);
    cfg.dataset.split.val = sp.get<double>("val", 0.1);
    sp.finish();
    s.finish();
    const auto& d = cfg.dataset;
    if (d.resolution == 0) throw ConfigError(s.field("resolution") + ": must be positive");
    if (d.channels != 1 && d.channels != 3) throw ConfigError(s.field("channels") + ": must be 1 or 3");
    if (d.source == DatasetSource::synthetic) {
      if (d.channels != kSynthChannels) throw ConfigError(s.field("channels") + ": the synthetic source has 3 channels");
      if (d.per_class < 1) throw ConfigError(s.field("per_class") + ": must be at least 1");
      if (!(d.noise_std >= 0.0)) throw ConfigError(s.field("noise_std") + ": must be >= 0");
    }
    if (!(d.split.train > 0.0 && d.split.val > 0.0 && d.split.train + d.split.val < 1.0)) {
      throw ConfigError(s.field("split") + ": train and val must be positive and sum to less than 1");
    }
  }

  if (root.has("model") && root.has("models")) throw ConfigError("model: give either 'model' or 'models', not both");
  if (root.has("models")) {
    const auto& arr = root.raw("models");
    if (!arr.is_array() || arr.empty()) throw ConfigError("models: expected a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      cfg.models.push_back(parse_model(Section(arr[i], "models[" + std::to_string(i) + "]")));
  } else {
    if (!root.has("model")) throw ConfigError("model: required section is missing");
    cfg.models.push_back(parse_model(root.child("model")));
  }
  for (std::size_t i = 0; i < cfg.models.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (cfg.models[i].id == cfg.models[j].id) throw ConfigError("models: duplicate id '" + cfg.models[i].id + "'");

  {
    auto s = root.child("train");
    const TrainConfig d;
    cfg.train.learning_rate = s.get<double>("lr", d.learning_rate);
    cfg.train.batch_size = s.get<std::size_t>("batch_size", d.batch_size);
    cfg.train.epochs = s.get<std::size_t>("epochs", d.epochs);
    cfg.train.optimizer = s.get<std::string>("optimizer", d.optimizer);
    cfg.train.mix_ratio = s.get<double>("mix_ratio", d.mix_ratio);
    cfg.train.augment = s.get<bool>("augment", d.augment);
    cfg.eval_batch_size = s.get<std::size_t>("eval_batch_size", 64);
    s.finish();
    if (cfg.eval_batch_size < 1) throw ConfigError(s.field("eval_batch_size") + ": must be at least 1");
  }

  cfg.attack = parse_attack(root.child("attack"));
  cfg.train.attack = cfg.attack;
  cfg.train.seed = seed_roots(cfg).train;
  checked("train", [&] { cfg.train.validate(); });
  root.finish();

  for (const auto& m : cfg.models) {
    checked(m.id, [&] {
      model_spec(cfg, m, cfg.dataset.source == DatasetSource::synthetic ? kSynthClasses : 2).validate();
    });
  }
  return cfg;
}

ClassifierSpec model_spec(const RunConfig& cfg, const ModelEntry& entry, std::size_t classes) {
  ClassifierSpec s = entry.spec;
  s.resolution = cfg.dataset.resolution;
  s.channels = cfg.dataset.channels;
  s.classes = classes;
  return s;
}

nlohmann::ordered_json resolved_json(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  Json dataset{{"source", d.source == DatasetSource::synthetic ? "synthetic" : "directory"}};
  if (d.source == DatasetSource::directory) dataset["path"] = d.path_as_written;
  dataset["resolution"] = d.resolution;
  dataset["channels"] = d.channels;
  if (d.source == DatasetSource::synthetic) {
    dataset["per_class"] = d.per_class;
    dataset["noise_std"] = d.noise_std;
  }
  dataset["seed"] = d.seed;
  dataset["split"] = {{"train", d.split.train}, {"val", d.split.val}};

  Json models = Json::array();
  for (const auto& m : cfg.models) {
    Json j{{"id", m.id}, {"arch", to_string(m.spec.arch)}};
    if (m.spec.arch == Architecture::vit) {
      j["patch_size"] = m.spec.patch_size;
      j["embed_dim"] = m.spec.embed_dim;
      j["heads"] = m.spec.heads;
      j["depth"] = m.spec.depth;
      j["mlp_ratio"] = m.spec.mlp_ratio;
    } else {
      j["widths"] = m.spec.widths;
      if (m.spec.arch == Architecture::resnet) j["blocks_per_stage"] = m.spec.blocks_per_stage;
      else {
        j["convs_per_block"] = m.spec.convs_per_block;
        j["dense_width"] = m.spec.dense_width;
      }
    }
    models.push_back(std::move(j));
  }

  const auto& t = cfg.train;
  Json train{{"lr", t.learning_rate},     {"batch_size", t.batch_size}, {"epochs", t.epochs},
             {"optimizer", t.optimizer},  {"mix_ratio", t.mix_ratio},   {"augment", t.augment},
             {"eval_batch_size", cfg.eval_batch_size}};
  Json attack;
  to_json(attack, cfg.attack);
  return {{"seed", cfg.seed},   {"output", cfg.output_as_written}, {"dataset", dataset},
          {"models", models},   {"train", train},                  {"attack", attack}};
}

}  // namespace advlab::cli
