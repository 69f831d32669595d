#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlab/core/format.hpp"
#include "advlab/core/rng.hpp"
#include "advlab/eval/scoring.hpp"

namespace advlab {

using ConfusionMatrix = std::vector<std::vector<std::uint64_t>>;

/// Confusion matrix (rows true class, columns predicted class) with the
/// scores derived from it. Every score is a quotient of two matrix entries
/// or sums, so it can be recomputed from the matrix exactly.
struct ClassScores {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::vector<double> precision;  // 0 for a class that is never predicted
  std::vector<double> recall;     // 0 for a class with no samples

  static ClassScores from_confusion(ConfusionMatrix m) {
    ClassScores s;
    const std::size_t k = m.size();
    std::uint64_t total = 0, trace = 0;
    std::vector<std::uint64_t> col(k, 0), row(k, 0);
    for (std::size_t i = 0; i < k; ++i) {
      if (m[i].size() != k) throw DimensionError("confusion matrix is not square");
      for (std::size_t j = 0; j < k; ++j) {
        total += m[i][j];
        row[i] += m[i][j];
        col[j] += m[i][j];
      }
      trace += m[i][i];
    }
    auto ratio = [](std::uint64_t a, std::uint64_t b) {
      return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
    };
    s.accuracy = ratio(trace, total);
    for (std::size_t i = 0; i < k; ++i) {
      s.precision.push_back(ratio(m[i][i], col[i]));
      s.recall.push_back(ratio(m[i][i], row[i]));
    }
    s.confusion = std::move(m);
    return s;
  }

  static ClassScores tally(std::size_t classes, const Labels& truth, const Labels& pred) {
    ConfusionMatrix m(classes, std::vector<std::uint64_t>(classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] >= classes || pred[i] >= classes) throw DimensionError("label outside the class range");
      ++m[truth[i]][pred[i]];
    }
    return from_confusion(std::move(m));
  }

  bool operator==(const ClassScores&) const = default;
};

struct EvalReport {
  std::string model;
  std::string dataset;
  std::vector<std::string> class_names;
  std::size_t samples = 0;
  ClassScores clean;
  std::optional<ClassScores> adversarial;
  std::optional<AttackConfig> attack;

  double clean_accuracy() const { return clean.accuracy; }
  std::optional<double> adversarial_accuracy() const {
    return adversarial ? std::optional<double>(adversarial->accuracy) : std::nullopt;
  }

  bool operator==(const EvalReport&) const = default;
};

/// One row per source model: adversarial accuracy of every target on the
/// set crafted against that source, followed by the noise baseline cell.
struct TransferMatrix {
  std::vector<std::string> models;
  std::vector<std::vector<double>> cells;  // cells[source][target]
  std::vector<double> noise;               // accuracy of model i under uniform sign noise
  std::vector<double> clean;               // clean accuracy of model i
  AttackConfig attack;

  std::size_t size() const { return models.size(); }
  bool operator==(const TransferMatrix&) const = default;
};

template <typename T>
struct RosterEntry {
  std::string id;
  Model<T> model;
};

template <typename T>
EvalReport evaluate(const Model<T>& model, const DatasetSplit& split, const std::optional<AttackConfig>& attack = std::nullopt,
                    std::uint64_t seed = 0, const std::string& model_id = "model", std::size_t batch_size = 64) {
  if (split.empty()) throw DatasetError("cannot evaluate on an empty " + to_string(split.tag) + " split");
  if (split.num_classes() != model.spec().classes) {
    throw SpecError("split has " + std::to_string(split.num_classes()) + " classes, model '" + model_id + "' expects " +
                    std::to_string(model.spec().classes));
  }
  if (attack) attack->validate();
  const auto score = score_split(model, split, batch_size, attack, seed);
  EvalReport r;
  r.model = model_id;
  r.dataset = to_string(split.tag);
  r.class_names = split.class_names;
  r.samples = split.size();
  r.clean = ClassScores::tally(model.spec().classes, score.labels, score.clean_prediction);
  if (attack) {
    r.adversarial = ClassScores::tally(model.spec().classes, score.labels, score.adversarial_prediction);
    r.attack = attack;
  }
  return r;
}

/// Each pixel moved by +eps or -eps with equal probability, then clamped to
/// [0,1]. The draw depends only on `seed`, so every model sees the same noise.
template <typename T>
Tensor<T> sign_noise(const Tensor<T>& images, double epsilon, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> out(images.values());
  const T eps = static_cast<T>(epsilon);
  for (T& v : out) v = std::clamp(rng.bernoulli(0.5) ? v + eps : v - eps, T(0), T(1));
  return Tensor<T>::from(images.shape(), std::move(out));
}

template <typename T>
TransferMatrix transfer_eval(const std::vector<RosterEntry<T>>& roster, const DatasetSplit& split,
                             const AttackConfig& attack, std::uint64_t seed, std::size_t batch_size = 64) {
  if (roster.size() < 2) throw RosterError("transfer evaluation needs at least two models");
  attack.validate();
  if (split.empty()) throw DatasetError("cannot run transfer evaluation on an empty split");
  const auto& ref = roster.front().model.spec();
  for (const auto& e : roster) {
    if (!e.model.spec().compatible_with(ref)) {
      throw RosterError("model '" + e.id + "' does not share input geometry and classes with '" + roster.front().id +
                        "'");
    }
  }
  if (split.num_classes() != ref.classes || split.image_shape() != Shape{ref.channels, ref.resolution, ref.resolution}) {
    throw RosterError("split does not match the roster's input specification");
  }

  const std::size_t m = roster.size();
  TransferMatrix tm;
  tm.attack = attack;
  for (const auto& e : roster) tm.models.push_back(e.id);
  tm.cells.assign(m, std::vector<double>(m, 0.0));
  std::vector<std::uint64_t> noise_hits(m, 0), clean_hits(m, 0);
  std::vector<std::vector<std::uint64_t>> hits(m, std::vector<std::uint64_t>(m, 0));

  auto it = batch_iterator(split, batch_size);
  Batch b;
  std::size_t index = 0;
  auto count = [&](const Tensor<T>& logits, const Labels& labels) {
    const auto pred = argmax_rows(logits);
    std::uint64_t c = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) c += pred[i] == labels[i];
    return c;
  };
  while (it.next(b)) {
    const Tensor<T> images = [&] {
      if constexpr (std::is_same_v<T, float>) return b.images;
      else return b.images.template cast<T>();
    }();
    const auto noisy = sign_noise(images, attack.epsilon, derive_seed(seed, "transfer:noise", index));
    for (std::size_t t = 0; t < m; ++t) {
      clean_hits[t] += count(infer(roster[t].model, images), b.labels);
      noise_hits[t] += count(infer(roster[t].model, noisy), b.labels);
    }
    for (std::size_t s = 0; s < m; ++s) {
      const auto crafted = pgd_attack(roster[s].model, images, b.labels, attack,
                                      derive_seed(seed, "transfer:attack", index),
                                      roster[s].id + " batch " + std::to_string(index));
      for (std::size_t t = 0; t < m; ++t) hits[s][t] += count(infer(roster[t].model, crafted.adversarial), b.labels);
    }
    ++index;
  }
  const double n = static_cast<double>(split.size());
  for (std::size_t s = 0; s < m; ++s) {
    for (std::size_t t = 0; t < m; ++t) tm.cells[s][t] = static_cast<double>(hits[s][t]) / n;
    tm.noise.push_back(static_cast<double>(noise_hits[s]) / n);
    tm.clean.push_back(static_cast<double>(clean_hits[s]) / n);
  }
  return tm;
}

// ---------------------------------------------------------------------------
// Serialization

enum class ReportFormat { csv, json };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw UsageError("unknown report format '" + s + "' (expected csv or json)");
}

inline constexpr const char* kEvalCsvHeader = "model,dataset,samples,clean_acc,adv_acc,eps,alpha,steps,random_start,targeted";
inline constexpr const char* kTransferCsvHeader = "source,target,adv_acc";
inline constexpr const char* kNoiseTarget = "noise";

namespace detail {

inline nlohmann::ordered_json rounded(const std::vector<double>& v) {
  auto a = nlohmann::ordered_json::array();
  for (double x : v) a.push_back(round_g6(x));
  return a;
}

inline nlohmann::ordered_json scores_json(const ClassScores& s) {
  return {{"accuracy", round_g6(s.accuracy)},
          {"precision", rounded(s.precision)},
          {"recall", rounded(s.recall)},
          {"confusion", s.confusion}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ReportError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw ReportError("failed writing '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReportError("cannot open '" + path.string() + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline double parse_number(const std::string& field, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw ReportError("malformed " + what + " value '" + field + "'");
  }
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["dataset"] = r.dataset;
  j["samples"] = r.samples;
  j["clean_acc"] = round_g6(r.clean.accuracy);
  j["adv_acc"] = r.adversarial ? nlohmann::ordered_json(round_g6(r.adversarial->accuracy)) : nlohmann::ordered_json(nullptr);
  j["eps"] = r.attack ? nlohmann::ordered_json(round_g6(r.attack->epsilon)) : nlohmann::ordered_json(nullptr);
  j["alpha"] = r.attack ? nlohmann::ordered_json(round_g6(r.attack->alpha)) : nlohmann::ordered_json(nullptr);
  j["steps"] = r.attack ? nlohmann::ordered_json(r.attack->steps) : nlohmann::ordered_json(nullptr);
  j["random_start"] = r.attack ? nlohmann::ordered_json(r.attack->random_start) : nlohmann::ordered_json(nullptr);
  j["targeted"] = r.attack ? nlohmann::ordered_json(r.attack->targeted) : nlohmann::ordered_json(nullptr);
  j["classes"] = r.class_names;
  j["clean"] = detail::scores_json(r.clean);
  j["adversarial"] = r.adversarial ? detail::scores_json(*r.adversarial) : nlohmann::ordered_json(nullptr);
  return j;
}

/// Scores are rebuilt from the confusion matrices, so they match the matrix
/// exactly rather than the rounded printed values.
inline EvalReport eval_report_from_json(const nlohmann::ordered_json& j) {
  try {
    EvalReport r;
    r.model = j.at("model").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.samples = j.at("samples").get<std::size_t>();
    r.class_names = j.at("classes").get<std::vector<std::string>>();
    r.clean = ClassScores::from_confusion(j.at("clean").at("confusion").get<ConfusionMatrix>());
    if (!j.at("adversarial").is_null()) {
      r.adversarial = ClassScores::from_confusion(j.at("adversarial").at("confusion").get<ConfusionMatrix>());
    }
    if (!j.at("eps").is_null()) {
      AttackConfig a;
      a.epsilon = j.at("eps").get<double>();
      a.alpha = j.at("alpha").get<double>();
      a.steps = j.at("steps").get<std::size_t>();
      a.random_start = j.at("random_start").get<bool>();
      a.targeted = j.at("targeted").get<bool>();
      r.attack = a;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed evaluation report: ") + e.what());
  }
}

inline std::string to_csv(const EvalReport& r) {
  std::ostringstream os;
  os << kEvalCsvHeader << '\n';
  os << r.model << ',' << r.dataset << ',' << r.samples << ',' << format_g6(r.clean.accuracy) << ','
     << (r.adversarial ? format_g6(r.adversarial->accuracy) : "") << ',';
  if (r.attack) {
    os << format_g6(r.attack->epsilon) << ',' << format_g6(r.attack->alpha) << ',' << r.attack->steps << ','
       << (r.attack->random_start ? "true" : "false") << ',' << (r.attack->targeted ? "true" : "false");
  } else {
    os << ",,,,";
  }
  os << '\n';
  return os.str();
}

/// Summary fields of an evaluation CSV.
struct EvalCsvRow {
  std::string model;
  std::string dataset;
  std::size_t samples = 0;
  double clean_acc = 0.0;
  std::optional<double> adv_acc;
  std::optional<double> eps;
  std::optional<double> alpha;
  std::optional<std::size_t> steps;

  bool operator==(const EvalCsvRow&) const = default;
};

inline EvalCsvRow parse_eval_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header, line;
  std::getline(in, header);
  if (header != kEvalCsvHeader) throw ReportError("unexpected evaluation CSV header '" + header + "'");
  if (!std::getline(in, line)) throw ReportError("evaluation CSV has no data row");
  const auto f = split_csv_line(line);
  if (f.size() != 10) throw ReportError("evaluation CSV row has " + std::to_string(f.size()) + " fields, expected 10");
  EvalCsvRow row;
  row.model = f[0];
  row.dataset = f[1];
  row.samples = static_cast<std::size_t>(detail::parse_number(f[2], "samples"));
  row.clean_acc = detail::parse_number(f[3], "clean_acc");
  if (!f[4].empty()) row.adv_acc = detail::parse_number(f[4], "adv_acc");
  if (!f[5].empty()) row.eps = detail::parse_number(f[5], "eps");
  if (!f[6].empty()) row.alpha = detail::parse_number(f[6], "alpha");
  if (!f[7].empty()) row.steps = static_cast<std::size_t>(detail::parse_number(f[7], "steps"));
  return row;
}

inline nlohmann::ordered_json to_json(const TransferMatrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < m.size(); ++s) {
    for (std::size_t t = 0; t < m.size(); ++t) {
      rows.push_back({{"source", m.models[s]}, {"target", m.models[t]}, {"adv_acc", round_g6(m.cells[s][t])}});
    }
    rows.push_back({{"source", m.models[s]}, {"target", kNoiseTarget}, {"adv_acc", round_g6(m.noise[s])}});
  }
  nlohmann::ordered_json j;
  j["models"] = m.models;
  j["eps"] = round_g6(m.attack.epsilon);
  j["alpha"] = round_g6(m.attack.alpha);
  j["steps"] = m.attack.steps;
  j["clean_acc"] = detail::rounded(m.clean);
  j["cells"] = std::move(rows);
  return j;
}

inline TransferMatrix transfer_matrix_from_json(const nlohmann::ordered_json& j) {
  try {
    TransferMatrix m;
    m.models = j.at("models").get<std::vector<std::string>>();
    m.attack.epsilon = j.at("eps").get<double>();
    m.attack.alpha = j.at("alpha").get<double>();
    m.attack.steps = j.at("steps").get<std::size_t>();
    m.clean = j.at("clean_acc").get<std::vector<double>>();
    const std::size_t n = m.models.size();
    const auto& rows = j.at("cells");
    if (rows.size() != n * (n + 1)) throw ReportError("transfer matrix JSON has the wrong number of cells");
    m.cells.assign(n, std::vector<double>(n, 0.0));
    m.noise.assign(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t t = 0; t <= n; ++t) {
        const double v = rows[s * (n + 1) + t].at("adv_acc").get<double>();
        if (t == n) m.noise[s] = v;
        else m.cells[s][t] = v;
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed transfer matrix: ") + e.what());
  }
}

inline std::string to_csv(const TransferMatrix& m) {
  std::ostringstream os;
  os << kTransferCsvHeader << '\n';
  for (std::size_t s = 0; s < m.size(); ++s) {
    for (std::size_t t = 0; t < m.size(); ++t)
      os << m.models[s] << ',' << m.models[t] << ',' << format_g6(m.cells[s][t]) << '\n';
    os << m.models[s] << ',' << kNoiseTarget << ',' << format_g6(m.noise[s]) << '\n';
  }
  return os.str();
}

/// Rebuilds the grid from a transfer CSV. Rows must appear in the order
/// `to_csv` writes them; the attack echo and clean accuracies are not part
/// of the CSV and stay default.
inline TransferMatrix parse_transfer_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != kTransferCsvHeader) throw ReportError("unexpected transfer CSV header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 3) throw ReportError("transfer CSV row '" + line + "' does not have 3 fields");
    rows.push_back(std::move(f));
  }
  TransferMatrix m;
  for (const auto& r : rows)
    if (r[1] == kNoiseTarget) m.models.push_back(r[0]);
  const std::size_t n = m.models.size();
  if (rows.size() != n * (n + 1)) throw ReportError("transfer CSV does not describe a square grid");
  m.cells.assign(n, std::vector<double>(n, 0.0));
  m.noise.assign(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t = 0; t <= n; ++t) {
      const auto& r = rows[s * (n + 1) + t];
      const std::string expected_target = t == n ? kNoiseTarget : m.models[t];
      if (r[0] != m.models[s] || r[1] != expected_target) {
        throw ReportError("transfer CSV row '" + r[0] + "," + r[1] + "' is out of order");
      }
      const double v = detail::parse_number(r[2], "adv_acc");
      if (t == n) m.noise[s] = v;
      else m.cells[s][t] = v;
    }
  }
  return m;
}

template <typename R>
void emit_report(const R& report, ReportFormat format, const std::filesystem::path& path) {
  detail::write_text(path, format == ReportFormat::csv ? to_csv(report) : to_json(report).dump(2) + "\n");
}

inline EvalReport read_eval_report_json(const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(detail::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return eval_report_from_json(j);
}

/// Plain-text grid for terminals: one row per source, one column per target
/// plus the noise baseline, accuracies in percent.
inline std::string format_transfer_table(const TransferMatrix& m) {
  std::ostringstream os;
  std::size_t w = 8;
  for (const auto& id : m.models) w = std::max(w, id.size() + 2);
  os << std::left << std::setw(static_cast<int>(w)) << "source";
  for (const auto& id : m.models) os << std::right << std::setw(static_cast<int>(w)) << id;
  os << std::right << std::setw(static_cast<int>(w)) << kNoiseTarget << '\n';
  for (std::size_t s = 0; s < m.size(); ++s) {
    os << std::left << std::setw(static_cast<int>(w)) << m.models[s];
    for (std::size_t t = 0; t < m.size(); ++t)
      os << std::right << std::setw(static_cast<int>(w)) << format_g6(100.0 * m.cells[s][t]);
    os << std::right << std::setw(static_cast<int>(w)) << format_g6(100.0 * m.noise[s]) << '\n';
  }
  return os.str();
}

}  // namespace advlab
