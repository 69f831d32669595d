#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "advlab/attack/export.hpp"
#include "advlab/data/image_io.hpp"
#include "advlab/data/synth.hpp"
#include "advlab/models/checkpoint.hpp"
#include "advlab/train/trainer.hpp"
#include "manifest.hpp"
#include "run_config.hpp"

namespace advlab::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct Data {
  TrainValTest parts;
  std::size_t classes = 0;
};

DatasetSplit load_all(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.source == DatasetSource::synthetic) return synth_dataset(d.seed, d.per_class, d.resolution, d.noise_std);
  if (!fs::is_directory(d.path)) {
    throw ConfigError("dataset.path: '" + d.path_as_written + "' is not a directory (resolved to '" + d.path.string() +
                      "')");
  }
  return load_image_directory(d.path, d.resolution, d.channels);
}

Data load_data(const RunConfig& cfg) {
  auto all = load_all(cfg);
  Data out;
  out.classes = all.num_classes();
  out.parts = split_dataset(all, cfg.dataset.seed, cfg.dataset.split);
  for (const auto* s : {&out.parts.train, &out.parts.val, &out.parts.test}) {
    if (s->empty()) throw ConfigError("dataset.split: the " + to_string(s->tag) + " split is empty");
  }
  return out;
}

fs::path output_root(const RunConfig& cfg, const Options& opts) { return opts.out ? *opts.out : cfg.output; }

// Name of a checkpoint inside a roster: its run directory, or the file stem
// when the checkpoint sits at the top level.
std::string model_label(const fs::path& checkpoint) {
  const auto parent = checkpoint.parent_path().filename().string();
  return parent.empty() || parent == "." || parent == ".." ? checkpoint.stem().string() : parent;
}

LoadedCheckpoint open_checkpoint(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw UsageError("model checkpoint '" + path.string() + "' does not exist");
  return load_checkpoint(path);
}

void require_matches(const ClassifierSpec& spec, const RunConfig& cfg, std::size_t classes, const std::string& label) {
  if (spec.resolution != cfg.dataset.resolution || spec.channels != cfg.dataset.channels || spec.classes != classes) {
    throw SpecError("checkpoint '" + label + "' expects " + std::to_string(spec.channels) + "x" +
                    std::to_string(spec.resolution) + "x" + std::to_string(spec.resolution) + " images and " +
                    std::to_string(spec.classes) + " classes; the dataset has " + std::to_string(cfg.dataset.channels) +
                    "x" + std::to_string(cfg.dataset.resolution) + "x" + std::to_string(cfg.dataset.resolution) +
                    " images and " + std::to_string(classes) + " classes");
  }
}

std::string file_name_for(const std::string& id) {
  std::string f = id;
  for (char& c : f)
    if (c == '/' || c == '\\') c = '_';
  return f + ".png";
}

void print_report(const EvalReport& r, ReportFormat f, std::ostream& out) {
  if (f == ReportFormat::csv) out << to_csv(r);
  else out << to_json(r).dump(2) << '\n';
}

std::string accuracy_text(const EvalReport& r) {
  std::string s = "clean_acc " + format_g6(r.clean.accuracy);
  if (r.adversarial) s += " adv_acc " + format_g6(r.adversarial->accuracy);
  return s;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void append(AttackResult<float>& all, std::vector<float>& adv_values, const AttackResult<float>& r) {
  adv_values.insert(adv_values.end(), r.adversarial.values().begin(), r.adversarial.values().end());
  all.linf.insert(all.linf.end(), r.linf.begin(), r.linf.end());
  all.l2.insert(all.l2.end(), r.l2.begin(), r.l2.end());
  all.loss_trajectory.insert(all.loss_trajectory.end(), r.loss_trajectory.begin(), r.loss_trajectory.end());
  all.clean_prediction.insert(all.clean_prediction.end(), r.clean_prediction.begin(), r.clean_prediction.end());
  all.adversarial_prediction.insert(all.adversarial_prediction.end(), r.adversarial_prediction.begin(),
                                    r.adversarial_prediction.end());
  all.success.insert(all.success.end(), r.success.begin(), r.success.end());
}

Json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ReportError("cannot read '" + p.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ReportError("'" + p.string() + "' is not valid JSON: " + e.what());
  }
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ReportError("cannot write '" + p.string() + "'");
  out << text;
}

}  // namespace

void cmd_synth(const Options& opts, Streams io) {
  const auto cfg = load_run_config(opts.config, opts.seed);
  if (cfg.dataset.source != DatasetSource::synthetic) {
    throw ConfigError("dataset.source: the synth command needs the synthetic source");
  }
  const auto all = load_all(cfg);
  const fs::path dir = opts.out ? *opts.out : cfg.output / "synth";
  export_image_directory(all, dir);
  std::vector<std::string> outputs;
  for (const auto& s : all.samples) outputs.push_back(all.class_names[s.label()] + "/" + file_name_for(s.id()));
  write_manifest(dir, base_manifest("synth", cfg), outputs);
  io.out << "synth: " << all.size() << " images in " << all.num_classes() << " classes written to " << dir.string()
         << '\n';
}

void cmd_train(const Options& opts, Streams io) {
  const auto cfg = load_run_config(opts.config, opts.seed);
  const auto data = load_data(cfg);
  const auto seeds = seed_roots(cfg);
  const std::string kind = opts.adversarial ? "adversarial" : "clean";
  for (const auto& entry : cfg.models) {
    const std::string run = entry.id + "-" + kind;
    const fs::path dir = output_root(cfg, opts) / "train" / run;
    auto model = build_model<float>(model_spec(cfg, entry, data.classes), seeds.init(entry.id));
    TrainConfig tc = cfg.train;
    tc.adversarial = opts.adversarial;
    TrainOptions to;
    to.checkpoint_dir = dir;
    to.progress = &io.err;
    to.eval_batch_size = cfg.eval_batch_size;
    io.err << "training " << run << " (" << model.parameter_count() << " parameters, " << data.parts.train.size()
           << " training images)" << std::endl;
    const auto result = train(model, data.parts.train, data.parts.val, tc, to);

    const auto best = load_checkpoint(dir / "best.json");
    const auto report = evaluate(best.model, data.parts.test, cfg.attack, seeds.eval, run, cfg.eval_batch_size);
    emit_report(report, ReportFormat::json, dir / "eval.json");
    emit_report(report, ReportFormat::csv, dir / "eval.csv");

    auto manifest = base_manifest("train", cfg);
    manifest["flags"] = {{"adversarial", opts.adversarial}};
    manifest["model"] = entry.id;
    manifest["run"] = run;
    manifest["init_seed"] = seeds.init(entry.id);
    manifest["best_epoch"] = result.best_epoch;
    manifest["optimizer_steps"] = result.optimizer_steps;
    write_manifest(dir, manifest,
                   {"best.json", "best.bin", "final.json", "final.bin", "trainlog.csv", "trainlog.json", "eval.json",
                    "eval.csv"});
    if (opts.format) print_report(report, *opts.format, io.out);
    else
      io.out << "train " << run << ": best_epoch " << result.best_epoch << " val_acc " << format_g6(result.best_metric)
             << " test " << accuracy_text(report) << '\n';
  }
}

void cmd_attack(const Options& opts, Streams io) {
  const auto cfg = load_run_config(opts.config, opts.seed);
  if (opts.models.size() != 1) throw UsageError("attack takes exactly one --model checkpoint");
  const fs::path& ck_path = opts.models.front();
  const auto ck = open_checkpoint(ck_path);
  const auto data = load_data(cfg);
  const std::string id = model_label(ck_path);
  require_matches(ck.model.spec(), cfg, data.classes, ck_path.string());
  const auto seeds = seed_roots(cfg);
  const fs::path dir = opts.out ? *opts.out : cfg.output / "attack" / id;
  const auto& test = data.parts.test;

  AttackResult<float> all;
  std::vector<float> adv_values;
  Labels labels;
  std::vector<std::string> ids;
  auto it = batch_iterator(test, cfg.eval_batch_size);
  Batch b;
  std::size_t index = 0;
  while (it.next(b)) {
    io.err << "attack " << id << ": batch " << index + 1 << "/" << it.batch_count() << std::endl;
    const auto r = pgd_attack(ck.model, b.images, b.labels, cfg.attack, derive_seed(seeds.attack, "eval:attack", index),
                              "batch " + std::to_string(index));
    append(all, adv_values, r);
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    ids.insert(ids.end(), b.ids.begin(), b.ids.end());
    ++index;
  }
  const auto clean = stack_images(test);
  all.adversarial = Tensor<float>::from(clean.shape(), std::move(adv_values));

  std::vector<std::string> outputs{"eval.csv", "eval.json", "summary.json", "adversarial/metrics.json"};
  for (const auto& s : test.samples) {
    const auto file = file_name_for(s.id());
    write_png(dir / "clean" / file, s.image());
    outputs.push_back("clean/" + file);
    outputs.push_back("adversarial/" + file);
  }
  export_adversarial(dir / "adversarial", clean, all, ids, cfg.attack);

  EvalReport report;
  report.model = id;
  report.dataset = to_string(test.tag);
  report.class_names = test.class_names;
  report.samples = test.size();
  report.clean = ClassScores::tally(data.classes, labels, all.clean_prediction);
  report.adversarial = ClassScores::tally(data.classes, labels, all.adversarial_prediction);
  report.attack = cfg.attack;
  emit_report(report, ReportFormat::json, dir / "eval.json");
  emit_report(report, ReportFormat::csv, dir / "eval.csv");

  const double mean_linf = mean(all.linf), mean_l2 = mean(all.l2);
  Json summary{{"model", id},
               {"samples", report.samples},
               {"clean_acc", round_g6(report.clean.accuracy)},
               {"adv_acc", round_g6(report.adversarial->accuracy)},
               {"success_rate", round_g6(all.success_rate())},
               {"mean_linf", round_g6(mean_linf)},
               {"max_linf", round_g6(all.linf.empty() ? 0.0 : *std::max_element(all.linf.begin(), all.linf.end()))},
               {"mean_l2", round_g6(mean_l2)},
               {"epsilon", round_g6(cfg.attack.epsilon)}};
  write_file(dir / "summary.json", summary.dump(2) + "\n");

  auto manifest = base_manifest("attack", cfg);
  manifest["inputs"] = Json::array({input_entry(ck_path.string(), ck_path)});
  manifest["model"] = id;
  write_manifest(dir, manifest, outputs);

  if (opts.format) print_report(report, *opts.format, io.out);
  else
    io.out << "attack " << id << ": samples " << report.samples << " " << accuracy_text(report) << " success_rate "
           << format_g6(all.success_rate()) << " mean_linf " << format_g6(mean_linf) << " mean_l2 "
           << format_g6(mean_l2) << " epsilon " << format_g6(cfg.attack.epsilon) << '\n';
}

void cmd_transfer(const Options& opts, Streams io) {
  const auto cfg = load_run_config(opts.config, opts.seed);
  if (opts.models.size() < 2) throw UsageError("transfer needs at least two --model checkpoints");
  std::vector<RosterEntry<float>> roster;
  Json inputs = Json::array();
  for (const auto& p : opts.models) {
    roster.push_back({model_label(p), open_checkpoint(p).model});
    inputs.push_back(input_entry(p.string(), p));
  }
  for (const auto& e : roster) {
    if (!e.model.spec().compatible_with(roster.front().model.spec())) {
      throw RosterError("checkpoint '" + e.id + "' is incompatible with '" + roster.front().id +
                        "': input geometry or class count differs");
    }
  }
  const auto data = load_data(cfg);
  require_matches(roster.front().model.spec(), cfg, data.classes, opts.models.front().string());
  const auto seeds = seed_roots(cfg);
  io.err << "transfer: " << roster.size() << " models on " << data.parts.test.size() << " test images" << std::endl;
  const auto tm = transfer_eval(roster, data.parts.test, cfg.attack, seeds.transfer, cfg.eval_batch_size);

  const fs::path dir = opts.out ? *opts.out : cfg.output / "transfer";
  emit_report(tm, ReportFormat::csv, dir / "transfer.csv");
  emit_report(tm, ReportFormat::json, dir / "transfer.json");
  auto manifest = base_manifest("transfer", cfg);
  manifest["inputs"] = inputs;
  write_manifest(dir, manifest, {"transfer.csv", "transfer.json"});

  if (!opts.format) io.out << format_transfer_table(tm);
  else if (*opts.format == ReportFormat::csv) io.out << to_csv(tm);
  else io.out << to_json(tm).dump(2) << '\n';
}

namespace {

struct TrainRun {
  std::string run;
  std::string model;
  bool adversarial = false;
  EvalReport eval;
  TrainLog log;
};

std::string md_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  os << "|";
  for (const auto& h : header) os << ' ' << h << " |";
  os << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& r : rows) {
    os << "|";
    for (const auto& c : r) os << ' ' << c << " |";
    os << '\n';
  }
  return os.str();
}

std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& f) {
    for (std::size_t i = 0; i < f.size(); ++i) os << (i ? "," : "") << f[i];
    os << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return os.str();
}

std::string opt_g6(const std::optional<double>& v) { return v ? format_g6(*v) : ""; }

}  // namespace

void cmd_report(const Options& opts, Streams io) {
  fs::path run_dir;
  if (opts.run_dir) run_dir = *opts.run_dir;
  else if (!opts.config.empty()) run_dir = load_run_config(opts.config, opts.seed).output;
  else throw UsageError("report needs a run directory or --config");
  const fs::path out_dir = opts.out ? *opts.out : run_dir / "report";

  const fs::path train_dir = run_dir / "train";
  std::vector<std::string> missing;
  std::vector<fs::path> run_dirs;
  if (fs::is_directory(train_dir)) {
    for (const auto& e : fs::directory_iterator(train_dir))
      if (e.is_directory()) run_dirs.push_back(e.path());
  }
  std::sort(run_dirs.begin(), run_dirs.end());
  if (run_dirs.empty()) missing.push_back((train_dir / "<run>/manifest.json").string());
  for (const auto& d : run_dirs) {
    for (const char* f : {"manifest.json", "eval.json", "trainlog.json", "trainlog.csv"})
      if (!fs::is_regular_file(d / f)) missing.push_back((d / f).string());
  }
  if (!missing.empty()) {
    std::string msg = "missing artifacts:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw UsageError(msg);
  }

  std::vector<TrainRun> runs;
  Json inputs = Json::array();
  for (const auto& d : run_dirs) {
    const auto manifest = read_json_file(d / "manifest.json");
    TrainRun r;
    r.run = d.filename().string();
    try {
      r.model = manifest.at("model").get<std::string>();
      r.adversarial = manifest.at("flags").at("adversarial").get<bool>();
      r.log = TrainLog::from_json(read_json_file(d / "trainlog.json"));
    } catch (const nlohmann::json::exception& e) {
      throw ReportError("malformed artifacts in '" + d.string() + "': " + e.what());
    }
    r.eval = read_eval_report_json(d / "eval.json");
    for (const char* f : {"manifest.json", "eval.json"}) {
      const auto rel = fs::relative(d / f, run_dir).generic_string();
      inputs.push_back(input_entry(rel, d / f));
    }
    runs.push_back(std::move(r));
  }

  std::map<std::string, const TrainRun*> clean_by_model, adv_by_model;
  for (const auto& r : runs) (r.adversarial ? adv_by_model : clean_by_model)[r.model] = &r;

  std::ostringstream md;
  std::vector<std::string> outputs{"summary.md"};
  md << "# Experiment summary\n\n";
  auto section = [&](const std::string& title, const std::string& file, const std::vector<std::string>& header,
                     const std::vector<std::vector<std::string>>& rows, const std::string& absent) {
    md << "## " << title << "\n\n";
    if (rows.empty()) {
      md << "_absent: " << absent << "_\n\n";
      return;
    }
    md << md_table(header, rows) << '\n';
    write_file(out_dir / file, csv_table(header, rows));
    outputs.push_back(file);
  };

  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [m, r] : clean_by_model)
      rows.push_back({m, r->eval.dataset, std::to_string(r->eval.samples), format_g6(r->eval.clean.accuracy)});
    section("Clean accuracy", "clean_accuracy.csv", {"model", "dataset", "samples", "clean_acc"}, rows,
            "no clean training runs found");
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [m, r] : clean_by_model) {
      if (!r->eval.adversarial || !r->eval.attack) continue;
      const auto& a = *r->eval.attack;
      rows.push_back({m, format_g6(r->eval.clean.accuracy), format_g6(r->eval.adversarial->accuracy),
                      format_g6(a.epsilon), format_g6(a.alpha), std::to_string(a.steps)});
    }
    section("Clean versus adversarial accuracy", "clean_vs_adversarial.csv",
            {"model", "clean_acc", "adv_acc", "eps", "alpha", "steps"}, rows,
            "no clean training runs with an attack evaluation found");
  }
  {
    md << "## Adversarial training loss\n\n";
    if (adv_by_model.empty()) md << "_absent: no adversarial training runs found_\n\n";
    for (const auto& [m, r] : adv_by_model) {
      std::vector<std::vector<std::string>> rows;
      for (const auto& e : r->log.epochs) rows.push_back({std::to_string(e.epoch), format_g6(e.loss)});
      const std::string file = "adversarial_training_loss_" + m + ".csv";
      write_file(out_dir / file, csv_table({"epoch", "loss"}, rows));
      outputs.push_back(file);
      md << "### " << m << "\n\n" << md_table({"epoch", "loss"}, rows) << '\n';
    }
  }
  {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [m, adv] : adv_by_model) {
      const auto c = clean_by_model.find(m);
      if (c == clean_by_model.end()) continue;
      rows.push_back({m, format_g6(c->second->eval.clean.accuracy), opt_g6(c->second->eval.adversarial_accuracy()),
                      format_g6(adv->eval.clean.accuracy), opt_g6(adv->eval.adversarial_accuracy())});
    }
    section("Post-defense accuracy", "post_defense.csv",
            {"model", "clean_trained_clean_acc", "clean_trained_adv_acc", "adversarial_trained_clean_acc",
             "adversarial_trained_adv_acc"},
            rows, "needs both a clean and an adversarial training run of the same model");
  }
  {
    const fs::path tj = run_dir / "transfer" / "transfer.json";
    std::vector<std::vector<std::string>> rows;
    if (fs::is_regular_file(tj)) {
      const auto tm = transfer_matrix_from_json(read_json_file(tj));
      for (std::size_t s = 0; s < tm.size(); ++s) {
        for (std::size_t t = 0; t < tm.size(); ++t) rows.push_back({tm.models[s], tm.models[t], format_g6(tm.cells[s][t])});
        rows.push_back({tm.models[s], kNoiseTarget, format_g6(tm.noise[s])});
      }
      inputs.push_back(input_entry("transfer/transfer.json", tj));
    }
    section("Transfer matrix", "transfer.csv", {"source", "target", "adv_acc"}, rows, "no transfer study found");
  }

  write_file(out_dir / "summary.md", md.str());
  Json manifest{{"tool", "advlab"}, {"version", ADVLAB_VERSION}, {"command", "report"}, {"inputs", inputs}};
  write_manifest(out_dir, manifest, outputs);
  io.out << md.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"advlab: adversarial robustness experiments on small vision models"};
  app.name(args.empty() ? "advlab" : fs::path(args.front()).filename().string());
  app.require_subcommand(1);

  Options opts;
  std::string config, out_dir, format, run_dir;
  std::vector<std::string> models;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", config, "Run configuration (JSON)");
    if (config_required) c->required();
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--seed", seed, "Root seed, overriding the config");
  };
  auto with_format = [&](CLI::App* sub) {
    sub->add_option("--format", format, "Print results to standard output as csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset as PNG files");
  common(synth, true);
  auto* train = app.add_subcommand("train", "Train every model in the config and evaluate it on the test split");
  common(train, true);
  with_format(train);
  train->add_flag("--adversarial", opts.adversarial, "Mix PGD examples into every batch");
  auto* attack = app.add_subcommand("attack", "Attack one checkpoint on the test split and export the images");
  common(attack, true);
  with_format(attack);
  attack->add_option("--model", models, "Checkpoint manifest (.json)")->required();
  auto* transfer = app.add_subcommand("transfer", "Cross-model transfer matrix with a noise baseline");
  common(transfer, true);
  with_format(transfer);
  transfer->add_option("--model", models, "Checkpoint manifest (.json), repeat for each model")->required();
  auto* report = app.add_subcommand("report", "Summarize a run directory as markdown and CSV tables");
  common(report, false);
  report->add_option("run_dir", run_dir, "Run directory (defaults to the config's output)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  opts.config = config;
  for (const auto& m : models) opts.models.emplace_back(m);
  if (!out_dir.empty()) opts.out = out_dir;
  if (!run_dir.empty()) opts.run_dir = run_dir;
  for (auto* sub : {synth, train, attack, transfer, report})
    if (sub->count("--seed")) opts.seed = seed;
  if (!format.empty()) opts.format = parse_report_format(format);

  const Streams io{out, err};
  try {
    if (*synth) cmd_synth(opts, io);
    else if (*train) cmd_train(opts, io);
    else if (*attack) cmd_attack(opts, io);
    else if (*transfer) cmd_transfer(opts, io);
    else cmd_report(opts, io);
  } catch (const ConfigError& e) {
    err << "advlab: configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "advlab: usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SpecError& e) {
    err << "advlab: specification mismatch: " << e.what() << '\n';
    return kExitUsage;
  } catch (const RosterError& e) {
    err << "advlab: incompatible roster: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "advlab: error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace advlab::cli
