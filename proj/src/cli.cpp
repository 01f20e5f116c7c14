#include "windformer/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "windformer/logging.hpp"

namespace windformer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void DataConfig::validate() const {
  if (csv.has_value() != layout.has_value())
    throw ConfigError("data config: 'csv' and 'layout' must be given together");
  if (synthetic()) {
    if (grid_height == 0 || grid_width == 0) throw ConfigError("data config: grid must be non-empty");
    if (turbines == 0 || turbines > grid_height * grid_width)
      throw ConfigError("data config: turbines must be in 1.." + std::to_string(grid_height * grid_width));
    if (synthesis.steps == 0) throw ConfigError("data config: synthesis.steps must be positive");
  }
  if (!(train_fraction > 0) || !(val_fraction >= 0) || train_fraction + val_fraction > 1)
    throw ConfigError("data config: split fractions must be positive and sum to at most 1");
  if (dataset_id.empty() || dataset_id.find(',') != std::string::npos)
    throw ConfigError("data config: dataset_id must be non-empty and contain no comma");
}

nlohmann::json DataConfig::to_json() const {
  nlohmann::json j = {{"dataset_id", dataset_id},
                      {"train_fraction", train_fraction},
                      {"val_fraction", val_fraction}};
  if (csv) {
    j["csv"] = csv->string();
    j["layout"] = layout->string();
  } else {
    j["synthesis"] = synthesis.to_json();
    j["grid_height"] = grid_height;
    j["grid_width"] = grid_width;
    j["turbines"] = turbines;
    j["layout_seed"] = layout_seed;
  }
  return j;
}

DataConfig DataConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("data config must be an object");
  static const char* kKnown[] = {"dataset_id", "csv", "layout", "synthesis", "grid_height", "grid_width",
                                 "turbines", "layout_seed", "train_fraction", "val_fraction"};
  for (const auto& [key, value] : j.items())
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
      throw ConfigError("unknown data config key '" + key + "'");
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  DataConfig c;
  try {
    c.dataset_id = j.value("dataset_id", c.dataset_id);
    if (j.contains("csv")) c.csv = resolve(j.at("csv").get<std::string>());
    if (j.contains("layout")) c.layout = resolve(j.at("layout").get<std::string>());
    if (j.contains("synthesis")) {
      const auto& s = j.at("synthesis");
      const auto known = SynthesisConfig{}.to_json();
      for (const auto& [key, value] : s.items())
        if (!known.contains(key)) throw ConfigError("unknown synthesis key '" + key + "'");
      c.synthesis = SynthesisConfig::from_json(s);
    }
    c.grid_height = j.value("grid_height", c.grid_height);
    c.grid_width = j.value("grid_width", c.grid_width);
    c.turbines = j.value("turbines", c.turbines);
    c.layout_seed = j.value("layout_seed", c.layout_seed);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed data config: ") + e.what());
  }
  c.validate();
  return c;
}

PreparedData prepare_data(const DataConfig& config, std::size_t history, std::int64_t horizon_minutes) {
  config.validate();
  PreparedData data;
  data.dataset_id = config.dataset_id;
  SequenceSet set;
  if (config.synthetic()) {
    data.layout = make_synthetic_layout(config.grid_height, config.grid_width, config.turbines, config.layout_seed);
    set = synthesize_wake_dataset(data.layout, config.synthesis, history, horizon_minutes);
  } else {
    data.layout = TurbineLayout::load(*config.layout);
    set = load_csv_dataset(*config.csv, data.layout, horizon_minutes, history);
  }
  if (set.skipped_windows > 0)
    log::info("skipped " + std::to_string(set.skipped_windows) + " windows spanning missing timestamps");
  if (set.rejected_records > 0)
    log::warn("rejected " + std::to_string(set.rejected_records) + " records with missing or non-finite values");
  if (set.sequences.empty()) throw DataError("dataset '" + config.dataset_id + "' yields no sequences");
  data.split = split_chronological(set.sequences, config.train_fraction, config.val_fraction);
  data.stats = fit_normalizer(data.split.train);
  return data;
}

ModelConfig RunConfig::model_config(const TurbineLayout& layout) const {
  auto j = model;
  if (!j.contains("grid_height")) j["grid_height"] = layout.grid_height;
  if (!j.contains("grid_width")) j["grid_width"] = layout.grid_width;
  if (!j.contains("turbines")) j["turbines"] = layout.size();
  auto c = ModelConfig::from_json(j);
  check_layout_matches(c, layout);
  return c;
}

std::size_t RunConfig::history() const {
  try {
    return model.value("history", ModelConfig{}.history);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model history: ") + e.what());
  }
}

nlohmann::json RunConfig::to_json() const {
  return {{"data", data.to_json()}, {"model", model}, {"train", train.to_json()}, {"ablation", ablation}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "data")
      c.data = DataConfig::from_json(value, base_dir);
    else if (key == "model") {
      if (!value.is_object()) throw ConfigError("'model' must be an object");
      c.model = value;
      // Reject bad keys now, not after data loading. Geometry comes from the layout later.
      auto probe = value;
      if (!probe.contains("turbines")) probe["turbines"] = 1;
      ModelConfig::from_json(probe);
    } else if (key == "train")
      c.train = TrainConfig::from_json(value);
    else if (key == "ablation") {
      parse_ablation_grid(value);
      c.ablation = value;
    } else
      throw ConfigError("unknown run config key '" + key + "'");
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

namespace {

class GradCheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string data_dir;
  std::string out;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> horizon;
  std::optional<std::size_t> max_steps;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> steps;  // synthesis length
  std::string grid;
  std::string turbine;
  std::string start, end;
  std::string split = "test";
  double fraction = 0.01;
  double h = 1e-4;
  double threshold = 1e-3;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (!o.data_dir.empty()) {
    const fs::path dir = fs::absolute(o.data_dir);
    c.data.csv = dir / "data.csv";
    c.data.layout = dir / "layout.json";
  }
  if (o.seed) c.train.seed = *o.seed;
  if (o.horizon) c.train.horizon_minutes = *o.horizon;
  if (o.max_steps) c.train.max_steps = *o.max_steps;
  if (o.epochs) c.train.max_epochs = *o.epochs;
  if (o.steps) c.data.synthesis.steps = *o.steps;
  if (!o.grid.empty()) c.ablation = o.grid;
  if (c.data.csv) {
    c.data.csv = fs::absolute(*c.data.csv);
    c.data.layout = fs::absolute(*c.data.layout);
  }
  c.data.validate();
  c.train.validate();
  return c;
}

void print_table(std::ostream& out, const MetricsReport& report) { out << report.render_table(); }

std::int64_t parse_time_option(const std::string& text, std::int64_t fallback) {
  if (text.empty()) return fallback;
  try {
    return parse_timestamp(text);
  } catch (const std::exception& e) {
    throw ConfigError("bad timestamp '" + text + "': " + e.what());
  }
}

int cmd_synthesize(const Options& o, std::ostream& out) {
  RunConfig c = resolve_config(o);
  if (!c.data.synthetic()) throw ConfigError("synthesize needs a synthetic data config, not a CSV");
  if (o.seed) c.data.synthesis.seed = *o.seed;
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const auto layout =
      make_synthetic_layout(c.data.grid_height, c.data.grid_width, c.data.turbines, c.data.layout_seed);
  const auto series = synthesize_wake_series(layout, c.data.synthesis);
  layout.save(dir / "layout.json");
  write_csv_series(dir / "data.csv", series, layout);
  std::ofstream meta(dir / "synthesis.json");
  meta << c.data.to_json().dump(2) << '\n';
  out << "wrote " << series.scenes.size() << " scenes x " << layout.size() << " turbines to " << dir.string()
      << '\n';
  return kExitOk;
}

nlohmann::json checkpoint_metadata(const RunConfig& c, const ModelConfig& model, const PreparedData& data) {
  return {{"format", "windformer-model"},
          {"model", model.to_json()},
          {"stats", data.stats.to_json()},
          {"horizon_minutes", c.train.horizon_minutes},
          {"train", c.train.to_json()},
          {"data", c.data.to_json()},
          {"layout", data.layout.to_json()}};
}

int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const auto data = prepare_data(c.data, c.history(), c.train.horizon_minutes);
  const auto model_config = c.model_config(data.layout);
  WindformerModel<float> model(model_config);
  model.initialize(c.train.seed);
  log::info("training " + std::to_string(model.parameter_count()) + " parameters on " +
            std::to_string(data.split.train.size()) + " sequences");
  const auto result = train(model, data.split.train, data.split.val, data.stats, data.layout, c.train);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_archive(dir / "model.wfckpt", capture_module(model, checkpoint_metadata(c, model_config, data)));
  write_history_csv(dir / "history.csv", result.history);
  std::ofstream(dir / "config.json") << c.to_json().dump(2) << '\n';

  MetricsReport report;
  report.add(evaluate(model, data.split.test, data.stats, data.layout, "windformer", data.dataset_id,
                      c.train.eval_batch_size));
  report.add(score_forecasts(persistence_forecasts(data.split.test, data.layout), data.split.test, "persistence",
                             data.dataset_id));
  report.write_csv(dir / "metrics.csv");
  out << "best epoch " << result.best_epoch << " of " << result.history.size() << ", " << result.steps
      << " steps\n";
  print_table(out, report);
  return kExitOk;
}

struct LoadedModel {
  std::unique_ptr<WindformerModel<float>> model;
  ModelConfig config;
  FeatureStats stats;
  PreparedData data;
};

LoadedModel load_checkpoint(const Options& o) {
  const Archive archive = read_archive(o.checkpoint);
  const auto& meta = archive.metadata;
  if (meta.value("format", "") != "windformer-model")
    throw CheckpointError(o.checkpoint + ": not a windformer model checkpoint");
  LoadedModel m;
  DataConfig data_config;
  std::int64_t horizon = 0;
  try {
    m.config = ModelConfig::from_json(meta.at("model"));
    m.stats = FeatureStats::from_json(meta.at("stats"));
    horizon = meta.at("horizon_minutes").get<std::int64_t>();
    data_config = DataConfig::from_json(meta.at("data"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(o.checkpoint + ": incomplete metadata: " + e.what());
  }
  if (!o.data_dir.empty()) {
    const fs::path dir = fs::absolute(o.data_dir);
    data_config.csv = dir / "data.csv";
    data_config.layout = dir / "layout.json";
  }
  m.data = prepare_data(data_config, m.config.history, horizon);
  check_layout_matches(m.config, m.data.layout);
  if (meta.contains("layout") && meta.at("layout") != m.data.layout.to_json())
    throw ConfigError("the data's turbine layout differs from the one the checkpoint was trained on");
  m.model = std::make_unique<WindformerModel<float>>(m.config);
  restore_module(*m.model, archive);
  m.model->eval();
  return m;
}

const std::vector<SceneSequence>& pick_split(const DatasetSplit& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw ConfigError("unknown split '" + name + "' (train, val or test)");
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  auto m = load_checkpoint(o);
  const auto& seqs = pick_split(m.data.split, o.split);
  MetricsReport report;
  report.add(evaluate(*m.model, seqs, m.stats, m.data.layout, "windformer", m.data.dataset_id));
  report.add(score_forecasts(persistence_forecasts(seqs, m.data.layout), seqs, "persistence", m.data.dataset_id));
  if (!o.out.empty()) report.write_csv(o.out);
  print_table(out, report);
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  auto m = load_checkpoint(o);
  const auto& seqs = pick_split(m.data.split, o.split);
  const auto begin = parse_time_option(o.start, std::numeric_limits<std::int64_t>::min());
  const auto end = parse_time_option(o.end, std::numeric_limits<std::int64_t>::max());
  const auto points = export_prediction_curve(*m.model, seqs, m.stats, m.data.layout, o.turbine, begin, end);
  write_curve_csv(o.out, points);
  out << "wrote " << points.size() << " points for turbine " << o.turbine << " to " << o.out << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  auto data_config = c.data;
  const std::size_t history = c.history();
  // One sample is all the check needs; keep synthesis short.
  if (data_config.synthetic() && !o.steps)
    data_config.synthesis.steps = std::min<std::size_t>(data_config.synthesis.steps, 64 + 2 * history);
  const auto data = prepare_data(data_config, history, c.train.horizon_minutes);
  WindformerModel<double> model(c.model_config(data.layout));
  model.initialize(c.train.seed);
  if (!o.checkpoint.empty()) restore_module(model, read_archive(o.checkpoint));
  const auto batch = make_batch<double>(data.split.train, {0}, data.stats, data.layout);

  GradCheckConfig gc;
  gc.param_fraction = o.fraction;
  gc.h = o.h;
  gc.seed = c.train.seed;
  const auto report = gradient_check(model, batch, gc);
  const bool ok = report.passed(o.threshold);
  out << std::setprecision(4) << "gradcheck: " << report.checked << " coordinates, " << report.skipped_kinks
      << " skipped at ReLU kinks, " << report.seconds << " s\n";
  out << "max rel. err " << std::scientific << report.max_rel_error << " at " << report.worst.parameter << '['
      << report.worst.index << "] (analytic " << report.worst.analytic << ", numeric " << report.worst.numeric
      << ")\n";
  out << (ok ? "PASS" : "FAIL") << " (threshold " << o.threshold << ")\n" << std::defaultfloat;
  if (!ok) throw GradCheckFailed("max rel. err exceeds the threshold");
  return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const RunConfig c = resolve_config(o);
  const auto specs = parse_ablation_grid(c.ablation);
  const auto data = prepare_data(c.data, c.history(), c.train.horizon_minutes);
  const auto base = c.model_config(data.layout);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  std::size_t done = 0;
  const auto result = run_ablation(specs, data, base, c.train, [&](const AblationOutcome& r) {
    ++done;
    log::info("[" + std::to_string(done) + "/" + std::to_string(specs.size()) + "] " + r.spec.name() +
              ": test MSE " + std::to_string(r.test.mse));
  });
  MetricsReport report = result.report;
  report.add(score_forecasts(persistence_forecasts(data.split.test, data.layout), data.split.test, "persistence",
                             data.dataset_id));
  report.write_csv(dir / "ablation.csv");
  std::ofstream(dir / "config.json") << c.to_json().dump(2) << '\n';
  print_table(out, report);
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Windformer wind speed forecasting", "windformer"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  Options o;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run config JSON")->check(CLI::ExistingFile);
  };
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", o.data_dir, "directory holding layout.json and data.csv")->check(CLI::ExistingDirectory);
  };
  auto add_run = [&](CLI::App* sub) {
    add_config(sub);
    add_data(sub);
    sub->add_option("--seed", o.seed, "training and initialization seed");
    sub->add_option("--horizon", o.horizon, "forecast horizon in minutes")->check(CLI::IsMember({30, 60, 90}));
  };
  auto add_budget = [&](CLI::App* sub) {
    sub->add_option("--max-steps", o.max_steps, "optimizer step cap (0 = none)");
    sub->add_option("--epochs", o.epochs, "maximum epochs");
    sub->add_option("--steps", o.steps, "synthetic series length");
  };

  auto* synth = app.add_subcommand("synthesize", "write a synthetic wake dataset (layout.json, data.csv)");
  add_config(synth);
  synth->add_option("--seed", o.seed, "synthesis seed");
  synth->add_option("--steps", o.steps, "number of timestamps");
  synth->add_option("--out", o.out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model; writes model.wfckpt, history.csv, metrics.csv");
  add_run(train_cmd);
  add_budget(train_cmd);
  train_cmd->add_option("--out", o.out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint against persistence");
  eval_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  add_data(eval_cmd);
  eval_cmd->add_option("--split", o.split, "train, val or test");
  eval_cmd->add_option("--out", o.out, "metrics CSV");

  auto* predict_cmd = app.add_subcommand("predict", "export one turbine's prediction curve");
  predict_cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  add_data(predict_cmd);
  predict_cmd->add_option("--turbine", o.turbine, "turbine id")->required();
  predict_cmd->add_option("--start", o.start, "first target time (ISO-8601 or epoch minutes)");
  predict_cmd->add_option("--end", o.end, "last target time");
  predict_cmd->add_option("--split", o.split, "train, val or test");
  predict_cmd->add_option("--out", o.out, "curve CSV")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full model in double precision");
  add_run(grad_cmd);
  grad_cmd->add_option("--steps", o.steps, "synthetic series length");
  grad_cmd->add_option("--checkpoint", o.checkpoint, "check at these weights instead of the initialization")
      ->check(CLI::ExistingFile);
  grad_cmd->add_option("--fraction", o.fraction, "fraction of each tensor's coordinates")
      ->check(CLI::Range(1e-9, 1.0));
  grad_cmd->add_option("--fd-step", o.h, "central-difference step")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--threshold", o.threshold, "max relative error")->check(CLI::PositiveNumber);

  auto* ablate_cmd = app.add_subcommand("ablate", "train and score every spec of an ablation grid");
  add_run(ablate_cmd);
  add_budget(ablate_cmd);
  ablate_cmd->add_option("--grid", o.grid, "\"paper\" or \"full\" (overrides the config)")
      ->check(CLI::IsMember({"paper", "full"}));
  ablate_cmd->add_option("--out", o.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0) {
      err << app.help();
      return kExitUsage;
    }
    return kExitOk;
  }

  auto fail = [&](int code, const char* category, const std::string& message) {
    err << "windformer: " << category << " error: " << message << '\n';
    return code;
  };
  try {
    log::set_level(log_level);
    if (*synth) return cmd_synthesize(o, out);
    if (*train_cmd) return cmd_train(o, out);
    if (*eval_cmd) return cmd_evaluate(o, out);
    if (*predict_cmd) return cmd_predict(o, out);
    if (*grad_cmd) return cmd_gradcheck(o, out);
    return cmd_ablate(o, out);
  } catch (const GradCheckFailed& e) {
    return fail(kExitGradCheck, "gradcheck", e.what());
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const DataError& e) {
    return fail(kExitData, "data", e.what());
  } catch (const CheckpointError& e) {
    return fail(kExitCheckpoint, "checkpoint", e.what());
  } catch (const TrainingDiverged& e) {
    return fail(kExitDiverged, "training", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kExitOther, "internal", e.what());
  }
}

}  // namespace windformer
