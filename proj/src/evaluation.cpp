#include "windformer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace windformer {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fixed3(double v) {
  if (!std::isfinite(v)) return "-";
  std::ostringstream out;
  out << std::fixed << std::setprecision(3) << v;
  return out.str();
}

constexpr std::int64_t kHorizons[] = {30, 60, 90};

}  // namespace

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

bool MetricsRow::consistent() const {
  if (!(mse >= 0) || !(mae >= 0)) return false;
  return mae <= std::sqrt(mse) * (1 + 1e-12) + 1e-300;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "model_id,dataset_id,horizon_minutes,mse,mae,count\n";
  for (const auto& r : rows)
    out << r.model_id << ',' << r.dataset_id << ',' << r.horizon_minutes << ',' << r.mse << ',' << r.mae << ','
        << r.count << '\n';
  return out.str();
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

MetricsReport MetricsReport::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "model_id,dataset_id,horizon_minutes,mse,mae,count")
    throw DataError(path.string() + ": not a metrics file");
  MetricsReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    try {
      report.add({f[0], f[1], std::stoll(f[2]), std::stod(f[3]), std::stod(f[4]),
                  static_cast<std::size_t>(std::stoull(f[5]))});
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return report;
}

std::string MetricsReport::render_table() const {
  std::vector<std::string> datasets;
  for (const auto& r : rows)
    if (std::find(datasets.begin(), datasets.end(), r.dataset_id) == datasets.end()) datasets.push_back(r.dataset_id);

  std::ostringstream out;
  for (const auto& dataset : datasets) {
    std::vector<std::string> models;
    std::map<std::pair<std::string, std::int64_t>, const MetricsRow*> cell;
    for (const auto& r : rows) {
      if (r.dataset_id != dataset) continue;
      if (std::find(models.begin(), models.end(), r.model_id) == models.end()) models.push_back(r.model_id);
      cell[{r.model_id, r.horizon_minutes}] = &r;  // a later row for the same cell wins
    }
    std::size_t width = 5;
    for (const auto& m : models) width = std::max(width, m.size());

    if (&dataset != &datasets.front()) out << '\n';
    out << "Dataset: " << dataset << '\n';
    out << std::left << std::setw(static_cast<int>(width)) << "Model";
    for (const char* metric : {"MSE", "MAE"})
      for (auto h : kHorizons) out << " | " << std::right << std::setw(6) << (metric + std::string(" ") + std::to_string(h));
    out << '\n' << std::string(width, '-');
    for (int i = 0; i < 6; ++i) out << "-+-------";
    out << '\n';
    for (const auto& m : models) {
      out << std::left << std::setw(static_cast<int>(width)) << m;
      for (int metric = 0; metric < 2; ++metric)
        for (auto h : kHorizons) {
          const auto it = cell.find({m, h});
          const std::string text =
              it == cell.end() ? "-" : fixed3(metric == 0 ? it->second->mse : it->second->mae);
          out << " | " << std::right << std::setw(6) << text;
        }
      out << '\n';
    }
  }
  return out.str();
}

bool MetricsReport::consistent() const {
  return std::all_of(rows.begin(), rows.end(), [](const MetricsRow& r) { return r.consistent(); });
}

MetricsRow score_forecasts(const Forecasts& forecasts, const std::vector<SceneSequence>& sequences,
                           const std::string& model_id, const std::string& dataset_id) {
  if (forecasts.size() != sequences.size())
    throw DimensionError("score_forecasts: " + std::to_string(forecasts.size()) + " forecasts for " +
                         std::to_string(sequences.size()) + " sequences");
  MetricsRow row{model_id, dataset_id, 0, 0, 0, 0};
  ErrorAccumulator acc;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    if (i == 0) row.horizon_minutes = s.horizon_minutes;
    if (s.horizon_minutes != row.horizon_minutes)
      throw ConfigError("score_forecasts: sequences mix horizons " + std::to_string(row.horizon_minutes) + " and " +
                        std::to_string(s.horizon_minutes));
    if (forecasts[i].size() != s.target.size())
      throw DimensionError("score_forecasts: forecast " + std::to_string(i) + " has " +
                           std::to_string(forecasts[i].size()) + " values for " + std::to_string(s.target.size()) +
                           " turbines");
    for (std::size_t l = 0; l < s.target.size(); ++l)
      if (s.target_mask[l]) acc.add(forecasts[i][l], s.target[l]);
  }
  row.mse = acc.mse();
  row.mae = acc.mae();
  row.count = acc.count;
  return row;
}

template <typename T>
MetricsRow evaluate(WindformerModel<T>& model, const std::vector<SceneSequence>& test_set, const FeatureStats& stats,
                    const TurbineLayout& layout, const std::string& model_id, const std::string& dataset_id,
                    std::size_t batch_size) {
  return score_forecasts(predict_sequences(model, test_set, stats, layout, batch_size), test_set, model_id,
                         dataset_id);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

Prediction persistence_baseline(const SceneSequence& sequence, const TurbineLayout& layout) {
  if (sequence.scenes.empty()) throw DataError("persistence_baseline: empty sequence");
  const Scene& last = *sequence.scenes.back();
  if (last.height != layout.grid_height || last.width != layout.grid_width)
    throw ConfigError("persistence_baseline: scene grid does not match the layout");
  const std::size_t cells = last.height * last.width;

  std::optional<double> fallback;
  auto scene_mean = [&](const Scene& s) -> std::optional<double> {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < cells; ++c)
      if (s.valid_mask[c]) {
        sum += s.features[kWindSpeed * cells + c];
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };

  Prediction p;
  p.issued_at = last.timestamp;
  p.horizon_minutes = sequence.horizon_minutes;
  p.speed.resize(layout.size());
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const std::size_t cell = layout.cell_of(l);
    bool found = false;
    for (auto it = sequence.scenes.rbegin(); it != sequence.scenes.rend() && !found; ++it)
      if ((*it)->valid_mask[cell]) {
        p.speed[l] = (*it)->features[kWindSpeed * cells + cell];
        found = true;
      }
    if (found) continue;
    if (!fallback) {
      for (auto it = sequence.scenes.rbegin(); it != sequence.scenes.rend() && !fallback; ++it)
        fallback = scene_mean(**it);
      if (!fallback) throw DataError("persistence_baseline: sequence has no observed wind speed");
    }
    p.speed[l] = *fallback;
  }
  return p;
}

Forecasts persistence_forecasts(const std::vector<SceneSequence>& sequences, const TurbineLayout& layout) {
  Forecasts out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) out.push_back(persistence_baseline(s, layout).speed);
  return out;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

std::string AblationSpec::name() const {
  return to_string(temporal) + "/" + to_string(spatial) + "/" + to_string(fusion);
}

ModelConfig AblationSpec::apply(ModelConfig base) const {
  base.temporal = temporal;
  base.spatial = spatial;
  base.fusion = fusion;
  return base;
}

nlohmann::json AblationSpec::to_json() const {
  return {{"temporal", to_string(temporal)}, {"spatial", to_string(spatial)}, {"fusion", to_string(fusion)}};
}

AblationSpec AblationSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("ablation spec must be an object");
  AblationSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "temporal")
        s.temporal = parse_temporal_variant(value.get<std::string>());
      else if (key == "spatial")
        s.spatial = parse_spatial_variant(value.get<std::string>());
      else if (key == "fusion")
        s.fusion = parse_fusion_variant(value.get<std::string>());
      else
        throw ConfigError("unknown ablation spec key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ablation spec: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

namespace {

const std::vector<TemporalVariant> kTemporal{TemporalVariant::empty,  TemporalVariant::bi_convrnn,
                                             TemporalVariant::bi_convlstm, TemporalVariant::bi_gru,
                                             TemporalVariant::convgru, TemporalVariant::bi_convgru};
const std::vector<SpatialVariant> kSpatial{SpatialVariant::empty, SpatialVariant::cnn, SpatialVariant::window,
                                           SpatialVariant::shift_window};
const std::vector<FusionVariant> kFusion{FusionVariant::empty, FusionVariant::global_only,
                                         FusionVariant::detail_only, FusionVariant::full};

template <typename V, typename Parse>
std::vector<V> parse_axis(const nlohmann::json& j, const char* key, V fallback, Parse parse) {
  if (!j.contains(key)) return {fallback};
  const auto& a = j.at(key);
  if (!a.is_array() || a.empty()) throw ConfigError(std::string("ablation grid '") + key + "' must be a non-empty list");
  std::vector<V> out;
  for (const auto& v : a) {
    if (!v.is_string()) throw ConfigError(std::string("ablation grid '") + key + "' entries must be strings");
    try {
      out.push_back(parse(v.get<std::string>()));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<AblationSpec> full_ablation_grid() {
  std::vector<AblationSpec> out;
  for (auto t : kTemporal)
    for (auto s : kSpatial)
      for (auto f : kFusion) out.push_back({t, s, f});
  return out;
}

std::vector<AblationSpec> paper_ablation_grid() {
  std::vector<AblationSpec> out;
  const AblationSpec base;
  out.push_back(base);
  for (auto t : kTemporal)
    if (t != base.temporal) out.push_back({t, base.spatial, base.fusion});
  for (auto s : kSpatial)
    if (s != base.spatial) out.push_back({base.temporal, s, base.fusion});
  for (auto f : kFusion)
    if (f != base.fusion) out.push_back({base.temporal, base.spatial, f});
  return out;
}

std::vector<AblationSpec> parse_ablation_grid(const nlohmann::json& j) {
  std::vector<AblationSpec> specs;
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "full") return full_ablation_grid();
    if (name == "paper") return paper_ablation_grid();
    throw ConfigError("unknown ablation grid '" + name + "' (expected \"full\", \"paper\" or an object)");
  }
  if (!j.is_object()) throw ConfigError("ablation grid must be a string or an object");
  for (const auto& [key, value] : j.items())
    if (key != "specs" && key != "temporal" && key != "spatial" && key != "fusion")
      throw ConfigError("unknown ablation grid key '" + key + "'");

  if (j.contains("specs")) {
    if (j.size() != 1) throw ConfigError("ablation grid: 'specs' cannot be combined with per-axis lists");
    const auto& list = j.at("specs");
    if (!list.is_array() || list.empty()) throw ConfigError("ablation grid 'specs' must be a non-empty list");
    for (const auto& s : list) specs.push_back(AblationSpec::from_json(s));
  } else {
    const AblationSpec base;
    const auto ts = parse_axis(j, "temporal", base.temporal, parse_temporal_variant);
    const auto ss = parse_axis(j, "spatial", base.spatial, parse_spatial_variant);
    const auto fs = parse_axis(j, "fusion", base.fusion, parse_fusion_variant);
    for (auto t : ts)
      for (auto s : ss)
        for (auto f : fs) specs.push_back({t, s, f});
  }
  std::set<std::string> seen;
  for (const auto& s : specs)
    if (!seen.insert(s.name()).second) throw ConfigError("ablation grid lists " + s.name() + " twice");
  return specs;
}

AblationResult run_ablation(const std::vector<AblationSpec>& specs, const PreparedData& data,
                            const ModelConfig& base, const TrainConfig& train_config,
                            const std::function<void(const AblationOutcome&)>& on_done) {
  if (specs.empty()) throw ConfigError("ablation grid is empty");
  // Validate everything up front so a bad entry fails before hours of training.
  for (const auto& s : specs) s.apply(base).validate();
  train_config.validate();

  AblationResult result;
  for (const auto& spec : specs) {
    WindformerModel<float> model(spec.apply(base));
    model.initialize(train_config.seed);
    AblationOutcome outcome;
    outcome.spec = spec;
    outcome.parameters = model.parameter_count();
    outcome.training = train(model, data.split.train, data.split.val, data.stats, data.layout, train_config);
    outcome.test = evaluate(model, data.split.test, data.stats, data.layout, spec.name(), data.dataset_id,
                            train_config.eval_batch_size);
    result.report.add(outcome.test);
    if (on_done) on_done(outcome);
    result.outcomes.push_back(std::move(outcome));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prediction curves
// ---------------------------------------------------------------------------

std::vector<CurvePoint> export_prediction_curve(const Forecasts& forecasts,
                                                const std::vector<SceneSequence>& sequences,
                                                const TurbineLayout& layout, const std::string& turbine_id,
                                                std::int64_t begin, std::int64_t end) {
  if (forecasts.size() != sequences.size())
    throw DimensionError("export_prediction_curve: forecasts and sequences differ in count");
  const auto turbine = layout.index_of(turbine_id);
  if (!turbine) throw DataError("turbine '" + turbine_id + "' is not in the layout");
  std::vector<CurvePoint> points;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    const auto t = s.target_timestamp();
    if (t < begin || t > end || !s.target_mask[*turbine]) continue;
    points.push_back({t, s.target[*turbine], forecasts[i][*turbine]});
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const CurvePoint& a, const CurvePoint& b) { return a.timestamp < b.timestamp; });
  return points;
}

template <typename T>
std::vector<CurvePoint> export_prediction_curve(WindformerModel<T>& model, const std::vector<SceneSequence>& sequences,
                                                const FeatureStats& stats, const TurbineLayout& layout,
                                                const std::string& turbine_id, std::int64_t begin,
                                                std::int64_t end) {
  std::vector<SceneSequence> selected;
  for (const auto& s : sequences)
    if (s.target_timestamp() >= begin && s.target_timestamp() <= end) selected.push_back(s);
  return export_prediction_curve(predict_sequences(model, selected, stats, layout), selected, layout, turbine_id,
                                 begin, end);
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17) << "timestamp,actual,predicted\n";
  for (const auto& p : points) out << format_timestamp(p.timestamp) << ',' << p.actual << ',' << p.predicted << '\n';
}

#define WINDFORMER_EVALUATION(T)                                                                                  \
  template MetricsRow evaluate(WindformerModel<T>&, const std::vector<SceneSequence>&, const FeatureStats&,      \
                               const TurbineLayout&, const std::string&, const std::string&, std::size_t);      \
  template std::vector<CurvePoint> export_prediction_curve(WindformerModel<T>&, const std::vector<SceneSequence>&, \
                                                           const FeatureStats&, const TurbineLayout&,             \
                                                           const std::string&, std::int64_t, std::int64_t);

WINDFORMER_EVALUATION(float)
WINDFORMER_EVALUATION(double)

}  // namespace windformer
