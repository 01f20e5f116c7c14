#pragma once

// Evaluation surface: metric reports in the paper's table layout, the
// persistence baseline, the ablation grid and prediction-curve export.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "windformer/training.hpp"

namespace windformer {

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::string model_id;
  std::string dataset_id;
  std::int64_t horizon_minutes = 0;
  double mse = 0;  // (m/s)^2
  double mae = 0;  // m/s
  std::size_t count = 0;

  /// MSE, MAE >= 0 and MAE <= sqrt(MSE) (with a relative slack of 1e-12).
  bool consistent() const;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  void add(MetricsRow row) { rows.push_back(std::move(row)); }
  /// Columns: model_id, dataset_id, horizon_minutes, mse, mae, count.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static MetricsReport read_csv(const std::filesystem::path& path);
  /// One table per dataset, one line per model in first-seen order:
  /// "Model | MSE 30 | 60 | 90 | MAE 30 | 60 | 90", three decimals, "-" for
  /// horizons that were not evaluated.
  std::string render_table() const;
  bool consistent() const;
};

/// Per-sequence forecasts in m/s, [N][L] in layout order.
using Forecasts = std::vector<std::vector<double>>;

MetricsRow score_forecasts(const Forecasts& forecasts, const std::vector<SceneSequence>& sequences,
                           const std::string& model_id, const std::string& dataset_id);

/// Eval-mode forecasts of a model over every sequence, scored on observed targets.
template <typename T>
MetricsRow evaluate(WindformerModel<T>& model, const std::vector<SceneSequence>& test_set, const FeatureStats& stats,
                    const TurbineLayout& layout, const std::string& model_id, const std::string& dataset_id,
                    std::size_t batch_size = 32);

/// Each turbine's last observed wind speed. When the last scene lacks a
/// turbine, its latest earlier observation is used, then the mean of the last
/// scene's valid cells.
Prediction persistence_baseline(const SceneSequence& sequence, const TurbineLayout& layout);

Forecasts persistence_forecasts(const std::vector<SceneSequence>& sequences, const TurbineLayout& layout);

// ---------------------------------------------------------------------------
// Ablations.
// ---------------------------------------------------------------------------

struct AblationSpec {
  TemporalVariant temporal = TemporalVariant::bi_convgru;
  SpatialVariant spatial = SpatialVariant::shift_window;
  FusionVariant fusion = FusionVariant::full;

  /// "temporal/spatial/fusion", e.g. "bi-convgru/shift-window/full".
  std::string name() const;
  ModelConfig apply(ModelConfig base) const;
  nlohmann::json to_json() const;
  static AblationSpec from_json(const nlohmann::json& j);
  bool operator==(const AblationSpec&) const = default;
};

/// Accepts {"specs": [{temporal, spatial, fusion}, ...]} (missing fields take
/// the defaults), {"temporal": [...], "spatial": [...], "fusion": [...]} for a
/// Cartesian product, or the string "full" / "paper". Duplicates and unknown
/// variants are config errors.
std::vector<AblationSpec> parse_ablation_grid(const nlohmann::json& j);
/// Every one of the 6 x 4 x 4 combinations.
std::vector<AblationSpec> full_ablation_grid();
/// The three one-factor sweeps of the paper's ablation tables (12 specs).
std::vector<AblationSpec> paper_ablation_grid();

struct PreparedData {
  std::string dataset_id;
  TurbineLayout layout;
  DatasetSplit split;
  FeatureStats stats;
};

struct AblationOutcome {
  AblationSpec spec;
  MetricsRow test;
  std::size_t parameters = 0;
  TrainResult training;
};

struct AblationResult {
  std::vector<AblationOutcome> outcomes;
  MetricsReport report;  // one row per spec, spec order
};

/// Trains every spec from the same initialization seed and data, then scores
/// the test split. `on_done` fires after each spec.
AblationResult run_ablation(const std::vector<AblationSpec>& specs, const PreparedData& data,
                            const ModelConfig& base, const TrainConfig& train_config,
                            const std::function<void(const AblationOutcome&)>& on_done = {});

// ---------------------------------------------------------------------------
// Prediction curves.
// ---------------------------------------------------------------------------

struct CurvePoint {
  std::int64_t timestamp = 0;  // the forecast's target time
  double actual = 0;
  double predicted = 0;
};

/// Points for one turbine over sequences whose target time lies in
/// [begin, end] and whose target was observed, in time order.
std::vector<CurvePoint> export_prediction_curve(const Forecasts& forecasts,
                                                const std::vector<SceneSequence>& sequences,
                                                const TurbineLayout& layout, const std::string& turbine_id,
                                                std::int64_t begin, std::int64_t end);

template <typename T>
std::vector<CurvePoint> export_prediction_curve(WindformerModel<T>& model, const std::vector<SceneSequence>& sequences,
                                                const FeatureStats& stats, const TurbineLayout& layout,
                                                const std::string& turbine_id, std::int64_t begin,
                                                std::int64_t end);

/// Columns: timestamp (ISO-8601 UTC), actual, predicted.
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& points);

}  // namespace windformer
