#pragma once

// Gridded scenes: turbine layouts, per-timestamp feature grids, sliding
// windows of scenes with a forecast target, feature normalization, and a
// synthetic advection dataset.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "windformer/tensor.hpp"

namespace windformer {

/// Bad input data: malformed files, unknown or missing turbines, bad layouts.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Layout.
// ---------------------------------------------------------------------------

struct TurbinePlacement {
  std::string id;
  std::size_t row = 0;
  std::size_t col = 0;
};

struct TurbineLayout {
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
  double cell_resolution_km = 2.0;
  std::vector<TurbinePlacement> turbines;

  std::size_t size() const { return turbines.size(); }
  std::size_t cell_of(std::size_t turbine) const {
    return turbines[turbine].row * grid_width + turbines[turbine].col;
  }
  std::optional<std::size_t> index_of(const std::string& id) const;

  /// Throws DataError on out-of-bounds cells, shared cells, duplicate ids or
  /// an empty layout.
  void validate() const;

  nlohmann::json to_json() const;
  static TurbineLayout from_json(const nlohmann::json& j);
  static TurbineLayout load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// `count` turbines on distinct random cells of a height x width grid, listed
/// in row-major cell order with ids T000, T001, ...
TurbineLayout make_synthetic_layout(std::size_t height, std::size_t width, std::size_t count,
                                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Features.
// ---------------------------------------------------------------------------

/// One turbine's measurements at one timestamp, as they appear in the CSV.
struct RawRecord {
  double wind_speed = 0;          // m/s
  double wind_direction_deg = 0;  // meteorological degrees
  double pressure = 0;            // hPa
  double temperature = 0;         // deg C
  double air_density = 0;         // kg/m^3

  bool finite() const;
};

inline constexpr std::size_t kFeatureCount = 6;
enum Channel : std::size_t {
  kWindSpeed = 0,
  kDirectionSin = 1,
  kDirectionCos = 2,
  kPressure = 3,
  kTemperature = 4,
  kAirDensity = 5,
};
extern const std::array<const char*, kFeatureCount> kChannelNames;

/// Model channels: direction becomes (sin, cos) so 0 and 360 degrees coincide.
std::array<double, kFeatureCount> encode_record(const RawRecord& r);

// ---------------------------------------------------------------------------
// Scenes.
// ---------------------------------------------------------------------------

struct Scene {
  std::size_t channels = kFeatureCount;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> features;         // [channels][height][width]
  std::vector<std::uint8_t> valid_mask;  // [height][width]
  std::int64_t timestamp = 0;           // minutes since the Unix epoch

  double at(std::size_t c, std::size_t r, std::size_t col) const {
    return features[(c * height + r) * width + col];
  }
};

/// One turbine's feature row for embed_to_grid.
struct TurbineRecord {
  std::string id;
  std::vector<double> features;
};

struct EmbedReport {
  std::size_t rejected = 0;  // records holding a non-finite feature
};

/// Places every layout turbine's features on its cell. Records with a
/// non-finite feature are rejected: the cell stays zero and invalid.
Scene embed_to_grid(const std::vector<TurbineRecord>& records, const TurbineLayout& layout,
                    std::int64_t timestamp = 0, EmbedReport* report = nullptr);

/// Inverse of embed_to_grid for valid turbines, in layout order.
std::vector<TurbineRecord> extract_turbine_values(const Scene& scene, const TurbineLayout& layout);

struct SceneSequence {
  std::vector<std::shared_ptr<const Scene>> scenes;  // T scenes, equally spaced
  std::vector<double> target;                        // [L] wind speed at last + horizon, m/s
  std::vector<std::uint8_t> target_mask;             // [L] 1 where the target was observed
  std::int64_t horizon_minutes = 0;
  std::int64_t step_minutes = 0;

  std::int64_t target_timestamp() const { return scenes.back()->timestamp + horizon_minutes; }
};

/// Gridded scenes at regularly sampled (but possibly gappy) timestamps.
struct SceneSeries {
  std::vector<std::shared_ptr<const Scene>> scenes;  // strictly increasing timestamps
  std::int64_t step_minutes = 0;
  std::size_t rejected_records = 0;
};

struct SequenceSet {
  std::vector<SceneSequence> sequences;
  std::size_t skipped_windows = 0;  // windows dropped because a timestamp was missing
  std::size_t rejected_records = 0;
};

/// Sliding windows of `history` consecutive scenes whose target lies
/// `horizon_minutes` after the last one. Windows touching a missing
/// timestamp are skipped and counted.
SequenceSet build_sequences(const SceneSeries& series, const TurbineLayout& layout,
                            std::size_t history, std::int64_t horizon_minutes);

// ---------------------------------------------------------------------------
// CSV ingestion.
// ---------------------------------------------------------------------------

/// Header row required; columns timestamp, turbine_id, wind_speed,
/// wind_direction_deg, pressure, temperature, air_density in any order.
/// Timestamps are integer minutes since the epoch or ISO-8601
/// "YYYY-MM-DD[T ]HH:MM[:SS]" (UTC). An empty value counts as missing and
/// rejects the record.
SceneSeries load_csv_series(const std::filesystem::path& path, const TurbineLayout& layout);

SequenceSet load_csv_dataset(const std::filesystem::path& path, const TurbineLayout& layout,
                             std::int64_t horizon_minutes, std::size_t history);

/// Writes raw per-turbine rows (inverse of load_csv_series up to direction
/// encoding). Timestamps are written in ISO-8601.
void write_csv_series(const std::filesystem::path& path, const SceneSeries& series,
                      const TurbineLayout& layout);

std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t minutes);

/// Recovers the raw record behind an encoded scene cell.
RawRecord decode_cell(const Scene& scene, std::size_t row, std::size_t col);

// ---------------------------------------------------------------------------
// Normalization.
// ---------------------------------------------------------------------------

struct FeatureStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> std{};

  double normalize(std::size_t channel, double v) const { return (v - mean[channel]) / std[channel]; }
  double denormalize(std::size_t channel, double z) const { return z * std[channel] + mean[channel]; }
  double normalize_target(double speed) const { return normalize(kWindSpeed, speed); }
  double denormalize_target(double z) const { return denormalize(kWindSpeed, z); }

  /// Valid cells z-scored, invalid cells left at 0.
  Scene apply(const Scene& scene) const;
  /// Valid cells mapped back to physical units.
  Scene invert(const Scene& scene) const;

  nlohmann::json to_json() const;
  static FeatureStats from_json(const nlohmann::json& j);
};

/// Per-channel mean and population std over the valid cells of every
/// distinct scene in `train`. A channel with zero spread is rejected.
FeatureStats fit_normalizer(const std::vector<SceneSequence>& train);

// ---------------------------------------------------------------------------
// Splits and batches.
// ---------------------------------------------------------------------------

struct DatasetSplit {
  std::vector<SceneSequence> train;
  std::vector<SceneSequence> val;
  std::vector<SceneSequence> test;
};

/// Contiguous-in-time split. Sequences whose inputs overlap the previous
/// split's targets are dropped at each boundary so no timestamp leaks.
DatasetSplit split_chronological(const std::vector<SceneSequence>& sequences,
                                 double train_fraction = 0.70, double val_fraction = 0.15);

template <typename T>
struct Batch {
  Tensor<T> inputs;   // [B, T, F, H, W] normalized
  Tensor<T> targets;  // [B, L] normalized wind speed
  Tensor<T> mask;     // [B, L] 1 at observed targets
  std::vector<double> targets_raw;  // [B * L] m/s
  std::vector<double> last_speed;   // [B * L] m/s, last observed speed (persistence)
};

template <typename T>
Batch<T> make_batch(const std::vector<SceneSequence>& sequences,
                    const std::vector<std::size_t>& indices, const FeatureStats& stats,
                    const TurbineLayout& layout);

// ---------------------------------------------------------------------------
// Synthetic wake dataset.
// ---------------------------------------------------------------------------

struct SynthesisConfig {
  std::size_t steps = 10000;
  std::uint64_t seed = 0;
  double wake_speed_cells_per_step = 1.0;
  double noise_std = 0.1;
  std::int64_t step_minutes = 10;
  std::int64_t start_minutes = 26297280;  // 2020-01-01T00:00Z
  double mean_speed = 8.0;
  double ar_coefficient = 0.97;
  double ar_innovation = 0.5;

  nlohmann::json to_json() const;
  static SynthesisConfig from_json(const nlohmann::json& j);
};

/// Wind enters at column 0 of every row and advects east at
/// wake_speed_cells_per_step, so cell (r, c) at step t sees the row's inflow
/// from c / wake_speed steps earlier, plus observation noise. The remaining
/// channels are smooth random processes. Pure function of (layout, config).
SceneSeries synthesize_wake_series(const TurbineLayout& layout, const SynthesisConfig& config);

SequenceSet synthesize_wake_dataset(const TurbineLayout& layout, const SynthesisConfig& config,
                                    std::size_t history, std::int64_t horizon_minutes);

}  // namespace windformer
