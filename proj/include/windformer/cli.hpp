#pragma once

// Run configuration files and the `windformer` command-line entry point.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "windformer/evaluation.hpp"

namespace windformer {

/// Where the scenes come from: a CSV plus layout file, or the synthetic wake
/// generator on a random layout.
struct DataConfig {
  std::string dataset_id = "synthetic-wake";
  std::optional<std::filesystem::path> csv;     // with `layout`
  std::optional<std::filesystem::path> layout;  // layout JSON
  SynthesisConfig synthesis;
  std::size_t grid_height = 16;
  std::size_t grid_width = 16;
  std::size_t turbines = 200;
  std::uint64_t layout_seed = 0;
  double train_fraction = 0.70;
  double val_fraction = 0.15;

  bool synthetic() const { return !csv; }
  void validate() const;
  nlohmann::json to_json() const;
  /// Relative paths resolve against `base_dir`.
  static DataConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

/// Builds the layout, the chronological split and the train-split statistics.
PreparedData prepare_data(const DataConfig& config, std::size_t history, std::int64_t horizon_minutes);

struct RunConfig {
  DataConfig data;
  nlohmann::json model = nlohmann::json::object();  // ModelConfig keys; geometry defaults to the layout's
  TrainConfig train;
  nlohmann::json ablation = "paper";

  /// Model config with grid and turbine count taken from `layout` unless set.
  ModelConfig model_config(const TurbineLayout& layout) const;
  std::size_t history() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
};

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitData = 4,
  kExitCheckpoint = 5,
  kExitDiverged = 6,
  kExitGradCheck = 7,
};

/// Subcommands: synthesize, train, evaluate, predict, gradcheck, ablate.
/// Errors are reported on `err` as "windformer: <category> error: ...".
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace windformer
