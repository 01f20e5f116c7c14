#pragma once

// Optimization: metrics, AdamW, early stopping, the training loop, and a
// finite-difference gradient checker.

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "windformer/checkpoint.hpp"
#include "windformer/model.hpp"

namespace windformer {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Mean squared / absolute error over entries with mask != 0 (all when the
/// mask is empty). Returns NaN when nothing is selected.
double mse_metric(std::span<const double> pred, std::span<const double> target, std::span<const double> mask = {});
double mae_metric(std::span<const double> pred, std::span<const double> target, std::span<const double> mask = {});

/// Running sums for MSE and MAE in physical units.
struct ErrorAccumulator {
  double squared = 0;
  double absolute = 0;
  std::size_t count = 0;

  void add(double pred, double target) {
    const double d = pred - target;
    squared += d * d;
    absolute += std::abs(d);
    ++count;
  }
  double mse() const;
  double mae() const;
};

// ---------------------------------------------------------------------------
// AdamW.
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
struct AdamWMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One AdamW update of `param` in place: theta -= lr * wd * theta, then the
/// bias-corrected Adam step. `step` counts from 1.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, AdamWMoments<T>& moments, std::size_t step,
                  const AdamWConfig& config);

template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>> params, AdamWConfig config);
  /// Applies one update from the parameters' accumulated gradients. A
  /// parameter that never received a gradient is treated as having zero grad.
  void step();
  std::size_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  std::vector<Parameter<T>> params_;
  std::vector<AdamWMoments<T>> moments_;
  AdamWConfig config_;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t batch_size = 16;  // the reference setup used 256
  double lr = 4e-3;
  double weight_decay = 1e-4;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  std::int64_t horizon_minutes = 30;
  std::size_t max_batches_per_epoch = 0;  // 0 = every batch
  std::size_t max_steps = 0;              // 0 = unlimited
  std::size_t eval_batch_size = 32;

  /// Throws ConfigError on batch_size 0 or a horizon other than 30/60/90.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records an epoch's score; returns true when training should stop.
  bool update(double score);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0, train_mae = 0;
  double val_mse = 0, val_mae = 0;
  double wall_seconds = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_score = 0;
  bool early_stopped = false;
  std::size_t steps = 0;
};

struct TrainCallbacks {
  /// Called after each optimizer step with the step number and batch loss.
  std::function<void(std::size_t step, double loss)> on_step;
  /// Supplies the per-epoch validation score used for early stopping; the
  /// default is val MSE (train MSE when there is no validation split).
  std::function<double(const EpochRecord&)> score;
};

/// Mini-batch AdamW on MSE of normalized targets. Batches follow a
/// seed-derived shuffle per epoch. Train metrics are the denormalized
/// in-training batch predictions; val metrics come from an eval-mode pass.
/// On return the model holds the best-scoring epoch's weights.
template <typename T>
TrainResult train(WindformerModel<T>& model, const std::vector<SceneSequence>& train_set,
                  const std::vector<SceneSequence>& val_set, const FeatureStats& stats, const TurbineLayout& layout,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

/// Eval-mode MSE/MAE in physical units over every observed target.
template <typename T>
ErrorAccumulator evaluate_sequences(WindformerModel<T>& model, const std::vector<SceneSequence>& sequences,
                                    const FeatureStats& stats, const TurbineLayout& layout,
                                    std::size_t batch_size = 32);

/// Denormalized eval-mode predictions for every sequence, [N][L].
template <typename T>
std::vector<std::vector<double>> predict_sequences(WindformerModel<T>& model,
                                                   const std::vector<SceneSequence>& sequences,
                                                   const FeatureStats& stats, const TurbineLayout& layout,
                                                   std::size_t batch_size = 32);

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

struct GradCheckConfig {
  double param_fraction = 0.01;  // per tensor: max(1, round(fraction * numel)) coordinates
  double h = 1e-4;
  std::uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-7;
  /// Drop coordinates whose +-h evaluations change any ReLU's sign pattern.
  bool skip_kinks = true;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> entries;
  double seconds = 0;

  bool passed(double threshold) const { return checked > 0 && max_rel_error < threshold; }
};

/// Reverse-mode vs central differences for the full model on one batch, in
/// double precision with batch norm in eval mode (statistics are first
/// warmed on the batch so they are not the identity).
GradCheckReport gradient_check(WindformerModel<double>& model, const Batch<double>& batch,
                               const GradCheckConfig& config);

/// The same check for any module and scalar loss closure; used for small
/// models without segments.
GradCheckReport gradient_check(Module<double>& module, const std::function<Tensor<double>()>& loss,
                               const GradCheckConfig& config);

}  // namespace windformer
