#pragma once

// The end-to-end forecaster and its configuration.

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "windformer/scene.hpp"
#include "windformer/spatial.hpp"
#include "windformer/temporal.hpp"

namespace windformer {

/// An architecture setting that violates a dimension constraint.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  // Input geometry.
  std::size_t grid_height = 16;
  std::size_t grid_width = 16;
  std::size_t history = 4;  // T
  std::size_t input_channels = kFeatureCount;
  std::size_t turbines = 200;  // L

  // Temporal module.
  TemporalVariant temporal = TemporalVariant::bi_convgru;
  std::size_t hidden_channels = 32;
  std::size_t recurrent_kernel = 3;
  std::size_t embed_dim = 48;  // C1
  bool embed_norm = true;      // LayerNorm after Turbine Embed

  // Spatial module.
  SpatialVariant spatial = SpatialVariant::shift_window;
  std::vector<std::size_t> depths{2, 2, 2};
  std::vector<std::size_t> heads{3, 6, 12};
  std::size_t window = 4;
  std::size_t shift = 2;
  double mlp_ratio = 4.0;
  bool relative_position_bias = true;

  // Channel fusion: gate = sigmoid(detail + global) for "full".
  FusionVariant fusion = FusionVariant::full;
  std::size_t fusion_reduction = 4;

  std::size_t stages() const { return depths.size(); }
  /// Width of stage s (0-based) before its merge.
  std::size_t stage_dim(std::size_t s) const { return embed_dim << s; }
  /// Whether stage s ends with a Turbine Merge (all but the last).
  bool stage_merges(std::size_t s) const { return s + 1 < stages(); }
  std::size_t padded_height() const;
  std::size_t padded_width() const;
  /// Features per sample entering the prediction head.
  std::size_t head_features() const;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// A forward pass split into pieces that each consume the previous piece's
/// output, so a perturbed parameter only needs its own piece and the ones
/// after it recomputed. Piece 0 takes FeatureMap{inputs [B, T, F, H, W]};
/// the last piece returns FeatureMap{predictions [B, L]}.
template <typename T>
class WindformerModel : public Module<T> {
 public:
  explicit WindformerModel(const ModelConfig& config);

  /// [B, T, F, H, W] normalized scenes -> [B, L] normalized speeds.
  Tensor<T> forward(const Tensor<T>& inputs);

  std::size_t segment_count() const { return segment_names_.size(); }
  const std::string& segment_name(std::size_t i) const { return segment_names_[i]; }
  FeatureMap<T> run_segment(std::size_t i, const FeatureMap<T>& in);
  /// Segment holding the parameter with this full name.
  std::size_t segment_of(const std::string& parameter_name) const;

  const ModelConfig& config() const { return config_; }

  std::unique_ptr<TemporalEncoder<T>> temporal;
  std::unique_ptr<TurbineEmbed<T>> embed;
  std::unique_ptr<LayerNorm<T>> embed_norm;
  std::vector<std::unique_ptr<Stage<T>>> stages;
  std::unique_ptr<PredictionHead<T>> head;

 private:
  ModelConfig config_;
  std::vector<std::string> segment_names_;
};

/// Per-turbine forecast in m/s, in layout order.
struct Prediction {
  std::vector<double> speed;
  std::int64_t issued_at = 0;  // timestamp of the last input scene
  std::int64_t horizon_minutes = 0;
  std::int64_t valid_at() const { return issued_at + horizon_minutes; }
};

/// Normalizes the sequence, runs the model in eval mode and denormalizes.
template <typename T>
Prediction windformer_forward(const SceneSequence& sequence, WindformerModel<T>& model, const FeatureStats& stats,
                              const TurbineLayout& layout);

/// Checks that the layout and the model agree on grid and turbine count.
void check_layout_matches(const ModelConfig& config, const TurbineLayout& layout);

extern template class WindformerModel<float>;
extern template class WindformerModel<double>;

}  // namespace windformer
