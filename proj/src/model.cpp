#include "windformer/model.hpp"

#include <algorithm>

namespace windformer {

std::size_t ModelConfig::padded_height() const {
  return spatial == SpatialVariant::empty ? grid_height : padded_extent(grid_height, window, stages());
}

std::size_t ModelConfig::padded_width() const {
  return spatial == SpatialVariant::empty ? grid_width : padded_extent(grid_width, window, stages());
}

std::size_t ModelConfig::head_features() const {
  if (spatial == SpatialVariant::empty) return grid_height * grid_width * embed_dim;
  const std::size_t down = std::size_t{1} << (stages() - 1);
  const std::size_t last = stages() - 1;
  return (padded_height() / down) * (padded_width() / down) * stage_dim(last);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (grid_height == 0 || grid_width == 0) fail("grid dimensions must be positive");
  if (history == 0) fail("history (T) must be at least 1");
  if (input_channels == 0) fail("input_channels must be positive");
  if (turbines == 0 || turbines > grid_height * grid_width) fail("turbines must be in 1..grid_height*grid_width");
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (temporal != TemporalVariant::empty && temporal != TemporalVariant::bi_gru) {
    if (hidden_channels == 0) fail("hidden_channels must be positive");
    if (recurrent_kernel % 2 == 0) fail("recurrent_kernel must be odd");
  }
  if (spatial == SpatialVariant::empty) return;
  if (depths.empty()) fail("at least one stage is required");
  if (heads.size() != depths.size()) fail("heads and depths must list one entry per stage");
  for (std::size_t s = 0; s < depths.size(); ++s) {
    if (depths[s] == 0) fail("stage " + std::to_string(s + 1) + " depth must be positive");
    if (spatial != SpatialVariant::cnn) {
      if (heads[s] == 0 || stage_dim(s) % heads[s] != 0)
        fail("stage " + std::to_string(s + 1) + " width " + std::to_string(stage_dim(s)) +
             " is not divisible by its " + std::to_string(heads[s]) + " heads");
    }
  }
  if (window == 0) fail("window must be positive");
  if (spatial == SpatialVariant::shift_window && (shift == 0 || shift >= window))
    fail("shift must satisfy 0 < shift < window");
  if (!(mlp_ratio > 0)) fail("mlp_ratio must be positive");
  if (fusion != FusionVariant::empty && fusion_reduction == 0) fail("fusion_reduction must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"grid_height", grid_height},
          {"grid_width", grid_width},
          {"history", history},
          {"input_channels", input_channels},
          {"turbines", turbines},
          {"temporal", to_string(temporal)},
          {"hidden_channels", hidden_channels},
          {"recurrent_kernel", recurrent_kernel},
          {"embed_dim", embed_dim},
          {"embed_norm", embed_norm},
          {"spatial", to_string(spatial)},
          {"depths", depths},
          {"heads", heads},
          {"window", window},
          {"shift", shift},
          {"mlp_ratio", mlp_ratio},
          {"relative_position_bias", relative_position_bias},
          {"fusion", to_string(fusion)},
          {"fusion_gate", "sigmoid(detail + global)"},
          {"fusion_reduction", fusion_reduction}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const char* kKnown[] = {"grid_height", "grid_width", "history", "input_channels", "turbines",
                                 "temporal", "hidden_channels", "recurrent_kernel", "embed_dim", "embed_norm",
                                 "spatial", "depths", "heads", "window", "shift", "mlp_ratio",
                                 "relative_position_bias", "fusion", "fusion_gate", "fusion_reduction"};
  for (const auto& [key, value] : j.items())
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
      throw ConfigError("unknown model config key '" + key + "'");
  ModelConfig c;
  try {
    c.grid_height = j.value("grid_height", c.grid_height);
    c.grid_width = j.value("grid_width", c.grid_width);
    c.history = j.value("history", c.history);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.turbines = j.value("turbines", c.turbines);
    if (j.contains("temporal")) c.temporal = parse_temporal_variant(j.at("temporal").get<std::string>());
    c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
    c.recurrent_kernel = j.value("recurrent_kernel", c.recurrent_kernel);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.embed_norm = j.value("embed_norm", c.embed_norm);
    if (j.contains("spatial")) c.spatial = parse_spatial_variant(j.at("spatial").get<std::string>());
    c.depths = j.value("depths", c.depths);
    c.heads = j.value("heads", c.heads);
    c.window = j.value("window", c.window);
    c.shift = j.value("shift", c.shift);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.relative_position_bias = j.value("relative_position_bias", c.relative_position_bias);
    if (j.contains("fusion")) c.fusion = parse_fusion_variant(j.at("fusion").get<std::string>());
    if (j.contains("fusion_gate") && j.at("fusion_gate") != "sigmoid(detail + global)")
      throw ConfigError("unsupported fusion_gate; only \"sigmoid(detail + global)\" is implemented");
    c.fusion_reduction = j.value("fusion_reduction", c.fusion_reduction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

void check_layout_matches(const ModelConfig& config, const TurbineLayout& layout) {
  if (config.grid_height != layout.grid_height || config.grid_width != layout.grid_width)
    throw ConfigError("model grid " + std::to_string(config.grid_height) + "x" + std::to_string(config.grid_width) +
                      " does not match layout grid " + std::to_string(layout.grid_height) + "x" +
                      std::to_string(layout.grid_width));
  if (config.turbines != layout.size())
    throw ConfigError("model predicts " + std::to_string(config.turbines) + " turbines, layout has " +
                      std::to_string(layout.size()));
}

template <typename T>
WindformerModel<T>::WindformerModel(const ModelConfig& cfg) : config_(cfg) {
  config_.validate();
  const auto& c = config_;
  temporal = std::make_unique<TemporalEncoder<T>>(c.temporal, c.input_channels, c.hidden_channels,
                                                  c.recurrent_kernel, c.grid_height, c.grid_width);
  this->register_module("temporal", *temporal);
  segment_names_.push_back("temporal");

  embed = std::make_unique<TurbineEmbed<T>>(c.history * temporal->output_channels(), c.embed_dim);
  this->register_module("embed", *embed);
  if (c.embed_norm) {
    embed_norm = std::make_unique<LayerNorm<T>>(c.embed_dim);
    this->register_module("embed_norm", *embed_norm);
  }
  segment_names_.push_back("embed");

  if (c.spatial != SpatialVariant::empty) {
    for (std::size_t s = 0; s < c.stages(); ++s) {
      stages.push_back(std::make_unique<Stage<T>>(c.spatial, c.stage_dim(s), c.depths[s], c.heads[s], c.window,
                                                  c.shift, c.mlp_ratio, c.relative_position_bias,
                                                  c.stage_merges(s), c.fusion, c.fusion_reduction));
      const std::string name = "stage" + std::to_string(s + 1);
      this->register_module(name, *stages.back());
      segment_names_.push_back(name);
    }
  }
  head = std::make_unique<PredictionHead<T>>(c.head_features(), c.turbines);
  this->register_module("head", *head);
  segment_names_.push_back("head");
}

template <typename T>
std::size_t WindformerModel<T>::segment_of(const std::string& name) const {
  for (std::size_t i = 0; i < segment_names_.size(); ++i) {
    const auto& seg = segment_names_[i];
    auto under = [&](const std::string& prefix) { return name.compare(0, prefix.size() + 1, prefix + ".") == 0; };
    if (under(seg)) return i;
    if (seg == "embed" && under("embed_norm")) return i;
  }
  throw std::invalid_argument("parameter '" + name + "' belongs to no segment");
}

template <typename T>
FeatureMap<T> WindformerModel<T>::run_segment(std::size_t i, const FeatureMap<T>& in) {
  const auto& seg = segment_names_.at(i);
  if (seg == "temporal") {
    const auto& x = in.x;
    if (x.rank() != 5 || x.dim(1) != config_.history || x.dim(2) != config_.input_channels ||
        x.dim(3) != config_.grid_height || x.dim(4) != config_.grid_width)
      throw DimensionError("model expects inputs [B, " + std::to_string(config_.history) + ", " +
                           std::to_string(config_.input_channels) + ", " + std::to_string(config_.grid_height) +
                           ", " + std::to_string(config_.grid_width) + "], got " + shape_to_string(x.shape()));
    return {temporal->forward(x), {}};
  }
  if (seg == "embed") {
    auto x = embed->forward(in.x);
    if (embed_norm) x = embed_norm->forward(x);
    FeatureMap<T> map{x, {}};
    if (config_.spatial == SpatialVariant::empty) return map;
    return pad_to_window_multiple(map, config_.window, config_.stages());
  }
  if (seg == "head") return {head->forward(in), {}};
  return stages.at(i - 2)->forward(in);
}

template <typename T>
Tensor<T> WindformerModel<T>::forward(const Tensor<T>& inputs) {
  FeatureMap<T> map{inputs, {}};
  for (std::size_t i = 0; i < segment_count(); ++i) map = run_segment(i, map);
  return map.x;
}

template <typename T>
Prediction windformer_forward(const SceneSequence& sequence, WindformerModel<T>& model, const FeatureStats& stats,
                              const TurbineLayout& layout) {
  check_layout_matches(model.config(), layout);
  if (sequence.scenes.size() != model.config().history)
    throw ConfigError("sequence holds " + std::to_string(sequence.scenes.size()) + " scenes, model expects " +
                      std::to_string(model.config().history));
  const std::vector<SceneSequence> one{sequence};
  const auto batch = make_batch<T>(one, {0}, stats, layout);
  const auto mode = model.mode();
  model.eval();
  Tensor<T> out;
  {
    NoGradGuard no_grad;
    out = model.forward(batch.inputs);
  }
  model.set_mode(mode);
  Prediction p;
  p.issued_at = sequence.scenes.back()->timestamp;
  p.horizon_minutes = sequence.horizon_minutes;
  for (T v : out.data()) p.speed.push_back(stats.denormalize_target(static_cast<double>(v)));
  return p;
}

template class WindformerModel<float>;
template class WindformerModel<double>;
template Prediction windformer_forward(const SceneSequence&, WindformerModel<float>&, const FeatureStats&,
                                       const TurbineLayout&);
template Prediction windformer_forward(const SceneSequence&, WindformerModel<double>&, const FeatureStats&,
                                       const TurbineLayout&);

}  // namespace windformer
