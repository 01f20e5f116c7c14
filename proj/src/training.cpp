#include "windformer/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "windformer/logging.hpp"
#include "windformer/random.hpp"

namespace windformer {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <typename F>
double masked_mean(std::span<const double> pred, std::span<const double> target, std::span<const double> mask,
                   F&& term) {
  if (pred.size() != target.size() || (!mask.empty() && mask.size() != pred.size()))
    throw DimensionError("metric inputs differ in length: pred " + std::to_string(pred.size()) + ", target " +
                         std::to_string(target.size()) + ", mask " + std::to_string(mask.size()));
  double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    total += term(pred[i] - target[i]);
    ++n;
  }
  return n ? total / static_cast<double>(n) : kNaN;
}

}  // namespace

double mse_metric(std::span<const double> pred, std::span<const double> target, std::span<const double> mask) {
  return masked_mean(pred, target, mask, [](double d) { return d * d; });
}

double mae_metric(std::span<const double> pred, std::span<const double> target, std::span<const double> mask) {
  return masked_mean(pred, target, mask, [](double d) { return std::abs(d); });
}

double ErrorAccumulator::mse() const { return count ? squared / static_cast<double>(count) : kNaN; }
double ErrorAccumulator::mae() const { return count ? absolute / static_cast<double>(count) : kNaN; }

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, AdamWMoments<T>& moments, std::size_t step,
                  const AdamWConfig& c) {
  if (!grad.empty() && grad.size() != param.size())
    throw DimensionError("gradient has " + std::to_string(grad.size()) + " entries, parameter has " +
                         std::to_string(param.size()));
  if (step == 0) throw ContractError("AdamW steps count from 1");
  if (moments.m.size() != param.size()) {
    moments.m.assign(param.size(), T(0));
    moments.v.assign(param.size(), T(0));
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  const double decay = c.lr * c.weight_decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
    double theta = static_cast<double>(param[i]);
    theta -= decay * theta;
    const double m = c.beta1 * static_cast<double>(moments.m[i]) + (1.0 - c.beta1) * g;
    const double v = c.beta2 * static_cast<double>(moments.v[i]) + (1.0 - c.beta2) * g * g;
    moments.m[i] = static_cast<T>(m);
    moments.v[i] = static_cast<T>(v);
    theta -= c.lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
    param[i] = static_cast<T>(theta);
  }
}

template <typename T>
AdamW<T>::AdamW(std::vector<Parameter<T>> params, AdamWConfig config)
    : params_(std::move(params)), moments_(params_.size()), config_(config) {}

template <typename T>
void AdamW<T>::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    adamw_update<T>(t.mutable_data(), t.grad(), moments_[i], step_, config_);
  }
}

// ---------------------------------------------------------------------------
// Configuration and early stopping
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("invalid train config: batch_size must be at least 1");
  if (eval_batch_size == 0) throw ConfigError("invalid train config: eval_batch_size must be at least 1");
  if (horizon_minutes != 30 && horizon_minutes != 60 && horizon_minutes != 90)
    throw ConfigError("invalid train config: horizon_minutes must be 30, 60 or 90, got " +
                      std::to_string(horizon_minutes));
  if (!(lr > 0)) throw ConfigError("invalid train config: lr must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("invalid train config: weight_decay must be non-negative");
  if (max_epochs == 0) throw ConfigError("invalid train config: max_epochs must be at least 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed},
          {"horizon_minutes", horizon_minutes},
          {"max_batches_per_epoch", max_batches_per_epoch},
          {"max_steps", max_steps},
          {"eval_batch_size", eval_batch_size}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto known = c.to_json();
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown train config key '" + key + "'");
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    c.horizon_minutes = j.value("horizon_minutes", c.horizon_minutes);
    c.max_batches_per_epoch = j.value("max_batches_per_epoch", c.max_batches_per_epoch);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

bool EarlyStopping::update(double score) {
  ++epoch_;
  improved_ = score < best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch_;
    bad_epochs_ = 0;
    return false;
  }
  ++bad_epochs_;
  return bad_epochs_ >= patience_;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

template <typename T, typename F>
void for_each_eval_batch(WindformerModel<T>& model, const std::vector<SceneSequence>& sequences,
                         const FeatureStats& stats, const TurbineLayout& layout, std::size_t batch_size, F&& visit) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  const auto mode = model.mode();
  model.eval();
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < sequences.size(); start += batch_size) {
    const std::size_t end = std::min(sequences.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const auto batch = make_batch<T>(sequences, idx, stats, layout);
    const auto out = model.forward(batch.inputs);
    visit(start, batch, out);
  }
  model.set_mode(mode);
}

}  // namespace

template <typename T>
ErrorAccumulator evaluate_sequences(WindformerModel<T>& model, const std::vector<SceneSequence>& sequences,
                                    const FeatureStats& stats, const TurbineLayout& layout,
                                    std::size_t batch_size) {
  ErrorAccumulator acc;
  for_each_eval_batch(model, sequences, stats, layout, batch_size,
                      [&](std::size_t, const Batch<T>& batch, const Tensor<T>& out) {
                        const auto pred = out.data();
                        const auto mask = batch.mask.data();
                        for (std::size_t i = 0; i < pred.size(); ++i)
                          if (mask[i] != 0)
                            acc.add(stats.denormalize_target(static_cast<double>(pred[i])), batch.targets_raw[i]);
                      });
  return acc;
}

template <typename T>
std::vector<std::vector<double>> predict_sequences(WindformerModel<T>& model,
                                                   const std::vector<SceneSequence>& sequences,
                                                   const FeatureStats& stats, const TurbineLayout& layout,
                                                   std::size_t batch_size) {
  std::vector<std::vector<double>> result(sequences.size());
  const std::size_t L = layout.size();
  for_each_eval_batch(model, sequences, stats, layout, batch_size,
                      [&](std::size_t start, const Batch<T>&, const Tensor<T>& out) {
                        const auto pred = out.data();
                        for (std::size_t b = 0; b * L < pred.size(); ++b) {
                          auto& row = result[start + b];
                          row.resize(L);
                          for (std::size_t l = 0; l < L; ++l)
                            row[l] = stats.denormalize_target(static_cast<double>(pred[b * L + l]));
                        }
                      });
  return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <typename T>
TrainResult train(WindformerModel<T>& model, const std::vector<SceneSequence>& train_set,
                  const std::vector<SceneSequence>& val_set, const FeatureStats& stats, const TurbineLayout& layout,
                  const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  check_layout_matches(model.config(), layout);
  if (train_set.empty()) throw DataError("training split is empty");
  for (const auto& s : train_set)
    if (s.horizon_minutes != config.horizon_minutes)
      throw ConfigError("training sequences have horizon " + std::to_string(s.horizon_minutes) +
                        " min, config asks for " + std::to_string(config.horizon_minutes));

  AdamW<T> optimizer(model.parameters(), {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  EarlyStopping stopper(config.patience);
  Archive best = capture_module(model);
  TrainResult result;
  const std::size_t n = train_set.size();
  std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  if (config.max_batches_per_epoch) batches = std::min(batches, config.max_batches_per_epoch);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    model.train();
    const auto order = permutation(n, stable_hash("epoch " + std::to_string(epoch), config.seed));
    ErrorAccumulator train_err;
    bool out_of_steps = false;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * config.batch_size);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * config.batch_size));
      const std::vector<std::size_t> idx(first, last);
      const auto batch = make_batch<T>(train_set, idx, stats, layout);
      model.zero_grad();
      const auto pred = model.forward(batch.inputs);
      const auto loss = ops::mse_loss(pred, batch.targets, batch.mask);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value))
        throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b + 1));
      loss.backward();
      optimizer.step();
      ++result.steps;

      const auto p = pred.data();
      const auto mask = batch.mask.data();
      for (std::size_t i = 0; i < p.size(); ++i)
        if (mask[i] != 0) train_err.add(stats.denormalize_target(static_cast<double>(p[i])), batch.targets_raw[i]);
      if (callbacks.on_step) callbacks.on_step(result.steps, value);
      if (config.max_steps && result.steps >= config.max_steps) {
        out_of_steps = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = train_err.mse();
    rec.train_mae = train_err.mae();
    if (val_set.empty()) {
      rec.val_mse = rec.val_mae = kNaN;
    } else {
      const auto val = evaluate_sequences(model, val_set, stats, layout, config.eval_batch_size);
      rec.val_mse = val.mse();
      rec.val_mae = val.mae();
    }
    rec.wall_seconds = seconds_since(start);
    result.history.push_back(rec);
    log::info("epoch " + std::to_string(epoch) + ": train mse " + std::to_string(rec.train_mse) + ", val mse " +
              std::to_string(rec.val_mse) + " (" + std::to_string(rec.wall_seconds) + " s)");

    const double score =
        callbacks.score ? callbacks.score(rec) : (val_set.empty() ? rec.train_mse : rec.val_mse);
    const bool stop = stopper.update(score);
    if (stopper.improved()) best = capture_module(model);
    if (stop) {
      result.early_stopped = true;
      log::info("early stop after epoch " + std::to_string(epoch) + "; best epoch " +
                std::to_string(stopper.best_epoch()));
      break;
    }
    if (out_of_steps) break;
  }
  if (stopper.best_epoch() > 0) restore_module(model, best);
  result.best_epoch = stopper.best_epoch();
  result.best_score = stopper.best();
  model.eval();
  return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "epoch,train_mse,train_mae,val_mse,val_mae,wall_seconds\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.train_mse << ',' << r.train_mae << ',' << r.val_mse << ',' << r.val_mae << ','
        << r.wall_seconds << '\n';
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

namespace {

struct Coordinate {
  std::size_t param;
  std::size_t index;
};

std::vector<Coordinate> sample_coordinates(const std::vector<Parameter<double>>& params, const GradCheckConfig& c) {
  std::vector<Coordinate> out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t numel = params[p].tensor.numel();
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(c.param_fraction * static_cast<double>(numel))), 1, numel);
    const auto order = permutation(numel, stable_hash(params[p].name, c.seed));
    for (std::size_t i = 0; i < k; ++i) out.push_back({p, order[i]});
  }
  return out;
}

// Runs `evaluate` at theta +- h for every sampled coordinate. `evaluate`
// returns the loss and the ReLU pattern digest for the current weights.
template <typename Eval>
GradCheckReport run_check(const std::vector<Parameter<double>>& params, const std::vector<std::vector<double>>& grads,
                          const GradCheckConfig& c, Eval&& evaluate) {
  if (!(c.h > 0)) throw ConfigError("gradient check step h must be positive");
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport report;
  for (const auto& [p, i] : sample_coordinates(params, c)) {
    auto data = params[p].tensor.node().value.data();
    const double original = data[i];
    data[i] = original + c.h;
    const auto [plus, plus_digest, base_digest] = evaluate(p);
    data[i] = original - c.h;
    const auto [minus, minus_digest, unused] = evaluate(p);
    data[i] = original;
    (void)unused;
    if (c.skip_kinks && (plus_digest != base_digest || minus_digest != base_digest)) {
      ++report.skipped_kinks;
      continue;
    }
    GradCheckEntry e;
    e.parameter = params[p].name;
    e.index = i;
    e.analytic = grads[p].empty() ? 0.0 : grads[p][i];
    e.numeric = (plus - minus) / (2 * c.h);
    e.rel_error =
        std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), c.floor});
    ++report.checked;
    if (e.rel_error > report.max_rel_error || report.checked == 1) {
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.worst = e;
    }
    report.entries.push_back(std::move(e));
  }
  report.seconds = seconds_since(start);
  return report;
}

std::vector<std::vector<double>> snapshot_grads(const std::vector<Parameter<double>>& params) {
  std::vector<std::vector<double>> g;
  for (const auto& p : params) g.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  return g;
}

struct Evaluation {
  double loss;
  std::uint64_t digest;
  std::uint64_t base_digest;
};

}  // namespace

GradCheckReport gradient_check(WindformerModel<double>& model, const Batch<double>& batch,
                               const GradCheckConfig& config) {
  const auto mode = model.mode();
  // Warm the batch-norm statistics so eval mode is not an identity map.
  model.train();
  {
    NoGradGuard no_grad;
    model.forward(batch.inputs);
  }
  model.eval();

  const auto params = model.parameters();
  model.zero_grad();
  {
    const auto loss = ops::mse_loss(model.forward(batch.inputs), batch.targets, batch.mask);
    loss.backward();
  }
  const auto grads = snapshot_grads(params);
  model.zero_grad();

  NoGradGuard no_grad;
  const std::size_t S = model.segment_count();
  std::vector<FeatureMap<double>> inputs(S);
  inputs[0] = {batch.inputs, {}};
  for (std::size_t s = 0; s + 1 < S; ++s) inputs[s + 1] = model.run_segment(s, inputs[s]);

  auto run_from = [&](std::size_t s) {
    ops::ReluPatternTrace trace;
    FeatureMap<double> map = inputs[s];
    for (std::size_t i = s; i < S; ++i) map = model.run_segment(i, map);
    const double loss = ops::mse_loss(map.x, batch.targets, batch.mask).item();
    return std::pair{loss, trace.digest()};
  };
  std::vector<std::uint64_t> base(S);
  for (std::size_t s = 0; s < S; ++s) base[s] = run_from(s).second;

  std::vector<std::size_t> segment(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) segment[p] = model.segment_of(params[p].name);

  auto report = run_check(params, grads, config, [&](std::size_t p) {
    const auto [loss, digest] = run_from(segment[p]);
    return Evaluation{loss, digest, base[segment[p]]};
  });
  model.set_mode(mode);
  return report;
}

GradCheckReport gradient_check(Module<double>& module, const std::function<Tensor<double>()>& loss,
                               const GradCheckConfig& config) {
  const auto params = module.parameters();
  module.zero_grad();
  loss().backward();
  const auto grads = snapshot_grads(params);
  module.zero_grad();

  NoGradGuard no_grad;
  auto run = [&] {
    ops::ReluPatternTrace trace;
    const double value = loss().item();
    return std::pair{value, trace.digest()};
  };
  const std::uint64_t base = run().second;
  return run_check(params, grads, config, [&](std::size_t) {
    const auto [value, digest] = run();
    return Evaluation{value, digest, base};
  });
}

#define WINDFORMER_TRAINING(T)                                                                                   \
  template void adamw_update(std::span<T>, std::span<const T>, AdamWMoments<T>&, std::size_t,                   \
                             const AdamWConfig&);                                                               \
  template class AdamW<T>;                                                                                       \
  template TrainResult train(WindformerModel<T>&, const std::vector<SceneSequence>&,                            \
                             const std::vector<SceneSequence>&, const FeatureStats&, const TurbineLayout&,      \
                             const TrainConfig&, const TrainCallbacks&);                                        \
  template ErrorAccumulator evaluate_sequences(WindformerModel<T>&, const std::vector<SceneSequence>&,          \
                                               const FeatureStats&, const TurbineLayout&, std::size_t);         \
  template std::vector<std::vector<double>> predict_sequences(WindformerModel<T>&,                              \
                                                              const std::vector<SceneSequence>&,                \
                                                              const FeatureStats&, const TurbineLayout&,        \
                                                              std::size_t);

WINDFORMER_TRAINING(float)
WINDFORMER_TRAINING(double)

}  // namespace windformer
