#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support/finite_difference.hpp"
#include "windformer/training.hpp"

using namespace windformer;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.grid_height = 8;
  c.grid_width = 8;
  c.history = 3;
  c.turbines = 24;
  c.hidden_channels = 4;
  c.embed_dim = 8;
  c.depths = {2, 2};
  c.heads = {2, 4};
  c.window = 4;
  c.shift = 2;
  c.mlp_ratio = 2;
  return c;
}

struct TinyData {
  TurbineLayout layout;
  std::vector<SceneSequence> sequences;
  FeatureStats stats;
};

TinyData tiny_data(std::size_t count, std::uint64_t seed = 0) {
  TinyData d;
  d.layout = make_synthetic_layout(8, 8, 24, 0);
  SynthesisConfig sc;
  sc.steps = count + 3 + 3;
  sc.seed = seed;
  auto set = synthesize_wake_dataset(d.layout, sc, 3, 30);
  set.sequences.resize(count);
  d.sequences = std::move(set.sequences);
  d.stats = fit_normalizer(d.sequences);
  return d;
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

// ---------------------------------------------------------------------------
// Loss and metrics.
// ---------------------------------------------------------------------------

TEST(Loss, MseValues) {
  auto t = Tensor<double>::from_vector({1, 2}, {1, 1});
  EXPECT_EQ(ops::mse_loss(t, t, {}).item(), 0.0);
  EXPECT_EQ(ops::mse_loss(Tensor<double>::from_vector({1, 2}, {0, 2}), t, {}).item(), 1.0);
  // Masked entries are ignored.
  const auto mask = Tensor<double>::from_vector({1, 2}, {1, 0});
  EXPECT_EQ(ops::mse_loss(Tensor<double>::from_vector({1, 2}, {3, 100}), t, mask).item(), 4.0);
}

TEST(Loss, MseGradientIsTwiceTheResidualOverN) {
  std::mt19937_64 rng(1);
  auto pred = windformer::testing::random_tensor({3, 4}, rng);
  const auto target = windformer::testing::random_tensor({3, 4}, rng, 1.0, false);
  ops::mse_loss(pred, target, {}).backward();
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(pred.grad()[i], 2 * (pred.at(i) - target.at(i)) / 12, 1e-15);
  const auto numeric =
      windformer::testing::numeric_gradient(pred, [&] { return ops::mse_loss(pred, target, {}).item(); });
  EXPECT_LT(windformer::testing::max_relative_error(pred.grad(), numeric), 1e-7);
}

TEST(Metrics, HandValues) {
  const std::vector<double> p{0, 2}, t{1, 1};
  EXPECT_EQ(mae_metric(t, t), 0.0);
  EXPECT_EQ(mse_metric(p, t), 1.0);
  EXPECT_EQ(mae_metric(p, t), 1.0);
  const std::vector<double> m{0, 1};
  EXPECT_EQ(mae_metric(std::vector<double>{5, 3}, t, m), 2.0);
  EXPECT_TRUE(std::isnan(mse_metric(p, t, std::vector<double>{0, 0})));
  EXPECT_THROW(mse_metric(p, std::vector<double>{1}), DimensionError);
}

TEST(Metrics, MaeNeverExceedsRootMse) {
  std::mt19937_64 rng(2);
  std::lognormal_distribution<double> heavy(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 17;
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = heavy(rng) - heavy(rng);
      t[i] = heavy(rng);
    }
    EXPECT_LE(mae_metric(p, t), std::sqrt(mse_metric(p, t)) * (1 + 1e-15));
  }
}

// ---------------------------------------------------------------------------
// AdamW.
// ---------------------------------------------------------------------------

TEST(AdamW, FirstStepWithUnitGradient) {
  std::vector<double> theta{0.5};
  const std::vector<double> g{1.0};
  AdamWMoments<double> m;
  adamw_update<double>(theta, g, m, 1, {1e-3, 0.9, 0.999, 1e-8, 0.0});
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(theta[0] - 0.5, -1e-3 / (1 + 1e-8), 1e-16);
  EXPECT_NEAR(theta[0] - 0.5, -0.000999999990, 1e-14);
}

TEST(AdamW, DecayOnly) {
  std::vector<double> theta{1.0};
  AdamWMoments<double> m;
  adamw_update<double>(theta, std::vector<double>{0.0}, m, 1, {1e-3, 0.9, 0.999, 1e-8, 0.01});
  EXPECT_DOUBLE_EQ(theta[0], 0.99999);
}

TEST(AdamW, ZeroGradientsAndZeroDecayLeaveParametersUnchanged) {
  std::vector<double> theta{1.5, -2.0, 0.25};
  const auto before = theta;
  AdamWMoments<double> m;
  for (std::size_t s = 1; s <= 5; ++s) adamw_update<double>(theta, std::vector<double>(3, 0.0), m, s, {1e-3, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(theta, before);
}

TEST(AdamW, ZeroLearningRateIsIdentity) {
  std::vector<double> theta{1.5, -2.0};
  const auto before = theta;
  AdamWMoments<double> m;
  adamw_update<double>(theta, std::vector<double>{3.0, -1.0}, m, 1, {0.0, 0.9, 0.999, 1e-8, 0.1});
  EXPECT_EQ(theta, before);
}

TEST(AdamW, WithoutDecayMatchesAdamRecurrence) {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> theta{0.3, -0.7};
  double ref[2] = {0.3, -0.7}, m1[2] = {0, 0}, m2[2] = {0, 0};
  AdamWMoments<double> m;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist;
  for (std::size_t t = 1; t <= 20; ++t) {
    const std::vector<double> g{dist(rng), dist(rng)};
    adamw_update<double>(theta, g, m, t, {lr, b1, b2, eps, 0.0});
    for (int i = 0; i < 2; ++i) {
      m1[i] = b1 * m1[i] + (1 - b1) * g[i];
      m2[i] = b2 * m2[i] + (1 - b2) * g[i] * g[i];
      const double mh = m1[i] / (1 - std::pow(b1, t)), vh = m2[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  EXPECT_NEAR(theta[0], ref[0], 1e-14);
  EXPECT_NEAR(theta[1], ref[1], 1e-14);
}

TEST(AdamW, RejectsShapeMismatch) {
  std::vector<double> theta{1.0, 2.0};
  AdamWMoments<double> m;
  EXPECT_THROW(adamw_update<double>(theta, std::vector<double>{1.0}, m, 1, {}), DimensionError);
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_EQ(c.lr, 4e-3);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_NO_THROW(c.validate());
  c.horizon_minutes = 45;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.seed = 9;
  c.max_batches_per_epoch = 3;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"batchsize", 4}}), ConfigError);
}

TEST(EarlyStopping, StopsPatienceEpochsPastBest) {
  EarlyStopping stop(2);
  EXPECT_FALSE(stop.update(1.0));
  EXPECT_FALSE(stop.update(2.0));
  EXPECT_TRUE(stop.update(3.0));
  EXPECT_EQ(stop.best_epoch(), 1u);

  EarlyStopping recover(2);
  for (double s : {3.0, 2.0, 2.5, 1.0, 1.5}) EXPECT_FALSE(recover.update(s));
  EXPECT_TRUE(recover.update(1.0));  // ties do not count as improvement
  EXPECT_EQ(recover.best_epoch(), 4u);
}

TEST(Train, EarlyStopRestoresBestWeights) {
  const auto d = tiny_data(12);
  WindformerModel<float> model(tiny_config());
  model.initialize(0);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 20;
  tc.patience = 2;
  std::vector<float> after_first;
  TrainCallbacks cb;
  cb.score = [&](const EpochRecord& r) {
    if (r.epoch == 1) {
      const auto p = model.parameters().front().tensor.data();
      after_first.assign(p.begin(), p.end());
    }
    return static_cast<double>(r.epoch);  // monotonically worsening
  };
  const auto result = train(model, d.sequences, d.sequences, d.stats, d.layout, tc, cb);
  EXPECT_TRUE(result.early_stopped);
  EXPECT_EQ(result.history.size(), 3u);
  EXPECT_EQ(result.best_epoch, 1u);
  const auto now = model.parameters().front().tensor.data();
  EXPECT_TRUE(std::equal(now.begin(), now.end(), after_first.begin()));
}

TEST(Train, SameSeedGivesIdenticalHistories) {
  const auto d = tiny_data(12);
  auto run = [&](std::uint64_t seed) {
    WindformerModel<float> model(tiny_config());
    model.initialize(seed);
    TrainConfig tc;
    tc.batch_size = 5;
    tc.max_epochs = 2;
    tc.seed = seed;
    std::vector<double> losses;
    TrainCallbacks cb;
    cb.on_step = [&](std::size_t, double loss) { losses.push_back(loss); };
    auto r = train(model, d.sequences, d.sequences, d.stats, d.layout, tc, cb);
    for (const auto& e : r.history) losses.insert(losses.end(), {e.train_mse, e.train_mae, e.val_mse, e.val_mae});
    return losses;
  };
  const auto a = run(4), b = run(4), c = run(5);
  EXPECT_EQ(a.size(), 6u + 8u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Train, ReportsDivergenceLocation) {
  const auto d = tiny_data(8);
  WindformerModel<float> model(tiny_config());
  model.initialize(0);
  for (auto& v : model.head->proj.bias.mutable_data()) v = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.batch_size = 4;
  try {
    train(model, d.sequences, {}, d.stats, d.layout, tc);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsEmptyAndMismatchedData) {
  const auto d = tiny_data(8);
  WindformerModel<float> model(tiny_config());
  TrainConfig tc;
  EXPECT_THROW(train(model, {}, {}, d.stats, d.layout, tc), DataError);
  tc.horizon_minutes = 60;
  EXPECT_THROW(train(model, d.sequences, {}, d.stats, d.layout, tc), ConfigError);
}

TEST(Train, BatchCapsLimitSteps) {
  const auto d = tiny_data(12);
  WindformerModel<float> model(tiny_config());
  model.initialize(0);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_epochs = 3;
  tc.max_batches_per_epoch = 2;
  EXPECT_EQ(train(model, d.sequences, {}, d.stats, d.layout, tc).steps, 6u);
  tc.max_steps = 4;
  const auto r = train(model, d.sequences, {}, d.stats, d.layout, tc);
  EXPECT_EQ(r.steps, 4u);
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(Train, OverfitsEightSequencesAcrossSeeds) {
  std::size_t settled = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = tiny_data(8, seed);
    WindformerModel<float> model(tiny_config());
    model.initialize(seed);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.lr = 1e-3;
    tc.max_epochs = 500;
    tc.patience = 500;
    tc.max_steps = 500;
    tc.seed = seed;
    std::vector<double> losses;
    TrainCallbacks cb;
    cb.on_step = [&](std::size_t, double loss) { losses.push_back(loss); };
    train(model, d.sequences, {}, d.stats, d.layout, tc, cb);
    ASSERT_EQ(losses.size(), 500u);
    EXPECT_LT(*std::min_element(losses.begin(), losses.end()), 1e-2) << "seed " << seed;
    // Near zero loss, float noise makes single steps wobble; a rebound of
    // more than a tenth of the overfit threshold counts as an increase.
    const double rebound = *std::max_element(losses.begin() + 400, losses.end()) - losses[399];
    settled += rebound <= 1e-3;
  }
  EXPECT_GE(settled, 9u);
}

TEST(Train, CheckpointReproducesValidationErrorExactly) {
  const auto d = tiny_data(12);
  WindformerModel<float> model(tiny_config());
  model.initialize(1);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 2;
  train(model, d.sequences, d.sequences, d.stats, d.layout, tc);
  const auto before = evaluate_sequences(model, d.sequences, d.stats, d.layout);

  const auto path = std::filesystem::path(::testing::TempDir()) / "train_roundtrip.wfckpt";
  write_archive(path, capture_module(model));
  WindformerModel<float> restored(tiny_config());
  restore_module(restored, read_archive(path));
  const auto after = evaluate_sequences(restored, d.sequences, d.stats, d.layout);
  EXPECT_EQ(after.mse(), before.mse());
  EXPECT_EQ(after.mae(), before.mae());
  EXPECT_LE(after.mae(), std::sqrt(after.mse()));
}

TEST(Train, HistoryCsvHasOneRowPerEpoch) {
  std::vector<EpochRecord> h{{1, 2.5, 1.5, 3.0, 1.75, 0.5}, {2, 2.0, 1.25, 2.5, 1.5, 0.25}};
  const auto path = std::filesystem::path(::testing::TempDir()) / "history.csv";
  write_history_csv(path, h);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,train_mse,train_mae,val_mse,val_mae,wall_seconds");
  std::getline(in, line);
  EXPECT_EQ(line, "1,2.5,1.5,3,1.75,0.5");
}

TEST(Predict, BatchedPredictionsMatchSingleForecasts) {
  const auto d = tiny_data(5);
  WindformerModel<double> model(tiny_config());
  model.initialize(2);
  // Populate batch-norm statistics so eval mode is not trivially the identity.
  train(model, d.sequences, {}, d.stats, d.layout, [] {
    TrainConfig tc;
    tc.batch_size = 5;
    tc.max_epochs = 1;
    return tc;
  }());
  const auto batched = predict_sequences(model, d.sequences, d.stats, d.layout, 2);
  ASSERT_EQ(batched.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto single = windformer_forward(d.sequences[i], model, d.stats, d.layout);
    for (std::size_t l = 0; l < 24; ++l) EXPECT_NEAR(batched[i][l], single.speed[l], 1e-12);
  }
  // Errors computed from the predictions agree with the evaluator.
  ErrorAccumulator acc;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t l = 0; l < 24; ++l)
      if (d.sequences[i].target_mask[l]) acc.add(batched[i][l], d.sequences[i].target[l]);
  const auto eval = evaluate_sequences(model, d.sequences, d.stats, d.layout, 3);
  EXPECT_NEAR(acc.mse(), eval.mse(), 1e-12);
  EXPECT_EQ(acc.count, eval.count);
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

namespace {

class LinearToy : public Module<double> {
 public:
  LinearToy() : layer(5, 3) { register_module("layer", layer); }
  Linear<double> layer;
};

}  // namespace

TEST(GradientCheck, LinearToyIsExact) {
  LinearToy toy;
  toy.initialize(3);
  std::mt19937_64 rng(4);
  const auto x = windformer::testing::random_tensor({6, 5}, rng, 1.0, false);
  const auto y = windformer::testing::random_tensor({6, 3}, rng, 1.0, false);
  GradCheckConfig cfg;
  cfg.param_fraction = 1.0;
  const auto r = gradient_check(toy, [&] { return ops::mse_loss(toy.layer.forward(x), y, {}); }, cfg);
  EXPECT_EQ(r.checked, 18u);
  EXPECT_EQ(r.skipped_kinks, 0u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradientCheck, DetectsAWrongGradient) {
  LinearToy toy;
  toy.initialize(5);
  std::mt19937_64 rng(6);
  const auto x = windformer::testing::random_tensor({4, 5}, rng, 1.0, false);
  // The loss uses the bias twice but only one path is differentiable.
  const auto r = gradient_check(
      toy,
      [&] {
        const auto out = toy.layer.forward(x);
        const auto frozen = Tensor<double>::from_vector({3}, values(toy.layer.bias));
        return ops::sum(ops::mul(out, ops::add(out, frozen)));
      },
      {1.0, 1e-5, 0, 1e-7, true});
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_EQ(r.worst.parameter, "layer.bias");
}

TEST(GradientCheck, SmallWindformerPasses) {
  const auto d = tiny_data(2);
  WindformerModel<double> model(tiny_config());
  model.initialize(7);
  const auto batch = make_batch<double>(d.sequences, {0, 1}, d.stats, d.layout);
  GradCheckConfig cfg;
  cfg.param_fraction = 0.05;
  const auto r = gradient_check(model, batch, cfg);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst.parameter << "[" << r.worst.index << "]";
  EXPECT_EQ(model.mode(), ops::NormMode::train);
}

TEST(GradientCheck, StepSweepTradesTruncationForRoundoff) {
  // A smooth model (tanh recurrence, no ReLU kinks that differ per h).
  auto c = tiny_config();
  c.spatial = SpatialVariant::empty;
  c.fusion = FusionVariant::empty;
  const auto d = tiny_data(2);
  std::vector<double> errors;
  for (double h : {1e-3, 1e-4, 1e-5}) {
    WindformerModel<double> model(c);
    model.initialize(8);
    for (auto& p : model.temporal->parameters())
      for (auto& v : p.tensor.mutable_data()) v *= 30;
    const auto batch = make_batch<double>(d.sequences, {0, 1}, d.stats, d.layout);
    GradCheckConfig cfg;
    cfg.param_fraction = 0.05;
    cfg.h = h;
    cfg.floor = 1e-12;
    errors.push_back(gradient_check(model, batch, cfg).max_rel_error);
  }
  // Truncation error falls with h while roundoff grows, so the curve bends up.
  EXPECT_LE(errors[1], 0.5 * (errors[0] + errors[2]));
}
