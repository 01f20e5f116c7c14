#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "windformer/evaluation.hpp"

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

PreparedData tiny_prepared(std::size_t steps = 120) {
  PreparedData d;
  d.dataset_id = "tiny";
  d.layout = make_synthetic_layout(8, 8, 24, 0);
  SynthesisConfig sc;
  sc.steps = steps;
  const auto set = synthesize_wake_dataset(d.layout, sc, 3, 30);
  d.split = split_chronological(set.sequences);
  d.stats = fit_normalizer(d.split.train);
  return d;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = 2;
  t.max_batches_per_epoch = 3;
  return t;
}

// Two turbines on a 1x3 grid whose speed follows `speed(step)`; every other
// channel is constant.
std::vector<SceneSequence> hand_sequences(const TurbineLayout& layout, std::size_t steps,
                                          const std::function<double(std::size_t)>& speed,
                                          std::int64_t step_minutes, std::int64_t horizon) {
  SceneSeries series;
  series.step_minutes = step_minutes;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<TurbineRecord> records;
    for (const auto& p : layout.turbines) records.push_back({p.id, {speed(t), 0.0, 1.0, 1013.0, 15.0, 1.2}});
    series.scenes.push_back(std::make_shared<Scene>(
        embed_to_grid(records, layout, 1000 + static_cast<std::int64_t>(t) * step_minutes)));
  }
  return build_sequences(series, layout, 3, horizon).sequences;
}

TurbineLayout line_layout() {
  TurbineLayout l;
  l.grid_height = 1;
  l.grid_width = 3;
  l.turbines = {{"A", 0, 0}, {"B", 0, 2}};
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

TEST(MetricsReport, RendersThePaperRowLayout) {
  MetricsReport r;
  r.add({"Windformer", "Dataset1", 30, 1.197, 0.681, 1});
  r.add({"Windformer", "Dataset1", 60, 2.914, 1.149, 1});
  r.add({"Windformer", "Dataset1", 90, 4.536, 1.491, 1});
  r.add({"persistence", "Dataset1", 60, 3.5, 1.25, 1});
  const auto table = r.render_table();
  EXPECT_NE(table.find("Dataset: Dataset1"), std::string::npos);
  EXPECT_NE(table.find("Model       | MSE 30 | MSE 60 | MSE 90 | MAE 30 | MAE 60 | MAE 90"), std::string::npos)
      << table;
  EXPECT_NE(table.find("Windformer  |  1.197 |  2.914 |  4.536 |  0.681 |  1.149 |  1.491"), std::string::npos)
      << table;
  EXPECT_NE(table.find("persistence |      - |  3.500 |      - |      - |  1.250 |      -"), std::string::npos)
      << table;
}

TEST(MetricsReport, CsvRoundTripIsExact) {
  MetricsReport r;
  r.add({"a", "d", 30, 1.0 / 3.0, 0.1, 7});
  r.add({"b", "d", 90, 2.5e-17, 1e-9, 1});
  const auto path = std::filesystem::temp_directory_path() / "wf_metrics_roundtrip.csv";
  r.write_csv(path);
  const auto back = MetricsReport::read_csv(path);
  ASSERT_EQ(back.rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.rows[i].model_id, r.rows[i].model_id);
    EXPECT_EQ(back.rows[i].horizon_minutes, r.rows[i].horizon_minutes);
    EXPECT_EQ(back.rows[i].mse, r.rows[i].mse);
    EXPECT_EQ(back.rows[i].mae, r.rows[i].mae);
    EXPECT_EQ(back.rows[i].count, r.rows[i].count);
  }
  std::filesystem::remove(path);
}

TEST(MetricsRow, Consistency) {
  EXPECT_TRUE((MetricsRow{"m", "d", 30, 4.0, 2.0, 1}.consistent()));
  EXPECT_TRUE((MetricsRow{"m", "d", 30, 0.0, 0.0, 1}.consistent()));
  EXPECT_FALSE((MetricsRow{"m", "d", 30, 4.0, 2.001, 1}.consistent()));
  EXPECT_FALSE((MetricsRow{"m", "d", 30, -1.0, 0.0, 1}.consistent()));
  EXPECT_FALSE((MetricsRow{"m", "d", 30, std::nan(""), 0.0, 0}.consistent()));
}

// ---------------------------------------------------------------------------
// Scoring.
// ---------------------------------------------------------------------------

TEST(Evaluate, PerfectPredictorScoresZero) {
  const auto d = tiny_prepared();
  Forecasts perfect;
  for (const auto& s : d.split.test) perfect.push_back(s.target);
  const auto row = score_forecasts(perfect, d.split.test, "oracle", "tiny");
  EXPECT_EQ(row.mse, 0.0);
  EXPECT_EQ(row.mae, 0.0);
  EXPECT_EQ(row.horizon_minutes, 30);
  EXPECT_GT(row.count, 0u);
  perfect.pop_back();
  EXPECT_THROW(score_forecasts(perfect, d.split.test, "oracle", "tiny"), DimensionError);
}

TEST(Evaluate, DeterministicAndEqualToTrainingMetrics) {
  const auto d = tiny_prepared();
  WindformerModel<float> model(tiny_config());
  model.initialize(3);
  const auto a = evaluate(model, d.split.test, d.stats, d.layout, "w", "tiny");
  const auto b = evaluate(model, d.split.test, d.stats, d.layout, "w", "tiny");
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.mae, b.mae);
  const auto acc = evaluate_sequences(model, d.split.test, d.stats, d.layout);
  EXPECT_EQ(a.mse, acc.mse());
  EXPECT_EQ(a.mae, acc.mae());
  EXPECT_TRUE(a.consistent());
}

// ---------------------------------------------------------------------------
// Persistence.
// ---------------------------------------------------------------------------

TEST(Persistence, ConstantSeriesHasZeroError) {
  const auto layout = line_layout();
  const auto seqs = hand_sequences(layout, 12, [](std::size_t) { return 7.25; }, 15, 30);
  ASSERT_FALSE(seqs.empty());
  const auto row = score_forecasts(persistence_forecasts(seqs, layout), seqs, "persistence", "const");
  EXPECT_EQ(row.mse, 0.0);
  EXPECT_EQ(row.mae, 0.0);
}

TEST(Persistence, UnitRampTwoStepsAheadSquaredErrorFour) {
  const auto layout = line_layout();
  // 15-minute steps, 30-minute horizon: the target is two steps past the last input.
  const auto seqs = hand_sequences(layout, 12, [](std::size_t t) { return 3.0 + static_cast<double>(t); }, 15, 30);
  ASSERT_FALSE(seqs.empty());
  for (const auto& s : seqs) {
    const auto p = persistence_baseline(s, layout);
    for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ((p.speed[l] - s.target[l]) * (p.speed[l] - s.target[l]), 4.0);
    EXPECT_EQ(p.valid_at(), s.target_timestamp());
  }
  const auto row = score_forecasts(persistence_forecasts(seqs, layout), seqs, "persistence", "ramp");
  EXPECT_EQ(row.mse, 4.0);
  EXPECT_EQ(row.mae, 2.0);
}

TEST(Persistence, FallsBackToEarlierObservationThenSceneMean) {
  const auto layout = line_layout();
  auto seqs = hand_sequences(layout, 5, [](std::size_t t) { return 1.0 + static_cast<double>(t); }, 15, 30);
  ASSERT_FALSE(seqs.empty());
  auto seq = seqs.front();  // scenes at speeds 1, 2, 3
  auto last = std::make_shared<Scene>(*seq.scenes.back());
  last->valid_mask[layout.cell_of(0)] = 0;
  seq.scenes.back() = last;
  auto p = persistence_baseline(seq, layout);
  EXPECT_EQ(p.speed[0], 2.0);  // the middle scene
  EXPECT_EQ(p.speed[1], 3.0);

  // Turbine A never observed: mean of the last scene's valid cells.
  for (auto& scene : seq.scenes) {
    auto copy = std::make_shared<Scene>(*scene);
    copy->valid_mask[layout.cell_of(0)] = 0;
    scene = copy;
  }
  p = persistence_baseline(seq, layout);
  EXPECT_EQ(p.speed[0], 3.0);
}

// ---------------------------------------------------------------------------
// Ablation grid.
// ---------------------------------------------------------------------------

TEST(AblationGrid, NamedGrids) {
  const auto full = full_ablation_grid();
  EXPECT_EQ(full.size(), 96u);
  const auto paper = paper_ablation_grid();
  ASSERT_EQ(paper.size(), 12u);
  EXPECT_EQ(paper.front(), AblationSpec{});
  EXPECT_EQ(paper.front().name(), "bi-convgru/shift-window/full");
  for (std::size_t i = 0; i < paper.size(); ++i)
    for (std::size_t j = i + 1; j < paper.size(); ++j) EXPECT_FALSE(paper[i] == paper[j]);
  EXPECT_EQ(parse_ablation_grid("full"), full);
  EXPECT_EQ(parse_ablation_grid("paper"), paper);
}

TEST(AblationGrid, ProductAndExplicitLists) {
  const auto product = parse_ablation_grid(nlohmann::json{{"spatial", {"window", "shift-window"}},
                                                          {"fusion", {"empty", "full"}}});
  ASSERT_EQ(product.size(), 4u);
  EXPECT_EQ(product[0], (AblationSpec{TemporalVariant::bi_convgru, SpatialVariant::window, FusionVariant::empty}));
  EXPECT_EQ(product[3], AblationSpec{});

  const auto specs = parse_ablation_grid(
      nlohmann::json::parse(R"({"specs": [{"temporal": "empty"}, {"spatial": "cnn", "fusion": "global-only"}]})"));
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs[0], (AblationSpec{TemporalVariant::empty, SpatialVariant::shift_window, FusionVariant::full}));
  EXPECT_EQ(specs[1], (AblationSpec{TemporalVariant::bi_convgru, SpatialVariant::cnn, FusionVariant::global_only}));
  EXPECT_EQ(AblationSpec::from_json(specs[1].to_json()), specs[1]);
}

TEST(AblationGrid, InconsistentGridsAreConfigErrors) {
  using nlohmann::json;
  EXPECT_THROW(parse_ablation_grid("everything"), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"spatial", {"window", "window"}}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"spatial", {"swin"}}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"spatial", json::array()}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"specs", {{{"temporal", "empty"}}}}, {"spatial", {"cnn"}}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"specs", {{{"temporal", "lstm"}}}}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"specs", {{{"tempral", "empty"}}}}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"temporals", {"empty"}}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(json{{"specs", {json::object(), json::object()}}}), ConfigError);
  EXPECT_THROW(parse_ablation_grid(42), ConfigError);

  // A spec whose model cannot be built is rejected before any training.
  auto base = tiny_config();
  base.heads = {3, 4};
  EXPECT_THROW(run_ablation({AblationSpec{}}, tiny_prepared(), base, quick_train()), ConfigError);
}

TEST(Ablation, DefaultSpecReproducesDirectTrainingExactly) {
  const auto d = tiny_prepared();
  const auto t = quick_train();
  const auto result = run_ablation({AblationSpec{}}, d, tiny_config(), t);
  ASSERT_EQ(result.report.rows.size(), 1u);

  WindformerModel<float> model(tiny_config());
  model.initialize(t.seed);
  const auto direct = train(model, d.split.train, d.split.val, d.stats, d.layout, t);
  const auto row = evaluate(model, d.split.test, d.stats, d.layout, "direct", "tiny");
  EXPECT_EQ(result.report.rows[0].mse, row.mse);
  EXPECT_EQ(result.report.rows[0].mae, row.mae);
  EXPECT_EQ(result.report.rows[0].model_id, "bi-convgru/shift-window/full");
  ASSERT_EQ(result.outcomes[0].training.history.size(), direct.history.size());
  for (std::size_t e = 0; e < direct.history.size(); ++e)
    EXPECT_EQ(result.outcomes[0].training.history[e].val_mse, direct.history[e].val_mse);
}

TEST(Ablation, FusionEmptyRemovesFusionParameters) {
  auto count_fusion = [](const ModelConfig& c) {
    WindformerModel<float> model(c);
    std::size_t n = 0;
    for (const auto& name : capture_module(model).names()) n += name.find(".fusion.") != std::string::npos;
    return n;
  };
  EXPECT_GT(count_fusion(AblationSpec{}.apply(tiny_config())), 0u);
  const AblationSpec no_fusion{TemporalVariant::bi_convgru, SpatialVariant::shift_window, FusionVariant::empty};
  EXPECT_EQ(count_fusion(no_fusion.apply(tiny_config())), 0u);
}

TEST(Ablation, EmptyModulesLeaveNoParameters) {
  auto names = [](const AblationSpec& s) {
    WindformerModel<float> model(s.apply(tiny_config()));
    return capture_module(model).names();
  };
  for (const auto& n : names({TemporalVariant::empty, SpatialVariant::shift_window, FusionVariant::full}))
    EXPECT_NE(n.rfind("temporal.", 0), 0u) << n;
  for (const auto& n : names({TemporalVariant::bi_convgru, SpatialVariant::empty, FusionVariant::full})) {
    EXPECT_EQ(n.find(".attn."), std::string::npos) << n;
    EXPECT_EQ(n.find(".block"), std::string::npos) << n;
  }
}

// ---------------------------------------------------------------------------
// Prediction curves.
// ---------------------------------------------------------------------------

TEST(PredictionCurve, PerfectPredictorAndGroundTruth) {
  const auto d = tiny_prepared();
  const auto& seqs = d.split.test;
  Forecasts perfect;
  for (const auto& s : seqs) perfect.push_back(s.target);
  const std::string id = d.layout.turbines[5].id;
  const auto begin = seqs[2].target_timestamp();
  const auto end = seqs[9].target_timestamp();
  const auto points = export_prediction_curve(perfect, seqs, d.layout, id, begin, end);
  std::size_t expected = 0;
  for (const auto& s : seqs) expected += s.target_timestamp() >= begin && s.target_timestamp() <= end;
  ASSERT_EQ(points.size(), expected);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& s = seqs[2 + i];
    EXPECT_EQ(points[i].timestamp, s.target_timestamp());
    EXPECT_EQ(points[i].actual, s.target[5]);
    EXPECT_EQ(points[i].predicted, points[i].actual);
  }
  EXPECT_THROW(export_prediction_curve(perfect, seqs, d.layout, "nope", begin, end), DataError);
}

TEST(PredictionCurve, ModelCurveMatchesBatchedPredictionsAndCsv) {
  const auto d = tiny_prepared();
  WindformerModel<float> model(tiny_config());
  model.initialize(1);
  const auto& seqs = d.split.test;
  const std::string id = d.layout.turbines[0].id;
  const auto points = export_prediction_curve(model, seqs, d.stats, d.layout, id, INT64_MIN, INT64_MAX);
  const auto preds = predict_sequences(model, seqs, d.stats, d.layout);
  ASSERT_EQ(points.size(), seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) EXPECT_EQ(points[i].predicted, preds[i][0]);

  const auto path = std::filesystem::temp_directory_path() / "wf_curve.csv";
  write_curve_csv(path, points);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "timestamp,actual,predicted");
  std::getline(in, line);
  std::istringstream fields(line);
  std::string ts, actual;
  std::getline(fields, ts, ',');
  std::getline(fields, actual, ',');
  EXPECT_EQ(parse_timestamp(ts), points[0].timestamp);
  EXPECT_EQ(std::stod(actual), points[0].actual);
  std::filesystem::remove(path);
}
