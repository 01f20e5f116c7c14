// Acceptance checks: one PASS/FAIL line per criterion. Tolerances and budgets
// are fixed here; `--only` selects criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "support/attention_oracle.hpp"
#include "windformer/cli.hpp"
#include "windformer/logging.hpp"

using namespace windformer;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::from_vector(std::move(shape), std::move(v));
}

ModelConfig tiny_model() {
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

PreparedData tiny_data(std::size_t steps) {
  DataConfig d;
  d.dataset_id = "tiny-wake";
  d.grid_height = 8;
  d.grid_width = 8;
  d.turbines = 24;
  d.synthesis.steps = steps;
  return prepare_data(d, 3, 30);
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity
// ---------------------------------------------------------------------------

constexpr double kGradThreshold = 1e-3;
constexpr double kGradBudgetSeconds = 600;

Outcome gradient_integrity() {
  const auto start = Clock::now();
  const ModelConfig config;  // desk: 16x16, T = 4, C1 = 48
  const auto layout = make_synthetic_layout(config.grid_height, config.grid_width, config.turbines, 0);
  SynthesisConfig sc;
  sc.steps = 32;
  const auto set = synthesize_wake_dataset(layout, sc, config.history, 30);
  const auto stats = fit_normalizer(set.sequences);
  WindformerModel<double> model(config);
  model.initialize(0);
  const auto batch = make_batch<double>(set.sequences, {0}, stats, layout);
  GradCheckConfig gc;  // 1% of each tensor, h = 1e-4
  const auto report = gradient_check(model, batch, gc);
  const double total = seconds_since(start);
  return {report.passed(kGradThreshold) && total < kGradBudgetSeconds,
          fmt("max rel. err %.3e over %zu coordinates (%zu skipped at ReLU kinks, worst %s); %.1f s "
              "[need < %.0e, < %.0f s]",
              report.max_rel_error, report.checked, report.skipped_kinks, report.worst.parameter.c_str(), total,
              kGradThreshold, kGradBudgetSeconds)};
}

// ---------------------------------------------------------------------------
// 2. Attention oracle
// ---------------------------------------------------------------------------

constexpr double kOracleTolerance = 1e-5;

Outcome attention_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int instance = 0; instance < 20; ++instance) {
    const std::size_t window = 2 + instance % 3;
    const std::size_t heads = 1 + instance % 4;
    const std::size_t dim = heads * (2 + instance % 3);
    WindowAttention<double> attn(dim, heads, window, false);
    attn.initialize(static_cast<std::uint64_t>(instance));
    for (auto& p : attn.parameters())
      for (auto& v : p.tensor.mutable_data()) v *= 1 + instance % 5 * 5;  // from soft to sharp softmax
    const auto x = random_tensor({1, window, window, dim}, rng);
    const auto out = attn.forward(window_partition(x, window), {});
    const auto ref = windformer::testing::dense_attention(attn, {x.data().begin(), x.data().end()}, window * window);
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(out.at(i) - ref[i]));
  }
  const double t = seconds_since(start);
  return {worst <= kOracleTolerance && t < 1.0,
          fmt("20 instances, max abs diff %.3e, %.3f s [need <= %.0e, < 1 s]", worst, t, kOracleTolerance)};
}

// ---------------------------------------------------------------------------
// 3. Shift-mask soundness
// ---------------------------------------------------------------------------

constexpr double kCrossRegionLimit = 1e-6;

Outcome shift_mask_soundness() {
  std::size_t checked = 0, cross = 0;
  double worst = 0;
  bool mask_matches = true;
  // The mask itself against the geometric oracle, for every token pair.
  const auto mask = build_shift_mask(8, 8, 4, 2);
  for (std::size_t win = 0; win < 4; ++win)
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j) {
        const std::size_t ci = ((win / 2) * 4 + i / 4) * 8 + (win % 2) * 4 + i % 4;
        const std::size_t cj = ((win / 2) * 4 + j / 4) * 8 + (win % 2) * 4 + j % 4;
        const bool allowed = windformer::testing::contiguous_before_shift(8, 8, 4, 2, ci, cj);
        mask_matches &= mask[(win * 16 + i) * 16 + j] == (allowed ? 0.0 : kMaskValue);
      }
  // Post-softmax weights of real blocks, sharpened so masked logits have to fight.
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    ShiftWindowBlock<double> block(8, 2, 4, 2, 4.0, true);
    block.initialize(seed);
    for (auto& p : block.attn.parameters())
      for (auto& v : p.tensor.mutable_data()) v *= 1 + static_cast<double>(seed) * 4;
    AttentionProbe<double> probe;
    block.attn.probe = &probe;
    std::mt19937_64 rng(seed + 50);
    block.forward({random_tensor({2, 8, 8, 8}, rng, 2.0), {}});
    const auto& w = probe.weights;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t win = 0; win < 4; ++win)
        for (std::size_t h = 0; h < 2; ++h)
          for (std::size_t i = 0; i < 16; ++i)
            for (std::size_t j = 0; j < 16; ++j) {
              ++checked;
              const std::size_t ci = ((win / 2) * 4 + i / 4) * 8 + (win % 2) * 4 + i % 4;
              const std::size_t cj = ((win / 2) * 4 + j / 4) * 8 + (win % 2) * 4 + j % 4;
              if (windformer::testing::contiguous_before_shift(8, 8, 4, 2, ci, cj)) continue;
              ++cross;
              worst = std::max(worst, w[(((b * 4 + win) * 2 + h) * 16 + i) * 16 + j]);
            }
  }
  return {mask_matches && cross > 0 && worst < kCrossRegionLimit,
          fmt("%zu weights checked, %zu across regions, max cross-region weight %.3e, mask %s oracle "
              "[need < %.0e]",
              checked, cross, worst, mask_matches ? "matches" : "DIFFERS FROM", kCrossRegionLimit)};
}

// ---------------------------------------------------------------------------
// 4, 5. Comparative runs on the synthetic wake dataset
// ---------------------------------------------------------------------------

struct ComparativeBudget {
  std::size_t steps = 1500;
  std::size_t batches_per_epoch = 250;
};

constexpr double kConnectivityBudgetSeconds = 3600;

struct ComparativeRun {
  PreparedData data;
  TrainConfig train;
  ModelConfig base;
  std::map<std::string, MetricsRow> rows;
  std::map<std::string, double> seconds;
  double persistence_mse = 0;
  double data_seconds = 0;

  const MetricsRow& run(const AblationSpec& spec) {
    const auto name = spec.name();
    if (!rows.contains(name)) {
      const auto start = Clock::now();
      const auto result = run_ablation({spec}, data, base, train);
      rows[name] = result.report.rows.front();
      seconds[name] = seconds_since(start);
      std::cerr << "  " << name << ": test MSE " << rows[name].mse << " (" << seconds[name] << " s, "
                << result.outcomes.front().training.steps << " steps)\n";
    }
    return rows.at(name);
  }
};

ComparativeRun& comparative(const ComparativeBudget& budget) {
  static std::optional<ComparativeRun> run;
  if (!run) {
    const auto start = Clock::now();
    run.emplace();
    DataConfig d;  // seed 0, 10k steps, 16x16, L = 200
    run->data = prepare_data(d, ModelConfig{}.history, 30);
    run->base = ModelConfig{};
    run->train.batch_size = 16;
    run->train.max_batches_per_epoch = budget.batches_per_epoch;
    run->train.max_steps = budget.steps;
    run->train.max_epochs = (budget.steps + budget.batches_per_epoch - 1) / budget.batches_per_epoch;
    run->persistence_mse =
        score_forecasts(persistence_forecasts(run->data.split.test, run->data.layout), run->data.split.test,
                        "persistence", d.dataset_id)
            .mse;
    run->data_seconds = seconds_since(start);
  }
  return *run;
}

Outcome connectivity(const ComparativeBudget& budget) {
  auto& c = comparative(budget);
  const auto& shift = c.run({});
  const auto& window = c.run({TemporalVariant::bi_convgru, SpatialVariant::window, FusionVariant::full});
  const double total = c.data_seconds + c.seconds.at(AblationSpec{}.name()) +
                       c.seconds.at(AblationSpec{TemporalVariant::bi_convgru, SpatialVariant::window,
                                                 FusionVariant::full}.name());
  const bool ordered = shift.mse < window.mse;
  const bool beat = shift.mse < c.persistence_mse && window.mse < c.persistence_mse;
  return {ordered && beat && total < kConnectivityBudgetSeconds,
          fmt("test MSE shift-window %.4f, window %.4f, persistence %.4f; %zu steps each; %.0f s "
              "[need shift < window, both < persistence, < %.0f s]",
              shift.mse, window.mse, c.persistence_mse, c.train.max_steps, total, kConnectivityBudgetSeconds)};
}

Outcome temporal_ordering(const ComparativeBudget& budget) {
  auto& c = comparative(budget);
  const auto& full = c.run({});
  const auto& empty = c.run({TemporalVariant::empty, SpatialVariant::shift_window, FusionVariant::full});
  return {full.mse < empty.mse,
          fmt("test MSE bi-convgru %.4f, empty temporal %.4f; %zu steps each [need bi-convgru < empty]", full.mse,
              empty.mse, c.train.max_steps)};
}

// ---------------------------------------------------------------------------
// 6. Channel-fusion gate
// ---------------------------------------------------------------------------

Outcome fusion_gate() {
  std::size_t inputs = 0, violations = 0;
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t dim = 4 + trial % 13;
    ChannelFusion<double> fusion(dim, 4, FusionVariant::full);
    fusion.initialize(static_cast<std::uint64_t>(trial));
    const double scale = std::pow(10.0, trial % 4);  // up to saturated gates
    for (auto& p : fusion.parameters())
      for (auto& v : p.tensor.mutable_data()) v *= scale;
    if (trial % 2) fusion.eval();
    const auto x = random_tensor({2, 3, 3, dim}, rng, 1.0 + trial % 7);
    const auto out = fusion.forward({x, {}}).x;
    ++inputs;
    for (std::size_t i = 0; i < x.numel(); ++i) violations += std::abs(out.at(i)) > std::abs(x.at(i));
  }
  ChannelFusion<double> zero(16, 4, FusionVariant::full);
  for (auto& p : zero.parameters())
    for (auto& v : p.tensor.mutable_data()) v = 0;
  const auto x = random_tensor({4, 5, 5, 16}, rng, 3.0);
  const auto out = zero.forward({x, {}}).x;
  bool half = true;
  for (std::size_t i = 0; i < x.numel(); ++i) half &= out.at(i) == 0.5 * x.at(i);
  return {violations == 0 && half, fmt("%zu random inputs, %zu elements with |X'| > |X|; zero gate %s 0.5 X",
                                       inputs, violations, half ? "gives exactly" : "DOES NOT give")};
}

// ---------------------------------------------------------------------------
// 7. Overfit capacity
// ---------------------------------------------------------------------------

constexpr double kOverfitTarget = 1e-2;
constexpr std::size_t kOverfitSteps = 500;
constexpr double kOverfitBudgetSeconds = 300;

Outcome overfit_capacity() {
  const auto start = Clock::now();
  const ModelConfig config;
  const auto layout = make_synthetic_layout(config.grid_height, config.grid_width, config.turbines, 0);
  SynthesisConfig sc;
  sc.steps = 8 + config.history + 3;
  auto set = synthesize_wake_dataset(layout, sc, config.history, 30);
  set.sequences.resize(8);
  const auto stats = fit_normalizer(set.sequences);
  const auto batch = make_batch<float>(set.sequences, {0, 1, 2, 3, 4, 5, 6, 7}, stats, layout);

  WindformerModel<float> model(config);
  model.initialize(0);
  model.train();
  AdamW<float> optimizer(model.parameters(), {1e-3, 0.9, 0.999, 1e-8, 1e-4});
  double best = INFINITY;
  std::size_t reached = 0;
  for (std::size_t step = 1; step <= kOverfitSteps && reached == 0; ++step) {
    model.zero_grad();
    auto loss = ops::mse_loss(model.forward(batch.inputs), batch.targets, batch.mask);
    const double value = loss.item();
    best = std::min(best, value);
    if (value < kOverfitTarget) reached = step;
    loss.backward();
    optimizer.step();
  }
  const double t = seconds_since(start);
  return {reached > 0 && t < kOverfitBudgetSeconds,
          reached ? fmt("train MSE %.2e < %.0e at step %zu; %.1f s [need within %zu steps, < %.0f s]", best,
                        kOverfitTarget, reached, t, kOverfitSteps, kOverfitBudgetSeconds)
                  : fmt("best train MSE %.3e after %zu steps; %.1f s [need < %.0e]", best, kOverfitSteps, t,
                        kOverfitTarget)};
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence
// ---------------------------------------------------------------------------

Outcome determinism() {
  const auto data = tiny_data(200);
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = 3;
  t.max_batches_per_epoch = 5;
  t.seed = 8;
  auto run = [&](WindformerModel<float>& model) {
    model.initialize(t.seed);
    return train(model, data.split.train, data.split.val, data.stats, data.layout, t);
  };
  WindformerModel<float> a(tiny_model()), b(tiny_model());
  const auto ha = run(a).history;
  const auto hb = run(b).history;
  bool same = ha.size() == hb.size();
  for (std::size_t e = 0; same && e < ha.size(); ++e)
    same = ha[e].train_mse == hb[e].train_mse && ha[e].train_mae == hb[e].train_mae &&
           ha[e].val_mse == hb[e].val_mse && ha[e].val_mae == hb[e].val_mae;

  const auto path = std::filesystem::temp_directory_path() / "wf_acceptance.wfckpt";
  write_archive(path, capture_module(a));
  WindformerModel<float> restored(tiny_model());
  restore_module(restored, read_archive(path));
  std::filesystem::remove(path);
  const auto before = evaluate_sequences(a, data.split.val, data.stats, data.layout);
  const auto after = evaluate_sequences(restored, data.split.val, data.stats, data.layout);
  const bool round_trip = before.mse() == after.mse() && before.mae() == after.mae();
  return {same && round_trip,
          fmt("%zu-epoch histories %s; val MSE %.17g before and %.17g after checkpoint round-trip",
              ha.size(), same ? "bit-identical" : "DIFFER", before.mse(), after.mse())};
}

// ---------------------------------------------------------------------------
// 9. Round-trips
// ---------------------------------------------------------------------------

Outcome round_trips() {
  std::mt19937_64 rng(9);
  bool partition = true, shift = true;
  for (auto [H, W, w] : {std::tuple<std::size_t, std::size_t, std::size_t>{8, 8, 4}, {16, 12, 4}, {6, 6, 2}}) {
    const auto x = random_tensor({2, H, W, 3}, rng);
    partition &= bit_equal(window_reverse(window_partition(x, w), w, H, W), x);
    for (std::int64_t s : {1, 2, 3}) shift &= bit_equal(cyclic_shift(cyclic_shift(x, s), -s), x);
  }

  const auto layout = make_synthetic_layout(16, 16, 200, 9);
  std::vector<TurbineRecord> records;
  std::uniform_real_distribution<double> u(-5, 5);
  for (const auto& t : layout.turbines) {
    std::vector<double> f(kFeatureCount);
    for (auto& v : f) v = u(rng);
    records.push_back({t.id, f});
  }
  const auto scene = embed_to_grid(records, layout, 0);
  const auto back = extract_turbine_values(scene, layout);
  bool embed = back.size() == records.size();
  for (std::size_t i = 0; embed && i < back.size(); ++i)
    embed = back[i].id == records[i].id && back[i].features == records[i].features;

  SynthesisConfig sc;
  sc.steps = 40;
  const auto set = synthesize_wake_dataset(layout, sc, 4, 30);
  const auto stats = fit_normalizer(set.sequences);
  double norm_err = 0;
  for (const auto& s : set.sequences) {
    const auto& raw = *s.scenes.back();
    const auto restored = stats.invert(stats.apply(raw));
    for (std::size_t i = 0; i < raw.features.size(); ++i)
      norm_err = std::max(norm_err, std::abs(restored.features[i] - raw.features[i]));
  }
  const bool norm = norm_err <= 1e-6;
  return {partition && shift && embed && norm,
          fmt("partition/reverse %s, shift/unshift %s, embed/extract %s, normalize/denormalize max err %.2e "
              "[exact, exact, exact, <= 1e-6]",
              partition ? "exact" : "DIFFERS", shift ? "exact" : "DIFFERS", embed ? "exact" : "DIFFERS", norm_err)};
}

// ---------------------------------------------------------------------------
// 10. Metric invariant across the full grid
// ---------------------------------------------------------------------------

Outcome metric_invariant() {
  const auto data = tiny_data(160);
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = 1;
  t.max_steps = 3;
  auto result = run_ablation(full_ablation_grid(), data, tiny_model(), t);
  result.report.add(score_forecasts(persistence_forecasts(data.split.test, data.layout), data.split.test,
                                    "persistence", data.dataset_id));
  // Check the rows as they are emitted: through the CSV.
  const auto path = std::filesystem::temp_directory_path() / "wf_acceptance_grid.csv";
  result.report.write_csv(path);
  const auto emitted = MetricsReport::read_csv(path);
  std::filesystem::remove(path);
  std::size_t bad = 0;
  for (const auto& row : emitted.rows) bad += !row.consistent();
  return {bad == 0 && emitted.rows.size() == 97,
          fmt("%zu rows (96 specs + persistence), %zu violate 0 <= MAE <= sqrt(MSE)", emitted.rows.size(), bad)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Windformer acceptance checks"};
  std::vector<int> only;
  ComparativeBudget budget;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--comparative-steps", budget.steps, "optimizer steps per model for criteria 4 and 5");
  CLI11_PARSE(app, argc, argv);
  log::set_level("warn");

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient integrity", gradient_integrity}},
      {2, {"attention oracle", attention_oracle}},
      {3, {"shift-mask soundness", shift_mask_soundness}},
      {4, {"connectivity (shift-window vs window vs persistence)", [&] { return connectivity(budget); }}},
      {5, {"temporal ablation ordering", [&] { return temporal_ordering(budget); }}},
      {6, {"channel-fusion gate", fusion_gate}},
      {7, {"overfit capacity", overfit_capacity}},
      {8, {"determinism and checkpoint round-trip", determinism}},
      {9, {"round-trips", round_trips}},
      {10, {"metric invariant over the full ablation grid", metric_invariant}},
  };
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty())
    for (const auto& [id, _] : criteria) selected.insert(id);

  int failed = 0;
  for (int id : selected) {
    const auto& [name, check] = criteria.at(id);
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail
              << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
