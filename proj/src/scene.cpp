#include "windformer/scene.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "windformer/module.hpp"
#include "windformer/random.hpp"

namespace windformer {

const std::array<const char*, kFeatureCount> kChannelNames = {
    "wind_speed", "wind_direction_sin", "wind_direction_cos", "pressure", "temperature", "air_density"};

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

// ---------------------------------------------------------------------------
// Layout.
// ---------------------------------------------------------------------------

std::optional<std::size_t> TurbineLayout::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < turbines.size(); ++i)
    if (turbines[i].id == id) return i;
  return std::nullopt;
}

void TurbineLayout::validate() const {
  if (grid_height == 0 || grid_width == 0) throw DataError("layout grid dimensions must be positive");
  if (turbines.empty()) throw DataError("layout has no turbines");
  if (turbines.size() > grid_height * grid_width)
    throw DataError("layout has more turbines than grid cells");
  if (!(cell_resolution_km > 0)) throw DataError("layout cell_resolution_km must be positive");
  std::set<std::string> ids;
  std::map<std::size_t, std::string> cells;
  for (const auto& t : turbines) {
    if (t.row >= grid_height || t.col >= grid_width)
      throw DataError("turbine '" + t.id + "' at (" + std::to_string(t.row) + "," +
                      std::to_string(t.col) + ") lies outside the " + std::to_string(grid_height) +
                      "x" + std::to_string(grid_width) + " grid");
    if (!ids.insert(t.id).second) throw DataError("duplicate turbine id '" + t.id + "'");
    auto [it, fresh] = cells.emplace(t.row * grid_width + t.col, t.id);
    if (!fresh) throw DataError("turbines '" + it->second + "' and '" + t.id + "' share a cell");
  }
}

nlohmann::json TurbineLayout::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& t : turbines) list.push_back({{"id", t.id}, {"row", t.row}, {"col", t.col}});
  return {{"grid_height", grid_height},
          {"grid_width", grid_width},
          {"cell_resolution_km", cell_resolution_km},
          {"turbines", list}};
}

TurbineLayout TurbineLayout::from_json(const nlohmann::json& j) {
  TurbineLayout layout;
  try {
    layout.grid_height = j.at("grid_height").get<std::size_t>();
    layout.grid_width = j.at("grid_width").get<std::size_t>();
    layout.cell_resolution_km = j.value("cell_resolution_km", 2.0);
    for (const auto& t : j.at("turbines"))
      layout.turbines.push_back(
          {t.at("id").get<std::string>(), t.at("row").get<std::size_t>(), t.at("col").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed layout: ") + e.what());
  }
  layout.validate();
  return layout;
}

TurbineLayout TurbineLayout::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open layout file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("layout file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void TurbineLayout::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write layout file '" + path.string() + "'");
  out << to_json().dump(2) << "\n";
}

TurbineLayout make_synthetic_layout(std::size_t height, std::size_t width, std::size_t count,
                                    std::uint64_t seed) {
  if (count == 0 || count > height * width)
    throw DataError("cannot place " + std::to_string(count) + " turbines on a " +
                    std::to_string(height) + "x" + std::to_string(width) + " grid");
  auto cells = permutation(height * width, stable_hash("layout", seed));
  cells.resize(count);
  std::sort(cells.begin(), cells.end());
  TurbineLayout layout;
  layout.grid_height = height;
  layout.grid_width = width;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "T%03zu", i);
    layout.turbines.push_back({id, cells[i] / width, cells[i] % width});
  }
  return layout;
}

// ---------------------------------------------------------------------------
// Features and scenes.
// ---------------------------------------------------------------------------

bool RawRecord::finite() const {
  return std::isfinite(wind_speed) && std::isfinite(wind_direction_deg) && std::isfinite(pressure) &&
         std::isfinite(temperature) && std::isfinite(air_density);
}

std::array<double, kFeatureCount> encode_record(const RawRecord& r) {
  const double theta = r.wind_direction_deg * kDegToRad;
  return {r.wind_speed, std::sin(theta), std::cos(theta), r.pressure, r.temperature, r.air_density};
}

RawRecord decode_cell(const Scene& scene, std::size_t row, std::size_t col) {
  double deg = std::atan2(scene.at(kDirectionSin, row, col), scene.at(kDirectionCos, row, col)) / kDegToRad;
  if (deg < 0) deg += 360.0;
  return {scene.at(kWindSpeed, row, col), deg, scene.at(kPressure, row, col),
          scene.at(kTemperature, row, col), scene.at(kAirDensity, row, col)};
}

Scene embed_to_grid(const std::vector<TurbineRecord>& records, const TurbineLayout& layout,
                    std::int64_t timestamp, EmbedReport* report) {
  std::unordered_map<std::string, const TurbineRecord*> by_id;
  for (const auto& r : records) {
    if (!layout.index_of(r.id)) throw DataError("unknown turbine id '" + r.id + "'");
    by_id[r.id] = &r;
  }
  Scene scene;
  scene.height = layout.grid_height;
  scene.width = layout.grid_width;
  scene.timestamp = timestamp;
  scene.channels = records.empty() ? kFeatureCount : records.front().features.size();
  const std::size_t plane = scene.height * scene.width;
  scene.features.assign(scene.channels * plane, 0.0);
  scene.valid_mask.assign(plane, 0);

  std::size_t rejected = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = layout.turbines[i];
    auto it = by_id.find(t.id);
    if (it == by_id.end()) throw DataError("no record for turbine '" + t.id + "'");
    const auto& f = it->second->features;
    if (f.size() != scene.channels)
      throw DataError("turbine '" + t.id + "' has " + std::to_string(f.size()) + " features, expected " +
                      std::to_string(scene.channels));
    if (!std::all_of(f.begin(), f.end(), [](double v) { return std::isfinite(v); })) {
      ++rejected;
      continue;
    }
    const std::size_t cell = layout.cell_of(i);
    for (std::size_t c = 0; c < scene.channels; ++c) scene.features[c * plane + cell] = f[c];
    scene.valid_mask[cell] = 1;
  }
  if (report) report->rejected += rejected;
  return scene;
}

std::vector<TurbineRecord> extract_turbine_values(const Scene& scene, const TurbineLayout& layout) {
  std::vector<TurbineRecord> out;
  const std::size_t plane = scene.height * scene.width;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::size_t cell = layout.cell_of(i);
    if (!scene.valid_mask[cell]) continue;
    TurbineRecord r{layout.turbines[i].id, std::vector<double>(scene.channels)};
    for (std::size_t c = 0; c < scene.channels; ++c) r.features[c] = scene.features[c * plane + cell];
    out.push_back(std::move(r));
  }
  return out;
}

SequenceSet build_sequences(const SceneSeries& series, const TurbineLayout& layout,
                            std::size_t history, std::int64_t horizon_minutes) {
  if (history == 0) throw DataError("history length must be at least 1");
  if (horizon_minutes <= 0) throw DataError("horizon must be positive");
  if (series.scenes.empty()) throw DataError("no scenes to build sequences from");
  const std::int64_t step = series.step_minutes;
  if (step <= 0) throw DataError("series has no regular time step");
  if (horizon_minutes % step != 0)
    throw DataError("horizon " + std::to_string(horizon_minutes) + " min is not a multiple of the " +
                    std::to_string(step) + " min step");

  std::unordered_map<std::int64_t, std::size_t> index;
  for (std::size_t i = 0; i < series.scenes.size(); ++i) index[series.scenes[i]->timestamp] = i;
  const std::int64_t last_ts = series.scenes.back()->timestamp;

  SequenceSet out;
  out.rejected_records = series.rejected_records;
  for (const auto& first : series.scenes) {
    const std::int64_t t0 = first->timestamp;
    const std::int64_t target_ts = t0 + static_cast<std::int64_t>(history - 1) * step + horizon_minutes;
    if (target_ts > last_ts) break;
    SceneSequence seq;
    seq.horizon_minutes = horizon_minutes;
    seq.step_minutes = step;
    bool complete = true;
    for (std::size_t k = 0; k < history && complete; ++k) {
      auto it = index.find(t0 + static_cast<std::int64_t>(k) * step);
      if (it == index.end())
        complete = false;
      else
        seq.scenes.push_back(series.scenes[it->second]);
    }
    auto target_it = index.find(target_ts);
    if (!complete || target_it == index.end()) {
      ++out.skipped_windows;
      continue;
    }
    const Scene& target = *series.scenes[target_it->second];
    const std::size_t plane = target.height * target.width;
    seq.target.assign(layout.size(), 0.0);
    seq.target_mask.assign(layout.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const std::size_t cell = layout.cell_of(i);
      if (!target.valid_mask[cell]) continue;
      seq.target[i] = target.features[kWindSpeed * plane + cell];
      seq.target_mask[i] = 1;
      any = true;
    }
    if (!any) {
      ++out.skipped_windows;
      continue;
    }
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV.
// ---------------------------------------------------------------------------

std::int64_t parse_timestamp(const std::string& text) {
  if (text.empty()) throw DataError("empty timestamp");
  std::int64_t minutes = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), minutes);
  if (ec == std::errc() && end == text.data() + text.size()) return minutes;

  int y, mo, d, h, mi, s = 0;
  char sep;
  int consumed = 0;
  const int n = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (n != 6 || (sep != 'T' && sep != ' ')) throw DataError("unrecognized timestamp '" + text + "'");
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.back() == 'Z') rest.pop_back();
  if (!rest.empty()) {
    int more = 0;
    if (std::sscanf(rest.c_str(), ":%2d%n", &s, &more) != 1 || static_cast<std::size_t>(more) != rest.size())
      throw DataError("unrecognized timestamp '" + text + "'");
    if (s != 0) throw DataError("timestamp '" + text + "' is not on a whole minute");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59)
    throw DataError("invalid calendar timestamp '" + text + "'");
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 1440 + h * 60 + mi;
}

std::string format_timestamp(std::int64_t minutes) {
  using namespace std::chrono;
  std::int64_t days = minutes / 1440;
  std::int64_t rem = minutes % 1440;
  if (rem < 0) {
    rem += 1440;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 60), static_cast<int>(rem % 60));
  return buf;
}

SceneSeries load_csv_series(const std::filesystem::path& path, const TurbineLayout& layout) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  static const char* kColumns[] = {"timestamp", "turbine_id",  "wind_speed", "wind_direction_deg",
                                   "pressure",  "temperature", "air_density"};
  const auto header = split_csv_line(line);
  std::array<std::size_t, 7> column{};
  for (std::size_t k = 0; k < 7; ++k) {
    auto it = std::find(header.begin(), header.end(), kColumns[k]);
    if (it == header.end()) throw DataError(path.string() + ": header lacks column '" + kColumns[k] + "'");
    column[k] = static_cast<std::size_t>(it - header.begin());
  }

  std::unordered_map<std::string, std::size_t> turbine_index;
  for (std::size_t i = 0; i < layout.size(); ++i) turbine_index[layout.turbines[i].id] = i;

  std::map<std::int64_t, std::vector<std::optional<RawRecord>>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    auto fail = [&](const std::string& why) -> DataError {
      return DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != header.size())
      throw fail("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    std::int64_t ts;
    try {
      ts = parse_timestamp(fields[column[0]]);
    } catch (const DataError& e) {
      throw fail(e.what());
    }
    const auto& id = fields[column[1]];
    const auto found = turbine_index.find(id);
    if (found == turbine_index.end()) throw fail("unknown turbine id '" + id + "'");
    const std::size_t turbine = found->second;
    std::array<double, 5> v{};
    for (std::size_t k = 0; k < 5; ++k) {
      const auto& f = fields[column[k + 2]];
      if (f.empty()) {
        v[k] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), v[k]);
      if (ec != std::errc() || end != f.data() + f.size())
        throw fail("column '" + std::string(kColumns[k + 2]) + "' holds non-numeric value '" + f + "'");
    }
    auto& slots = rows[ts];
    if (slots.empty()) slots.resize(layout.size());
    if (slots[turbine]) throw fail("duplicate record for turbine '" + id + "' at " + fields[column[0]]);
    slots[turbine] = RawRecord{v[0], v[1], v[2], v[3], v[4]};
  }
  if (rows.empty()) throw DataError(path.string() + ": no data rows");

  SceneSeries series;
  std::int64_t prev = 0;
  bool first = true;
  for (const auto& [ts, slots] : rows) {
    std::vector<TurbineRecord> records;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (!slots[i])
        throw DataError(path.string() + ": no record for turbine '" + layout.turbines[i].id + "' at " +
                        format_timestamp(ts));
      const auto enc = encode_record(*slots[i]);
      records.push_back({layout.turbines[i].id, std::vector<double>(enc.begin(), enc.end())});
    }
    EmbedReport report;
    series.scenes.push_back(std::make_shared<Scene>(embed_to_grid(records, layout, ts, &report)));
    series.rejected_records += report.rejected;
    if (!first) series.step_minutes = std::gcd(series.step_minutes, ts - prev);
    prev = ts;
    first = false;
  }
  return series;
}

SequenceSet load_csv_dataset(const std::filesystem::path& path, const TurbineLayout& layout,
                             std::int64_t horizon_minutes, std::size_t history) {
  return build_sequences(load_csv_series(path, layout), layout, history, horizon_minutes);
}

void write_csv_series(const std::filesystem::path& path, const SceneSeries& series,
                      const TurbineLayout& layout) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write data file '" + path.string() + "'");
  out << "timestamp,turbine_id,wind_speed,wind_direction_deg,pressure,temperature,air_density\n";
  for (const auto& scene : series.scenes) {
    const std::string ts = format_timestamp(scene->timestamp);
    for (const auto& t : layout.turbines) {
      out << ts << ',' << t.id;
      if (!scene->valid_mask[t.row * scene->width + t.col]) {
        out << ",,,,,\n";
        continue;
      }
      const RawRecord r = decode_cell(*scene, t.row, t.col);
      for (double v : {r.wind_speed, r.wind_direction_deg, r.pressure, r.temperature, r.air_density})
        out << ',' << format_double(v);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization.
// ---------------------------------------------------------------------------

Scene FeatureStats::apply(const Scene& scene) const {
  Scene out = scene;
  const std::size_t plane = scene.height * scene.width;
  for (std::size_t c = 0; c < scene.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (scene.valid_mask[p]) out.features[c * plane + p] = normalize(c, scene.features[c * plane + p]);
  return out;
}

Scene FeatureStats::invert(const Scene& scene) const {
  Scene out = scene;
  const std::size_t plane = scene.height * scene.width;
  for (std::size_t c = 0; c < scene.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (scene.valid_mask[p]) out.features[c * plane + p] = denormalize(c, scene.features[c * plane + p]);
  return out;
}

nlohmann::json FeatureStats::to_json() const { return {{"mean", mean}, {"std", std}}; }

FeatureStats FeatureStats::from_json(const nlohmann::json& j) {
  FeatureStats s;
  s.mean = j.at("mean").get<std::array<double, kFeatureCount>>();
  s.std = j.at("std").get<std::array<double, kFeatureCount>>();
  return s;
}

FeatureStats fit_normalizer(const std::vector<SceneSequence>& train) {
  if (train.empty()) throw DataError("cannot fit normalization on an empty training split");
  std::map<std::int64_t, const Scene*> unique;
  for (const auto& seq : train)
    for (const auto& s : seq.scenes) unique.emplace(s->timestamp, s.get());

  FeatureStats stats;
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& [ts, scene] : unique) {
      const std::size_t plane = scene->height * scene->width;
      for (std::size_t p = 0; p < plane; ++p)
        if (scene->valid_mask[p]) {
          sum += scene->features[c * plane + p];
          ++n;
        }
    }
    if (n == 0) throw DataError("training split has no valid cells");
    const double mean = sum / static_cast<double>(n);
    double sq = 0;
    for (const auto& [ts, scene] : unique) {
      const std::size_t plane = scene->height * scene->width;
      for (std::size_t p = 0; p < plane; ++p)
        if (scene->valid_mask[p]) {
          const double d = scene->features[c * plane + p] - mean;
          sq += d * d;
        }
    }
    const double sd = std::sqrt(sq / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
      throw DataError(std::string("feature '") + kChannelNames[c] + "' has zero variance on the training split");
    stats.mean[c] = mean;
    stats.std[c] = sd;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Splits and batches.
// ---------------------------------------------------------------------------

DatasetSplit split_chronological(const std::vector<SceneSequence>& sequences, double train_fraction,
                                 double val_fraction) {
  if (sequences.empty()) throw DataError("cannot split an empty dataset");
  if (train_fraction <= 0 || val_fraction < 0 || train_fraction + val_fraction > 1)
    throw DataError("split fractions must be positive and sum to at most 1");
  std::vector<SceneSequence> sorted = sequences;
  std::stable_sort(sorted.begin(), sorted.end(), [](const SceneSequence& a, const SceneSequence& b) {
    return a.target_timestamp() < b.target_timestamp();
  });
  const std::size_t n = sorted.size();
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  if (n_train == 0) throw DataError("training split would be empty");

  DatasetSplit split;
  split.train.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n_train));
  // Each later split starts only once its inputs are past the previous split's targets.
  std::int64_t boundary = split.train.back().target_timestamp();
  std::size_t i = n_train;
  for (; i < n_train + n_val; ++i)
    if (sorted[i].scenes.front()->timestamp > boundary) split.val.push_back(sorted[i]);
  if (!split.val.empty()) boundary = split.val.back().target_timestamp();
  for (; i < n; ++i)
    if (sorted[i].scenes.front()->timestamp > boundary) split.test.push_back(sorted[i]);
  return split;
}

template <typename T>
Batch<T> make_batch(const std::vector<SceneSequence>& sequences, const std::vector<std::size_t>& indices,
                    const FeatureStats& stats, const TurbineLayout& layout) {
  if (indices.empty()) throw DataError("empty batch");
  const auto& first = sequences.at(indices.front());
  const std::size_t steps = first.scenes.size();
  const std::size_t h = layout.grid_height, w = layout.grid_width, plane = h * w;
  const std::size_t channels = first.scenes.front()->channels;
  const std::size_t L = layout.size(), B = indices.size();

  std::vector<T> inputs(B * steps * channels * plane, T(0));
  std::vector<T> targets(B * L, T(0)), mask(B * L, T(0));
  Batch<T> batch;
  batch.targets_raw.assign(B * L, 0.0);
  batch.last_speed.assign(B * L, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& seq = sequences.at(indices[b]);
    if (seq.scenes.size() != steps) throw DataError("batch mixes sequences of different lengths");
    for (std::size_t t = 0; t < steps; ++t) {
      const Scene& s = *seq.scenes[t];
      if (s.height != h || s.width != w || s.channels != channels)
        throw DataError("scene dimensions do not match the layout");
      T* dst = inputs.data() + (b * steps + t) * channels * plane;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < plane; ++p)
          if (s.valid_mask[p]) dst[c * plane + p] = static_cast<T>(stats.normalize(c, s.features[c * plane + p]));
    }
    const Scene& last = *seq.scenes.back();
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t cell = layout.cell_of(i);
      batch.last_speed[b * L + i] = last.valid_mask[cell] ? last.features[kWindSpeed * plane + cell]
                                                          : stats.mean[kWindSpeed];
      if (!seq.target_mask[i]) continue;
      batch.targets_raw[b * L + i] = seq.target[i];
      targets[b * L + i] = static_cast<T>(stats.normalize_target(seq.target[i]));
      mask[b * L + i] = T(1);
    }
  }
  batch.inputs = Tensor<T>::from_vector({B, steps, channels, h, w}, std::move(inputs));
  batch.targets = Tensor<T>::from_vector({B, L}, std::move(targets));
  batch.mask = Tensor<T>::from_vector({B, L}, std::move(mask));
  return batch;
}

template Batch<float> make_batch(const std::vector<SceneSequence>&, const std::vector<std::size_t>&,
                                 const FeatureStats&, const TurbineLayout&);
template Batch<double> make_batch(const std::vector<SceneSequence>&, const std::vector<std::size_t>&,
                                  const FeatureStats&, const TurbineLayout&);

// ---------------------------------------------------------------------------
// Synthetic data.
// ---------------------------------------------------------------------------

nlohmann::json SynthesisConfig::to_json() const {
  return {{"steps", steps},
          {"seed", seed},
          {"wake_speed_cells_per_step", wake_speed_cells_per_step},
          {"noise_std", noise_std},
          {"step_minutes", step_minutes},
          {"start_minutes", start_minutes},
          {"mean_speed", mean_speed},
          {"ar_coefficient", ar_coefficient},
          {"ar_innovation", ar_innovation}};
}

SynthesisConfig SynthesisConfig::from_json(const nlohmann::json& j) {
  SynthesisConfig c;
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.wake_speed_cells_per_step = j.value("wake_speed_cells_per_step", c.wake_speed_cells_per_step);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.step_minutes = j.value("step_minutes", c.step_minutes);
  c.start_minutes = j.value("start_minutes", c.start_minutes);
  c.mean_speed = j.value("mean_speed", c.mean_speed);
  c.ar_coefficient = j.value("ar_coefficient", c.ar_coefficient);
  c.ar_innovation = j.value("ar_innovation", c.ar_innovation);
  return c;
}

namespace {

// x_t = phi x_{t-1} + sigma e_t, started from its stationary distribution.
std::vector<double> ar1(std::size_t n, double phi, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n);
  double v = normal(rng) * sigma / std::sqrt(std::max(1e-12, 1.0 - phi * phi));
  for (std::size_t t = 0; t < n; ++t) {
    v = phi * v + sigma * normal(rng);
    x[t] = v;
  }
  return x;
}

}  // namespace

SceneSeries synthesize_wake_series(const TurbineLayout& layout, const SynthesisConfig& cfg) {
  layout.validate();
  if (cfg.steps == 0) throw DataError("synthesis needs at least one step");
  if (!(cfg.wake_speed_cells_per_step > 0)) throw DataError("wake speed must be positive");
  if (cfg.noise_std < 0) throw DataError("noise_std must be non-negative");
  if (cfg.step_minutes <= 0) throw DataError("step_minutes must be positive");

  const std::size_t H = layout.grid_height, W = layout.grid_width, plane = H * W;
  const double v = cfg.wake_speed_cells_per_step;
  const double max_lag = static_cast<double>(W - 1) / v;
  const auto burn = static_cast<std::size_t>(std::ceil(max_lag)) + 2;
  const std::size_t total = cfg.steps + burn;

  // Independent streams so that, e.g., changing the noise level leaves the
  // underlying wind field untouched.
  std::mt19937_64 inflow_rng(stable_hash("inflow", cfg.seed));
  std::mt19937_64 noise_rng(stable_hash("noise", cfg.seed));
  std::mt19937_64 weather_rng(stable_hash("weather", cfg.seed));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> raw_rows;
  for (std::size_t r = 0; r < H; ++r)
    raw_rows.push_back(ar1(total, cfg.ar_coefficient, cfg.ar_innovation, inflow_rng));
  const auto shared = ar1(total, cfg.ar_coefficient, cfg.ar_innovation, inflow_rng);
  // Rows share a common component and are smoothed with their neighbours.
  std::vector<std::vector<double>> inflow(H, std::vector<double>(total));
  for (std::size_t r = 0; r < H; ++r) {
    const auto& up = raw_rows[r == 0 ? 0 : r - 1];
    const auto& down = raw_rows[r + 1 == H ? r : r + 1];
    for (std::size_t t = 0; t < total; ++t) {
      const double local = 0.25 * up[t] + 0.5 * raw_rows[r][t] + 0.25 * down[t];
      inflow[r][t] = std::max(0.5, cfg.mean_speed + 0.6 * shared[t] + local);
    }
  }

  const auto direction = ar1(total, 0.95, 1.0, weather_rng);
  const auto pressure = ar1(total, 0.99, 0.05, weather_rng);
  const auto temperature = ar1(total, 0.98, 0.1, weather_rng);

  SceneSeries series;
  series.step_minutes = cfg.step_minutes;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::size_t t = step + burn;
    const std::int64_t ts = cfg.start_minutes + static_cast<std::int64_t>(step) * cfg.step_minutes;
    const double day_phase = 2.0 * std::numbers::pi * static_cast<double>(ts % 1440) / 1440.0;
    auto scene = std::make_shared<Scene>();
    scene->height = H;
    scene->width = W;
    scene->timestamp = ts;
    scene->features.assign(kFeatureCount * plane, 0.0);
    scene->valid_mask.assign(plane, 0);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& tb = layout.turbines[i];
      const double pos = static_cast<double>(t) - static_cast<double>(tb.col) / v;
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const double frac = pos - static_cast<double>(lo);
      double speed = frac == 0.0 ? inflow[tb.row][lo]
                                 : (1.0 - frac) * inflow[tb.row][lo] + frac * inflow[tb.row][lo + 1];
      speed = std::max(0.0, speed + cfg.noise_std * normal(noise_rng));

      RawRecord rec;
      rec.wind_speed = speed;
      rec.wind_direction_deg = std::fmod(270.0 + direction[t] + 0.5 * normal(weather_rng) + 360.0, 360.0);
      rec.pressure = 1013.0 + pressure[t] - 0.01 * static_cast<double>(tb.row);
      rec.temperature = 15.0 + 4.0 * std::sin(day_phase) + temperature[t] + 0.05 * normal(weather_rng);
      rec.air_density = rec.pressure * 100.0 / (287.05 * (rec.temperature + 273.15));

      const auto enc = encode_record(rec);
      const std::size_t cell = layout.cell_of(i);
      for (std::size_t c = 0; c < kFeatureCount; ++c) scene->features[c * plane + cell] = enc[c];
      scene->valid_mask[cell] = 1;
    }
    series.scenes.push_back(std::move(scene));
  }
  return series;
}

SequenceSet synthesize_wake_dataset(const TurbineLayout& layout, const SynthesisConfig& config,
                                    std::size_t history, std::int64_t horizon_minutes) {
  if (horizon_minutes <= 0 || horizon_minutes % config.step_minutes != 0)
    throw DataError("horizon must be a positive multiple of the synthesis step");
  const auto horizon_steps = static_cast<std::size_t>(horizon_minutes / config.step_minutes);
  if (config.steps < history + horizon_steps)
    throw DataError("synthesis of " + std::to_string(config.steps) + " steps cannot fill one window of " +
                    std::to_string(history) + " scenes plus a " + std::to_string(horizon_steps) +
                    "-step horizon");
  return build_sequences(synthesize_wake_series(layout, config), layout, history, horizon_minutes);
}

}  // namespace windformer
