#include "boat/shadow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>

#include <json.hpp>

#include "boat/csv.hpp"
#include "boat/types.hpp"

namespace boat {

Compensated compensate(const SensorFrame& f) {
  Compensated c;
  const std::array<double, 2> active{f.v1_active_mv, f.v2_active_mv};
  const std::array<double, 2> ambient{f.v1_ambient_mv, f.v2_ambient_mv};
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = active[i] - ambient[i];
    c.clamped[i] = v < 0.0;
    c.v[i] = c.clamped[i] ? 0.0 : v;
  }
  return c;
}

// ---------------------------------------------------------------------------

NominalModel::NominalModel(std::vector<std::pair<double, double>> table) {
  std::sort(table.begin(), table.end());
  for (std::size_t i = 1; i < table.size(); ++i)
    if (table[i].first == table[i - 1].first) throw ValidationError("nominal table has duplicate pressures");
  for (const auto& [p, d] : table)
    if (!std::isfinite(p) || !std::isfinite(d)) throw ValidationError("nominal table must be finite");

  // Pool adjacent violators so displacement never decreases with pressure.
  struct Block {
    double sum;
    std::size_t n;
  };
  std::vector<Block> blocks;
  for (const auto& [p, d] : table) {
    blocks.push_back({d, 1});
    while (blocks.size() > 1) {
      const auto& b = blocks.back();
      const auto& a = blocks[blocks.size() - 2];
      if (a.sum / static_cast<double>(a.n) <= b.sum / static_cast<double>(b.n)) break;
      const Block merged{a.sum + b.sum, a.n + b.n};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::size_t k = 0;
  for (const auto& b : blocks)
    for (std::size_t j = 0; j < b.n; ++j, ++k) table[k].second = b.sum / static_cast<double>(b.n);
  table_ = std::move(table);
}

NominalModel NominalModel::fit(std::span<const CalibrationSample> samples) {
  std::map<std::int64_t, std::pair<double, std::size_t>> acc;
  for (const auto& s : samples) {
    auto& [sum, n] = acc[std::llround(s.pressure_kpa * 1e6)];
    sum += s.displacement_mm;
    ++n;
  }
  std::vector<std::pair<double, double>> table;
  for (const auto& [key, v] : acc) table.emplace_back(static_cast<double>(key) / 1e6, v.first / static_cast<double>(v.second));
  if (table.empty()) throw ValidationError("nominal model needs at least one sample");
  return NominalModel(std::move(table));
}

double NominalModel::displacement(double p) const {
  if (table_.empty()) throw ValidationError("nominal model is empty");
  if (p <= table_.front().first) return table_.front().second;
  if (p >= table_.back().first) return table_.back().second;
  const auto it = std::upper_bound(table_.begin(), table_.end(), p, [](double v, const auto& e) { return v < e.first; });
  const auto& [p1, d1] = *it;
  const auto& [p0, d0] = *(it - 1);
  return d0 + (d1 - d0) * (p - p0) / (p1 - p0);
}

void write_nominal_json(const NominalModel& model, std::ostream& out) {
  nlohmann::json j;
  j["pressure_kpa"] = nlohmann::json::array();
  j["displacement_mm"] = nlohmann::json::array();
  for (const auto& [p, d] : model.table()) {
    j["pressure_kpa"].push_back(p);
    j["displacement_mm"].push_back(d);
  }
  j["interpolation"] = "piecewise linear, clamped";
  out << j.dump(2) << '\n';
}

NominalModel load_nominal_json(std::istream& in) {
  try {
    const auto j = nlohmann::json::parse(in);
    const auto p = j.at("pressure_kpa").get<std::vector<double>>();
    const auto d = j.at("displacement_mm").get<std::vector<double>>();
    if (p.size() != d.size() || p.empty()) throw ValidationError("nominal table columns differ in length");
    std::vector<std::pair<double, double>> table;
    for (std::size_t i = 0; i < p.size(); ++i) table.emplace_back(p[i], d[i]);
    return NominalModel(std::move(table));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed nominal file: ") + e.what());
  }
}

NominalModel load_nominal_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open nominal file '" + path + "'");
  return load_nominal_json(in);
}

std::string to_string(Alarm a) {
  switch (a) {
    case Alarm::none: return "none";
    case Alarm::drift: return "drift";
    case Alarm::leak: return "leak";
    case Alarm::saturated: return "saturated";
  }
  return "none";
}

void ShadowConfig::validate() const {
  if (!(ewma_alpha > 0.0 && ewma_alpha <= 1.0)) throw ValidationError("ewma_alpha must lie in (0, 1]");
  if (!(drift_threshold_mm > 0.0) || drift_hold_s < 0.0) throw ValidationError("invalid drift thresholds");
  if (leak_band_kpa < 0.0 || leak_hold_s < 0.0 || !(leak_drop_mm > 0.0)) throw ValidationError("invalid leak thresholds");
}

// ---------------------------------------------------------------------------

ShadowEngine::ShadowEngine(std::array<CalibrationModel, 2> models, NominalModel nominal, StateLibrary library,
                           ShadowConfig config)
    : models_(std::move(models)), nominal_(std::move(nominal)), library_(std::move(library)), config_(config) {
  config_.validate();
  library_.validate();
  for (const auto& m : models_)
    if (!m.monotone) throw ValidationError("sensor " + std::to_string(m.sensor) + " model is not invertible");
  std::size_t count = 0;
  for (const auto& s : library_.states)
    for (const auto& w : s.waveguides) count = std::max(count, w.size());
  for (const auto& s : library_.states) {
    std::array<Polyline, 2> shape;
    for (std::size_t w = 0; w < 2; ++w)
      shape[w] = s.waveguides[w].size() == count ? s.waveguides[w] : resample_count(s.waveguides[w], count);
    dense_.push_back(std::move(shape));
  }
}

std::tuple<std::size_t, std::size_t, double> ShadowEngine::bracket(double d) const {
  const auto& st = library_.states;
  for (std::size_t k = 0; k < st.size(); ++k)
    if (std::abs(d - st[k].tip_displacement_mm) <= config_.knot_snap_mm) return {k, k, 0.0};
  if (d <= st.front().tip_displacement_mm) return {0, 0, 0.0};
  if (d >= st.back().tip_displacement_mm) return {st.size() - 1, st.size() - 1, 0.0};
  std::size_t hi = 1;
  while (st[hi].tip_displacement_mm < d) ++hi;
  const double d0 = st[hi - 1].tip_displacement_mm, d1 = st[hi].tip_displacement_mm;
  return {hi - 1, hi, (d - d0) / (d1 - d0)};
}

std::array<Polyline, 2> ShadowEngine::shape_at(std::size_t lower, std::size_t upper, double weight) const {
  if (lower == upper || weight == 0.0) return library_.states[lower].waveguides;
  if (weight == 1.0) return library_.states[upper].waveguides;
  std::array<Polyline, 2> out;
  for (std::size_t w = 0; w < 2; ++w) {
    const auto& a = dense_[lower][w];
    const auto& b = dense_[upper][w];
    out[w].reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[w].push_back(a[i] * (1.0 - weight) + b[i] * weight);
  }
  return out;
}

ShadowState ShadowEngine::initial() const {
  ShadowState s;
  const auto [lo, hi, w] = bracket(0.0);
  s.lower_state = lo;
  s.upper_state = hi;
  s.weight = w;
  s.shape = shape_at(lo, hi, w);
  return s;
}

ShadowState ShadowEngine::step(const ShadowState& prev, const SensorFrame& frame) const {
  ShadowState s = prev;
  s.t_s = frame.t_s;
  s.nominal.reset();
  s.deviation.reset();

  const Compensated c = compensate(frame);
  int usable = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const Inversion inv = invert(models_[i], c.v[i]);
    s.displacement[i] = inv.displacement_mm;
    s.saturated[i] = inv.saturated || c.clamped[i];
    if (!s.saturated[i]) {
      sum += inv.displacement_mm;
      ++usable;
    }
  }

  auto& tr = s.tracker;
  if (usable == 0) {
    // Hold the last shape and estimate; alarm timers keep their state.
    s.alarm = Alarm::saturated;
    return s;
  }
  s.valid = true;
  s.fused = sum / usable;
  const auto [lo, hi, w] = bracket(s.fused);
  s.lower_state = lo;
  s.upper_state = hi;
  s.weight = w;
  s.shape = shape_at(lo, hi, w);

  if (frame.pressure_kpa && !nominal_.empty()) {
    const double p = *frame.pressure_kpa;
    s.nominal = nominal_.displacement(p);
    s.deviation = s.fused - *s.nominal;
    if (!tr.ewma_ready) {
      s.deviation_ewma = *s.deviation;
      tr.ewma_ready = true;
    } else {
      s.deviation_ewma = config_.ewma_alpha * *s.deviation + (1.0 - config_.ewma_alpha) * s.deviation_ewma;
    }
    if (!tr.hold_pressure || std::abs(p - *tr.hold_pressure) > config_.leak_band_kpa) {
      tr.hold_pressure = p;
      tr.hold_since = frame.t_s;
      tr.ewma_at_hold_start = s.deviation_ewma;
    }
  } else {
    tr.hold_pressure.reset();
  }

  if (tr.ewma_ready && std::abs(s.deviation_ewma) > config_.drift_threshold_mm) {
    if (!tr.drift_since) tr.drift_since = frame.t_s;
  } else {
    tr.drift_since.reset();
  }
  const bool drift = tr.drift_since && frame.t_s - *tr.drift_since >= config_.drift_hold_s;
  const bool leak = tr.hold_pressure && frame.t_s - tr.hold_since >= config_.leak_hold_s &&
                    s.deviation_ewma < tr.ewma_at_hold_start - config_.leak_drop_mm;
  if (s.saturated[0] && s.saturated[1])
    s.alarm = Alarm::saturated;
  else if (leak)
    s.alarm = Alarm::leak;
  else if (drift)
    s.alarm = Alarm::drift;
  else
    s.alarm = Alarm::none;
  return s;
}

// ---------------------------------------------------------------------------

StreamFormat stream_format_for(const std::string& path) {
  const auto ends_with = [&](const std::string& suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return (ends_with(".jsonl") || ends_with(".ndjson")) ? StreamFormat::jsonl : StreamFormat::csv;
}

FrameReader::FrameReader(std::istream& in, StreamFormat format) : in_(in), format_(format) {
  if (format_ == StreamFormat::csv) {
    std::string line;
    if (!std::getline(in_, line)) return;  // empty stream
    row_ = 1;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kStreamCsvHeader) throw ParseError("expected header '" + std::string(kStreamCsvHeader) + "'", 1);
  }
}

std::optional<SensorFrame> FrameReader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++row_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    SensorFrame f;
    if (format_ == StreamFormat::csv) {
      const auto fields = split(line);
      if (fields.size() != 6) throw ParseError("expected 6 columns, got " + std::to_string(fields.size()), row_);
      f.t_s = parse_double(fields[0], row_, "t_s");
      f.v1_active_mv = parse_double(fields[1], row_, "v1_active_mv");
      f.v1_ambient_mv = parse_double(fields[2], row_, "v1_ambient_mv");
      f.v2_active_mv = parse_double(fields[3], row_, "v2_active_mv");
      f.v2_ambient_mv = parse_double(fields[4], row_, "v2_ambient_mv");
      f.pressure_kpa = parse_optional_double(fields[5], row_, "pressure_kpa");
    } else {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        f.t_s = j.at("t_s").get<double>();
        f.v1_active_mv = j.at("v1_active_mv").get<double>();
        f.v1_ambient_mv = j.at("v1_ambient_mv").get<double>();
        f.v2_active_mv = j.at("v2_active_mv").get<double>();
        f.v2_ambient_mv = j.at("v2_ambient_mv").get<double>();
        if (j.contains("pressure_kpa") && !j["pressure_kpa"].is_null()) f.pressure_kpa = j["pressure_kpa"].get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid frame: ") + e.what(), row_);
      }
    }
    if (!std::isfinite(f.t_s)) throw ParseError("t_s must be finite", row_);
    return f;
  }
  return std::nullopt;
}

void write_stream_csv(std::span<const SensorFrame> frames, std::ostream& out) {
  out << kStreamCsvHeader << '\n';
  for (const auto& f : frames) {
    out << format_double(f.t_s) << ',' << format_double(f.v1_active_mv) << ',' << format_double(f.v1_ambient_mv)
        << ',' << format_double(f.v2_active_mv) << ',' << format_double(f.v2_ambient_mv) << ',';
    if (f.pressure_kpa) out << format_double(*f.pressure_kpa);
    out << '\n';
  }
}

void write_stream_jsonl(std::span<const SensorFrame> frames, std::ostream& out) {
  for (const auto& f : frames) {
    nlohmann::json j{{"t_s", f.t_s},
                     {"v1_active_mv", f.v1_active_mv},
                     {"v1_ambient_mv", f.v1_ambient_mv},
                     {"v2_active_mv", f.v2_active_mv},
                     {"v2_ambient_mv", f.v2_ambient_mv}};
    j["pressure_kpa"] = f.pressure_kpa ? nlohmann::json(*f.pressure_kpa) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------

ReplaySummary replay(const ShadowEngine& engine, FrameReader& reader, const ReplayOptions& options,
                     const std::function<void(const ShadowState&)>& sink) {
  if (options.decimate == 0) throw ValidationError("decimate must be >= 1");
  ReplaySummary summary;
  const auto start = std::chrono::steady_clock::now();
  ShadowState state = engine.initial();
  std::optional<double> first_t, last_t;
  Alarm previous_alarm = Alarm::none;
  while (auto frame = reader.next()) {
    if (last_t && !(frame->t_s > *last_t)) {
      ++summary.dropped_regressions;
      continue;
    }
    if (!first_t) first_t = frame->t_s;
    last_t = frame->t_s;
    state = engine.step(state, *frame);
    if (state.deviation) summary.max_abs_deviation = std::max(summary.max_abs_deviation, std::abs(*state.deviation));
    if (state.alarm != Alarm::none) {
      if (state.alarm == previous_alarm) {
        summary.episodes.back().t_end = state.t_s;
        ++summary.episodes.back().frames;
      } else {
        summary.episodes.push_back({state.alarm, state.t_s, state.t_s, 1});
      }
    }
    previous_alarm = state.alarm;
    summary.stream_duration_s = state.t_s - *first_t;
    if (summary.frames % options.decimate == 0) {
      if (sink) sink(state);
      ++summary.emitted;
    }
    ++summary.frames;
  }
  summary.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (summary.wall_s > 0.0) {
    summary.frames_per_s = static_cast<double>(summary.frames) / summary.wall_s;
    summary.realtime_factor = summary.stream_duration_s / summary.wall_s;
  }
  return summary;
}

void write_state_json(const ShadowState& s, std::ostream& out) {
  using nlohmann::json;
  json j;
  j["t_s"] = s.t_s;
  j["displacement_mm"] = {s.displacement[0], s.displacement[1]};
  j["saturated"] = {s.saturated[0], s.saturated[1]};
  j["fused_mm"] = s.fused;
  j["nominal_mm"] = s.nominal ? json(*s.nominal) : json(nullptr);
  j["deviation_mm"] = s.deviation ? json(*s.deviation) : json(nullptr);
  j["deviation_ewma_mm"] = s.deviation_ewma;
  j["alarm"] = to_string(s.alarm);
  json shape = json::array();
  for (const auto& line : s.shape) {
    json pts = json::array();
    for (const auto& p : line) pts.push_back({p.x, p.z});
    shape.push_back(std::move(pts));
  }
  j["shape"] = {{"lower_state", s.lower_state}, {"upper_state", s.upper_state}, {"weight", s.weight},
                {"waveguides", std::move(shape)}};
  out << j.dump() << '\n';
}

void write_summary_json(const ReplaySummary& s, std::ostream& out) {
  using nlohmann::json;
  json eps = json::array();
  for (const auto& e : s.episodes)
    eps.push_back({{"alarm", to_string(e.alarm)}, {"t_start_s", e.t_start}, {"t_end_s", e.t_end}, {"frames", e.frames}});
  json j{{"frames", s.frames},
         {"emitted_states", s.emitted},
         {"dropped_timestamp_regressions", s.dropped_regressions},
         {"alarm_episodes", eps},
         {"max_abs_deviation_mm", s.max_abs_deviation},
         {"stream_duration_s", s.stream_duration_s},
         {"wall_s", s.wall_s},
         {"frames_per_s", s.frames_per_s},
         {"realtime_factor", s.realtime_factor}};
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

LiveShadow::LiveShadow(const ShadowEngine& engine, std::size_t capacity)
    : engine_(engine), capacity_(std::max<std::size_t>(capacity, 1)), latest_(engine.initial()) {
  worker_ = std::thread([this] { run(); });
}

LiveShadow::~LiveShadow() { close(); }

void LiveShadow::push(const SensorFrame& frame) {
  {
    std::lock_guard lock(mutex_);
    if (closing_) return;
    if (queue_.size() >= capacity_) {
      queue_.pop_front();
      ++dropped_;
    }
    queue_.push_back(frame);
  }
  ready_.notify_one();
}

void LiveShadow::close() {
  {
    std::lock_guard lock(mutex_);
    closing_ = true;
  }
  ready_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void LiveShadow::run() {
  ShadowState state = engine_.initial();
  std::optional<double> last_t;
  for (;;) {
    SensorFrame frame;
    {
      std::unique_lock lock(mutex_);
      ready_.wait(lock, [this] { return closing_ || !queue_.empty(); });
      if (queue_.empty()) return;
      frame = queue_.front();
      queue_.pop_front();
    }
    if (last_t && !(frame.t_s > *last_t)) continue;
    last_t = frame.t_s;
    state = engine_.step(state, frame);
    std::lock_guard lock(mutex_);
    latest_ = state;
    ++processed_;
  }
}

ShadowState LiveShadow::snapshot() const {
  std::lock_guard lock(mutex_);
  return latest_;
}

std::size_t LiveShadow::processed() const {
  std::lock_guard lock(mutex_);
  return processed_;
}

std::size_t LiveShadow::dropped() const {
  std::lock_guard lock(mutex_);
  return dropped_;
}

// ---------------------------------------------------------------------------

std::vector<SensorFrame> synthesize_stream(const StreamFixtureParams& p) {
  const auto& proto = p.protocol;
  if (p.cycles < 0 || p.hold_s < 0.0) throw ValidationError("stream fixture lengths must be non-negative");
  const auto down = fixture_setpoints(proto);
  const auto per_hold = static_cast<std::size_t>(std::llround(proto.hold_s * proto.rate_hz));
  std::mt19937_64 rng(proto.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<SensorFrame> out;
  std::size_t tick = 0;

  const auto emit = [&](double pressure, double x) {
    SensorFrame f;
    f.t_s = static_cast<double>(tick++) / proto.rate_hz;
    f.pressure_kpa = pressure;
    const double ramp = f.t_s >= p.ramp_start_s ? p.ramp_mv_per_s * (f.t_s - p.ramp_start_s) : 0.0;
    std::array<double, 2> v{};
    for (std::size_t q = 0; q < 2; ++q) {
      const auto& a = proto.coeffs[q];
      v[q] = a[0] + x * (a[1] + x * (a[2] + x * a[3])) + ramp;
      if (p.noise_mv > 0.0) v[q] += p.noise_mv * noise(rng);
    }
    f.v1_ambient_mv = p.ambient_mv;
    f.v2_ambient_mv = p.ambient_mv;
    f.v1_active_mv = v[0] + p.ambient_mv;
    f.v2_active_mv = v[1] + p.ambient_mv;
    out.push_back(f);
  };

  for (int c = 0; c < p.cycles; ++c) {
    for (int branch = 0; branch < 2; ++branch) {
      for (std::size_t k = 0; k < down.size(); ++k) {
        const double pressure = branch == 0 ? down[k] : down[down.size() - 1 - k];
        for (std::size_t h = 0; h < per_hold; ++h) emit(pressure, proto.mm_per_kpa * pressure);
      }
    }
  }
  const auto hold_frames = static_cast<std::size_t>(std::llround(p.hold_s * proto.rate_hz));
  const double x0 = proto.mm_per_kpa * p.hold_pressure_kpa;
  for (std::size_t h = 0; h < hold_frames; ++h) {
    const double t = static_cast<double>(h) / proto.rate_hz;
    emit(p.hold_pressure_kpa, x0 * std::pow(1.0 - p.hold_decay_per_s, t));
  }
  return out;
}

}  // namespace boat
