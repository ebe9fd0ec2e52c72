#include <doctest.h>

#include <cmath>
#include <sstream>
#include <thread>

#include "boat/shadow.hpp"
#include "oracles.hpp"

using namespace boat;

namespace {

constexpr double kSlope1 = 40.0;
constexpr double kSlope2 = 30.0;

std::array<CalibrationModel, 2> linear_models() {
  return {make_model(1, {1600.0, kSlope1, 0.0, 0.0}, -5.0, 5.0), make_model(2, {1500.0, kSlope2, 0.0, 0.0}, -5.0, 5.0)};
}

NominalModel linear_nominal() { return NominalModel({{-50.0, -5.0}, {50.0, 5.0}}); }

ShadowEngine linear_engine(ShadowConfig config = {}) {
  return ShadowEngine(linear_models(), linear_nominal(), synthesize_states({}), config);
}

SensorFrame frame_at(double t, double d, std::optional<double> pressure, double extra_mv = 0.0) {
  SensorFrame f;
  f.t_s = t;
  f.v1_active_mv = 1600.0 + kSlope1 * d + extra_mv + 10.0;
  f.v1_ambient_mv = 10.0;
  f.v2_active_mv = 1500.0 + kSlope2 * d + extra_mv;
  f.pressure_kpa = pressure;
  return f;
}

std::string stream_csv(const std::vector<SensorFrame>& frames) {
  std::ostringstream out;
  write_stream_csv(frames, out);
  return out.str();
}

}  // namespace

TEST_CASE("ambient compensation") {
  SensorFrame f;
  f.v1_active_mv = 1700.0;
  f.v1_ambient_mv = 48.0;
  f.v2_active_mv = 1650.0;
  Compensated c = compensate(f);
  CHECK(c.v[0] == 1652.0);
  CHECK(c.v[1] == 1650.0);
  CHECK_FALSE(c.clamped[0]);
  f.v2_ambient_mv = 1700.0;
  c = compensate(f);
  CHECK(c.v[1] == 0.0);
  CHECK(c.clamped[1]);
}

TEST_CASE("nominal model is monotone and clamped") {
  const NominalModel m({{10.0, 1.0}, {0.0, 0.0}, {20.0, 0.8}, {30.0, 3.0}});
  for (std::size_t i = 1; i < m.table().size(); ++i) CHECK(m.table()[i].second >= m.table()[i - 1].second);
  CHECK(m.displacement(-100.0) == 0.0);
  CHECK(m.displacement(100.0) == 3.0);
  CHECK(m.displacement(10.0) == doctest::Approx(0.9));
  CHECK_THROWS_AS(NominalModel({{1.0, 0.0}, {1.0, 1.0}}), ValidationError);

  std::ostringstream out;
  write_nominal_json(m, out);
  std::istringstream in(out.str());
  CHECK(load_nominal_json(in).table() == m.table());
}

TEST_CASE("library knots reproduce library shapes exactly") {
  const ShadowEngine engine = linear_engine();
  const StateLibrary& lib = engine.library();
  for (std::size_t k = 0; k < lib.size(); ++k) {
    const double d = lib.states[k].tip_displacement_mm;
    const ShadowState s = engine.step(engine.initial(), frame_at(0.0, d, std::nullopt));
    CHECK(s.lower_state == k);
    CHECK(s.shape[0] == lib.states[k].waveguides[0]);
    CHECK(s.shape[1] == lib.states[k].waveguides[1]);
  }
}

TEST_CASE("shape weights stay in [0, 1] and interpolate between neighbours") {
  const ShadowEngine engine = linear_engine();
  const StateLibrary& lib = engine.library();
  const double d0 = lib.states[3].tip_displacement_mm, d1 = lib.states[4].tip_displacement_mm;
  const ShadowState s = engine.step(engine.initial(), frame_at(0.0, 0.25 * d0 + 0.75 * d1, std::nullopt));
  CHECK(s.lower_state == 3);
  CHECK(s.upper_state == 4);
  CHECK(s.weight == doctest::Approx(0.75).epsilon(1e-9));
  const auto& a = lib.states[3].waveguides[0];
  const auto& b = lib.states[4].waveguides[0];
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(distance(s.shape[0][i], 0.25 * a[i] + 0.75 * b[i]) < 1e-9);

  const ShadowState far = engine.step(engine.initial(), frame_at(0.0, 4.5, std::nullopt));
  CHECK(far.lower_state == lib.size() - 1);
  CHECK(far.weight == 0.0);
}

TEST_CASE("estimate matching the nominal gives zero deviation") {
  const ShadowEngine engine = linear_engine();
  const ShadowState s = engine.step(engine.initial(), frame_at(0.0, 2.0, 20.0));
  CHECK(s.fused == doctest::Approx(2.0).epsilon(1e-12));
  REQUIRE(s.deviation);
  CHECK(std::abs(*s.deviation) < 1e-9);
  CHECK(s.alarm == Alarm::none);
}

TEST_CASE("saturation holds the last shape") {
  const ShadowEngine engine = linear_engine();
  const ShadowState a = engine.step(engine.initial(), frame_at(0.0, 0.5, 5.0));
  const ShadowState b = engine.step(a, frame_at(0.01, 9.0, 5.0));
  CHECK(b.saturated[0]);
  CHECK(b.saturated[1]);
  CHECK(b.alarm == Alarm::saturated);
  CHECK(b.shape == a.shape);
  CHECK(b.fused == a.fused);
  CHECK(b.displacement[0] == 5.0);

  // One saturated sensor leaves the other in charge.
  SensorFrame f = frame_at(0.02, 1.0, 10.0);
  f.v2_active_mv = 9000.0;
  const ShadowState c = engine.step(b, f);
  CHECK(c.saturated[1]);
  CHECK_FALSE(c.saturated[0]);
  CHECK(c.fused == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(c.alarm == Alarm::none);
}

TEST_CASE("voltage ramp raises drift at the EWMA crossing plus the hold") {
  const ShadowConfig cfg;
  const ShadowEngine engine = linear_engine(cfg);
  const double ramp = 0.5;  // mV/s on both sensors
  const double slope = 0.5 * ramp * (1.0 / kSlope1 + 1.0 / kSlope2);
  const auto expected = oracle::drift_alarm_frame(slope, 100.0, cfg.ewma_alpha, cfg.drift_threshold_mm, cfg.drift_hold_s);
  REQUIRE(expected);

  ShadowState s = engine.initial();
  std::optional<std::size_t> fired;
  for (std::size_t k = 0; k < 20000 && !fired; ++k) {
    const double t = static_cast<double>(k) / 100.0;
    s = engine.step(s, frame_at(t, 0.0, 0.0, ramp * t));
    if (s.alarm == Alarm::drift) fired = k;
  }
  REQUIRE(fired);
  CHECK(*fired == *expected);
}

TEST_CASE("decaying displacement under held pressure raises a leak") {
  const ShadowConfig cfg;
  const ShadowEngine engine = linear_engine(cfg);
  const double x0 = 1.0, decay = 0.01;
  const auto expected = oracle::leak_alarm_frame(x0, decay, 100.0, cfg.ewma_alpha, cfg.leak_drop_mm, cfg.leak_hold_s);
  REQUIRE(expected);
  CHECK(*expected > 1000);  // the drop, not the hold time, sets the alarm

  ShadowState s = engine.initial();
  std::optional<std::size_t> fired;
  for (std::size_t k = 0; k < 20000 && !fired; ++k) {
    const double t = static_cast<double>(k) / 100.0;
    s = engine.step(s, frame_at(t, x0 * std::pow(1.0 - decay, t), 10.0));
    if (s.alarm == Alarm::leak) fired = k;
  }
  REQUIRE(fired);
  CHECK(std::abs(static_cast<double>(*fired) - static_cast<double>(*expected)) <= 1.0);
}

TEST_CASE("EWMA stays within the range of its inputs") {
  const ShadowEngine engine = linear_engine();
  ShadowState s = engine.initial();
  double lo = 1e9, hi = -1e9;
  for (int k = 0; k < 500; ++k) {
    const double d = 0.3 * std::sin(0.05 * k) + 0.1 * ((k * 7919) % 13) / 13.0;
    s = engine.step(s, frame_at(k / 100.0, d, 0.0));
    lo = std::min(lo, *s.deviation);
    hi = std::max(hi, *s.deviation);
    CHECK(s.deviation_ewma >= lo - 1e-12);
    CHECK(s.deviation_ewma <= hi + 1e-12);
  }
}

TEST_CASE("replay is deterministic, drops regressions and summarizes") {
  const ShadowEngine engine = linear_engine();
  std::vector<SensorFrame> frames;
  for (int k = 0; k < 300; ++k) frames.push_back(frame_at(k / 100.0, 0.01 * k, 0.1 * k));
  frames.insert(frames.begin() + 100, frame_at(0.5, 0.0, 0.0));
  const std::string csv = stream_csv(frames);

  const auto run = [&](std::size_t decimate) {
    std::istringstream in(csv);
    FrameReader reader(in, StreamFormat::csv);
    std::ostringstream states;
    const auto summary = replay(engine, reader, {decimate}, [&](const ShadowState& s) { write_state_json(s, states); });
    return std::make_pair(summary, states.str());
  };
  const auto [a, out_a] = run(1);
  const auto [b, out_b] = run(1);
  CHECK(out_a == out_b);
  CHECK(a.frames == 300);
  CHECK(a.emitted == 300);
  CHECK(a.dropped_regressions == 1);
  CHECK(a.episodes.empty());
  CHECK(a.max_abs_deviation < 1e-9);
  CHECK(a.stream_duration_s == doctest::Approx(2.99));
  CHECK(run(50).first.emitted == 6);
}

TEST_CASE("empty streams produce an empty replay") {
  const ShadowEngine engine = linear_engine();
  for (const std::string text : {std::string(), std::string(kStreamCsvHeader) + "\n"}) {
    std::istringstream in(text);
    FrameReader reader(in, StreamFormat::csv);
    std::size_t emitted = 0;
    const auto summary = replay(engine, reader, {}, [&](const ShadowState&) { ++emitted; });
    CHECK(summary.frames == 0);
    CHECK(emitted == 0);
  }
}

TEST_CASE("json lines stream matches csv stream") {
  std::vector<SensorFrame> frames;
  for (int k = 0; k < 20; ++k) frames.push_back(frame_at(k / 100.0, 0.05 * k, k % 2 ? std::optional<double>(3.0) : std::nullopt));
  std::ostringstream jl;
  write_stream_jsonl(frames, jl);
  std::istringstream a(stream_csv(frames)), b(jl.str());
  FrameReader ra(a, StreamFormat::csv), rb(b, StreamFormat::jsonl);
  for (int k = 0; k < 20; ++k) {
    const auto fa = ra.next(), fb = rb.next();
    REQUIRE(fa);
    REQUIRE(fb);
    CHECK(fa->t_s == fb->t_s);
    CHECK(fa->v2_active_mv == fb->v2_active_mv);
    CHECK(fa->pressure_kpa == fb->pressure_kpa);
  }
  CHECK_FALSE(ra.next());
  CHECK_FALSE(rb.next());
}

TEST_CASE("schema errors carry the row number") {
  std::istringstream in(std::string(kStreamCsvHeader) + "\n0,1,0,1,0,\n0.01,1,0,1\n");
  FrameReader reader(in, StreamFormat::csv);
  CHECK(reader.next());
  try {
    reader.next();
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
  }
  std::istringstream bad_header("t,v\n");
  CHECK_THROWS_AS(FrameReader(bad_header, StreamFormat::csv), ParseError);
  std::istringstream bad_json("{\"t_s\": 0}\n");
  FrameReader rj(bad_json, StreamFormat::jsonl);
  CHECK_THROWS_AS(rj.next(), ParseError);
}

TEST_CASE("live shadow drops the oldest frames when full") {
  const ShadowEngine engine = linear_engine();
  LiveShadow live(engine, 4);
  for (int k = 0; k < 2000; ++k) live.push(frame_at(k / 100.0, 0.001 * k, 0.01 * k));
  live.close();
  CHECK(live.processed() + live.dropped() == 2000);
  const ShadowState last = live.snapshot();
  CHECK(last.t_s == doctest::Approx(19.99));
}

TEST_CASE("fixture stream replays cleanly through fitted models") {
  CalibrationFixtureParams proto;
  const auto samples = synthesize_calibration(proto);
  const std::array<CalibrationModel, 2> models{fit_calibration(samples, 1), fit_calibration(samples, 2)};
  const ShadowEngine engine(models, NominalModel::fit(samples), synthesize_states({}));
  StreamFixtureParams sp;
  sp.protocol = proto;
  sp.cycles = 3;
  std::istringstream in(stream_csv(synthesize_stream(sp)));
  FrameReader reader(in, StreamFormat::csv);
  const auto summary = replay(engine, reader, {}, nullptr);
  CHECK(summary.frames == 3 * 2 * 10 * 200);
  CHECK(summary.episodes.empty());
  CHECK(summary.max_abs_deviation < 1e-6);
}
