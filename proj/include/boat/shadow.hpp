#pragma once

#include <array>
#include <condition_variable>
#include <deque>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "boat/calibration.hpp"
#include "boat/deformation.hpp"

namespace boat {

struct SensorFrame {
  double t_s = 0.0;
  double v1_active_mv = 0.0;
  double v1_ambient_mv = 0.0;
  double v2_active_mv = 0.0;
  double v2_ambient_mv = 0.0;
  std::optional<double> pressure_kpa;
};

inline constexpr const char* kStreamCsvHeader = "t_s,v1_active_mv,v1_ambient_mv,v2_active_mv,v2_ambient_mv,pressure_kpa";

struct Compensated {
  std::array<double, 2> v{};
  std::array<bool, 2> clamped{};  // ambient exceeded active
};

Compensated compensate(const SensorFrame& frame);

/// Monotone piecewise-linear pressure -> displacement map, clamped at the ends.
class NominalModel {
 public:
  NominalModel() = default;
  /// Pairs of (pressure kPa, displacement mm); pressures must be distinct.
  /// Displacements are made non-decreasing by pooling adjacent violators.
  explicit NominalModel(std::vector<std::pair<double, double>> table);

  /// Mean displacement per pressure setpoint of a calibration log.
  static NominalModel fit(std::span<const CalibrationSample> samples);

  double displacement(double pressure_kpa) const;
  const std::vector<std::pair<double, double>>& table() const { return table_; }
  bool empty() const { return table_.empty(); }

 private:
  std::vector<std::pair<double, double>> table_;
};

void write_nominal_json(const NominalModel& model, std::ostream& out);
NominalModel load_nominal_json(std::istream& in);
NominalModel load_nominal_file(const std::string& path);

enum class Alarm { none, drift, leak, saturated };
std::string to_string(Alarm a);

struct ShadowConfig {
  double ewma_alpha = 0.01;
  double drift_threshold_mm = 0.5;
  double drift_hold_s = 5.0;
  double leak_band_kpa = 1.0;
  double leak_hold_s = 10.0;
  double leak_drop_mm = 0.1;
  double knot_snap_mm = 1e-9;

  void validate() const;
};

/// Bookkeeping carried between frames so that step() stays a pure function.
struct AlarmTracker {
  bool ewma_ready = false;
  std::optional<double> drift_since;
  std::optional<double> hold_pressure;
  double hold_since = 0.0;
  double ewma_at_hold_start = 0.0;
};

struct ShadowState {
  double t_s = 0.0;
  std::array<double, 2> displacement{};
  std::array<bool, 2> saturated{};
  double fused = 0.0;
  std::array<Polyline, 2> shape;
  std::size_t lower_state = 0;
  std::size_t upper_state = 0;
  double weight = 0.0;  // share of the upper state in the shape
  std::optional<double> nominal;
  std::optional<double> deviation;
  double deviation_ewma = 0.0;
  Alarm alarm = Alarm::none;
  AlarmTracker tracker;
  bool valid = false;  // false until the first frame with a usable sensor
};

class ShadowEngine {
 public:
  ShadowEngine(std::array<CalibrationModel, 2> models, NominalModel nominal, StateLibrary library,
               ShadowConfig config = {});

  ShadowState initial() const;
  ShadowState step(const ShadowState& previous, const SensorFrame& frame) const;

  /// Library shape at a tip displacement; returns (lower, upper, weight).
  std::tuple<std::size_t, std::size_t, double> bracket(double displacement) const;
  std::array<Polyline, 2> shape_at(std::size_t lower, std::size_t upper, double weight) const;

  const ShadowConfig& config() const { return config_; }
  const StateLibrary& library() const { return library_; }

 private:
  std::array<CalibrationModel, 2> models_;
  NominalModel nominal_;
  StateLibrary library_;
  ShadowConfig config_;
  std::vector<std::array<Polyline, 2>> dense_;  // library shapes on a shared point count
};

enum class StreamFormat { csv, jsonl };
StreamFormat stream_format_for(const std::string& path);

/// Pulls frames from a CSV or line-delimited JSON stream. Schema errors throw ParseError with the row.
class FrameReader {
 public:
  FrameReader(std::istream& in, StreamFormat format);
  std::optional<SensorFrame> next();
  std::size_t row() const { return row_; }

 private:
  std::istream& in_;
  StreamFormat format_;
  std::size_t row_ = 0;
};

void write_stream_csv(std::span<const SensorFrame> frames, std::ostream& out);
void write_stream_jsonl(std::span<const SensorFrame> frames, std::ostream& out);

struct AlarmEpisode {
  Alarm alarm = Alarm::none;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t frames = 0;
};

struct ReplaySummary {
  std::size_t frames = 0;        // accepted frames
  std::size_t emitted = 0;       // states passed to the sink
  std::size_t dropped_regressions = 0;
  std::vector<AlarmEpisode> episodes;
  double max_abs_deviation = 0.0;
  double stream_duration_s = 0.0;
  double wall_s = 0.0;
  double frames_per_s = 0.0;
  double realtime_factor = 0.0;  // stream duration / wall time
};

struct ReplayOptions {
  std::size_t decimate = 1;
};

ReplaySummary replay(const ShadowEngine& engine, FrameReader& reader, const ReplayOptions& options,
                     const std::function<void(const ShadowState&)>& sink);

void write_state_json(const ShadowState& state, std::ostream& out);
void write_summary_json(const ReplaySummary& summary, std::ostream& out);

/// Single writer thread advancing the engine from a bounded drop-oldest queue;
/// any thread may snapshot the latest state.
class LiveShadow {
 public:
  LiveShadow(const ShadowEngine& engine, std::size_t capacity);
  ~LiveShadow();
  LiveShadow(const LiveShadow&) = delete;
  LiveShadow& operator=(const LiveShadow&) = delete;

  void push(const SensorFrame& frame);
  /// Drains the queue and stops the worker.
  void close();

  ShadowState snapshot() const;
  std::size_t processed() const;
  std::size_t dropped() const;

 private:
  void run();

  const ShadowEngine& engine_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<SensorFrame> queue_;
  ShadowState latest_;
  std::size_t processed_ = 0;
  std::size_t dropped_ = 0;
  bool closing_ = false;
  std::thread worker_;
};

/// Synthetic 100 Hz stream driven by the calibration protocol, with optional
/// voltage ramp and a trailing pressure hold whose displacement decays.
struct StreamFixtureParams {
  CalibrationFixtureParams protocol;
  int cycles = 100;
  double ambient_mv = 48.0;
  double noise_mv = 0.0;  // independent of the calibration log noise
  double ramp_mv_per_s = 0.0;  // added to both active channels from ramp_start_s on
  double ramp_start_s = 0.0;
  double hold_s = 0.0;         // trailing constant-pressure segment
  double hold_pressure_kpa = 50.0;
  double hold_decay_per_s = 0.0;  // displacement multiplied by (1 - decay)^t during the hold
};

std::vector<SensorFrame> synthesize_stream(const StreamFixtureParams& params);

}  // namespace boat
