#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace boat {

enum class Branch { loading, unloading };

std::string to_string(Branch b);
Branch parse_branch(const std::string& text);

/// One row of a pressure-cycling log. Loading means pressure rising.
struct CalibrationSample {
  double t_s = 0.0;
  double pressure_kpa = 0.0;
  double displacement_mm = 0.0;
  double v1_mv = 0.0;
  double v2_mv = 0.0;
  int cycle = 1;
  Branch branch = Branch::loading;

  double voltage(int sensor) const { return sensor == 1 ? v1_mv : v2_mv; }
};

inline constexpr const char* kCalibrationCsvHeader = "t_s,pressure_kpa,displacement_mm,v1_mv,v2_mv,cycle,branch";

std::vector<CalibrationSample> load_calibration(std::istream& in);
std::vector<CalibrationSample> load_calibration_file(const std::string& path);
void write_calibration(std::span<const CalibrationSample> samples, std::ostream& out);

/// Cubic voltage-vs-displacement model of one sensor (mV over mm, ascending degree).
struct CalibrationModel {
  int sensor = 1;
  std::array<double, 4> coeffs{};
  double r_squared = 0.0;
  bool r_squared_defined = true;  // false for constant voltage
  bool below_r_squared_floor = false;
  double x_min = 0.0;
  double x_max = 0.0;
  bool monotone = false;
  double rmse = 0.0;
  std::size_t n_samples = 0;

  double evaluate(double x) const;
  double derivative(double x) const;
  bool in_range(double x) const { return x >= x_min && x <= x_max; }
};

/// Sign of p' is constant and nonzero over [lo, hi], checked on a 1e-3 mm grid and at the roots of p'.
bool is_monotone(const std::array<double, 4>& coeffs, double lo, double hi);

CalibrationModel fit_calibration(std::span<const CalibrationSample> samples, int sensor, double r_squared_floor = 0.99);

/// Model built directly from known coefficients.
CalibrationModel make_model(int sensor, const std::array<double, 4>& coeffs, double x_min, double x_max);

struct Inversion {
  double displacement_mm = 0.0;
  bool saturated = false;  // v left the output range by more than 3 rmse and was clamped
};

/// Unique x in the valid range with evaluate(x) = v. Throws ValidationError if the model is not monotone.
Inversion invert(const CalibrationModel& model, double v_mv);

struct MetricsOptions {
  double grid_mm = 0.1;
  double settle_fraction = 0.1;  // leading share of each hold ignored for noise
};

struct SensorMetrics {
  double sensitivity_mv_per_mm = 0.0;
  double hysteresis_pct = 0.0;
  bool hysteresis_defined = false;
  double snr_db = 0.0;  // +inf when the setpoint noise is zero
  double noise_std_mv = 0.0;
  double span_mv = 0.0;
};

SensorMetrics compute_metrics(std::span<const CalibrationSample> samples, const CalibrationModel& model,
                              const MetricsOptions& options = {});

double system_sensitivity(const SensorMetrics& s1, const SensorMetrics& s2);

struct CalibrationReport {
  std::array<CalibrationModel, 2> models;
  std::array<SensorMetrics, 2> metrics;
  std::string source_hash;
};

void write_models_json(const CalibrationReport& report, std::ostream& out);
std::array<CalibrationModel, 2> load_models_json(std::istream& in);
std::array<CalibrationModel, 2> load_models_file(const std::string& path);

/// Cubic coefficients of the two prototype sensors.
inline constexpr std::array<double, 4> kSensor1Coeffs{1651.9842, 46.4413, -2.6934, -0.36251};
inline constexpr std::array<double, 4> kSensor2Coeffs{1624.5567, 33.37911, -2.3102, -0.14139};

/// Stepped pressure-cycling log. Each cycle holds every setpoint from p_max
/// down to p_min (unloading) and back up (loading); displacement is linear in pressure.
struct CalibrationFixtureParams {
  std::array<std::array<double, 4>, 2> coeffs{kSensor1Coeffs, kSensor2Coeffs};
  double mm_per_kpa = 0.08;
  double p_max_kpa = 50.0;
  double p_min_kpa = -40.0;
  double p_step_kpa = 10.0;
  int cycles = 5;
  double rate_hz = 100.0;
  double hold_s = 2.0;
  double noise_mv = 0.0;
  double hysteresis_fraction = 0.0;  // loading-branch voltage offset as a share of each sensor's span
  std::uint64_t seed = 1;
};

std::vector<double> fixture_setpoints(const CalibrationFixtureParams& params);
std::vector<CalibrationSample> synthesize_calibration(const CalibrationFixtureParams& params);

}  // namespace boat
