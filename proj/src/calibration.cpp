#include "boat/calibration.hpp"

#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <tuple>

#include <json.hpp>

#include "boat/csv.hpp"
#include "boat/design_opt.hpp"
#include "boat/types.hpp"

namespace boat {

std::string to_string(Branch b) { return b == Branch::loading ? "loading" : "unloading"; }

Branch parse_branch(const std::string& text) {
  if (text == "loading") return Branch::loading;
  if (text == "unloading") return Branch::unloading;
  throw ValidationError("branch must be 'loading' or 'unloading', got '" + text + "'");
}

std::vector<CalibrationSample> load_calibration(std::istream& in) {
  CsvReader reader(in);
  reader.expect_header(kCalibrationCsvHeader);
  std::vector<CalibrationSample> out;
  while (auto row = reader.next()) {
    const auto& f = *row;
    const std::size_t r = reader.row();
    if (f.size() != 7) throw ParseError("expected 7 columns, got " + std::to_string(f.size()), r);
    CalibrationSample s;
    s.t_s = parse_double(f[0], r, "t_s");
    s.pressure_kpa = parse_double(f[1], r, "pressure_kpa");
    s.displacement_mm = parse_double(f[2], r, "displacement_mm");
    s.v1_mv = parse_double(f[3], r, "v1_mv");
    s.v2_mv = parse_double(f[4], r, "v2_mv");
    s.cycle = parse_int(f[5], r, "cycle");
    if (s.cycle < 1) throw ParseError("cycle must be >= 1", r);
    try {
      s.branch = parse_branch(f[6]);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), r);
    }
    out.push_back(s);
  }
  return out;
}

std::vector<CalibrationSample> load_calibration_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open calibration file '" + path + "'");
  return load_calibration(in);
}

void write_calibration(std::span<const CalibrationSample> samples, std::ostream& out) {
  out << kCalibrationCsvHeader << '\n';
  for (const auto& s : samples)
    out << format_double(s.t_s) << ',' << format_double(s.pressure_kpa) << ',' << format_double(s.displacement_mm)
        << ',' << format_double(s.v1_mv) << ',' << format_double(s.v2_mv) << ',' << s.cycle << ','
        << to_string(s.branch) << '\n';
}

// ---------------------------------------------------------------------------

double CalibrationModel::evaluate(double x) const {
  return coeffs[0] + x * (coeffs[1] + x * (coeffs[2] + x * coeffs[3]));
}

double CalibrationModel::derivative(double x) const { return coeffs[1] + x * (2.0 * coeffs[2] + x * 3.0 * coeffs[3]); }

bool is_monotone(const std::array<double, 4>& c, double lo, double hi) {
  const auto dp = [&](double x) { return c[1] + x * (2.0 * c[2] + x * 3.0 * c[3]); };
  std::vector<double> probes;
  const double step = 1e-3;
  const auto n = static_cast<long>(std::floor((hi - lo) / step));
  for (long i = 0; i <= n; ++i) probes.push_back(lo + static_cast<double>(i) * step);
  probes.push_back(hi);
  // Roots of p'(x) = 3 c3 x^2 + 2 c2 x + c1.
  const double qa = 3.0 * c[3], qb = 2.0 * c[2], qc = c[1];
  if (qa == 0.0) {
    if (qb != 0.0) probes.push_back(-qc / qb);
  } else {
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      const double q = -0.5 * (qb + std::copysign(sq, qb));
      probes.push_back(q / qa);
      if (q != 0.0) probes.push_back(qc / q);
    }
  }
  int sign = 0;
  for (double x : probes) {
    if (x < lo || x > hi) continue;
    const double d = dp(x);
    if (d == 0.0) return false;
    const int s = d > 0.0 ? 1 : -1;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return sign != 0;
}

CalibrationModel make_model(int sensor, const std::array<double, 4>& coeffs, double x_min, double x_max) {
  if (sensor != 1 && sensor != 2) throw ValidationError("sensor must be 1 or 2");
  if (!(x_min < x_max)) throw ValidationError("calibration range must have x_min < x_max");
  CalibrationModel m;
  m.sensor = sensor;
  m.coeffs = coeffs;
  m.r_squared = 1.0;
  m.x_min = x_min;
  m.x_max = x_max;
  m.monotone = is_monotone(coeffs, x_min, x_max);
  return m;
}

CalibrationModel fit_calibration(std::span<const CalibrationSample> samples, int sensor, double r_squared_floor) {
  if (sensor != 1 && sensor != 2) throw ValidationError("sensor must be 1 or 2");
  std::vector<double> xs, ys;
  xs.reserve(samples.size());
  ys.reserve(samples.size());
  for (const auto& s : samples) {
    xs.push_back(s.displacement_mm);
    ys.push_back(s.voltage(sensor));
  }
  const CubicFit fit = fit_cubic(xs, ys);

  CalibrationModel m;
  m.sensor = sensor;
  m.coeffs = fit.coeffs;
  m.rmse = fit.rmse;
  m.n_samples = samples.size();
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  m.x_min = *lo;
  m.x_max = *hi;

  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= static_cast<double>(ys.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    ss_tot += (ys[i] - mean) * (ys[i] - mean);
    const double r = ys[i] - fit(xs[i]);
    ss_res += r * r;
  }
  if (ss_tot <= 0.0) {
    m.r_squared = 0.0;
    m.r_squared_defined = false;
    m.coeffs = {mean, 0.0, 0.0, 0.0};
  } else {
    m.r_squared = std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
  }
  m.below_r_squared_floor = m.r_squared < r_squared_floor;
  m.monotone = m.r_squared_defined && is_monotone(m.coeffs, m.x_min, m.x_max);
  return m;
}

Inversion invert(const CalibrationModel& model, double v_mv) {
  if (!model.monotone) throw ValidationError("sensor " + std::to_string(model.sensor) + " model is not monotone");
  const double f_lo = model.evaluate(model.x_min);
  const double f_hi = model.evaluate(model.x_max);
  const bool rising = f_hi > f_lo;
  const double v_min = std::min(f_lo, f_hi), v_max = std::max(f_lo, f_hi);
  if (v_mv <= v_min || v_mv >= v_max || std::isnan(v_mv)) {
    // Within three fit residuals of an endpoint the overshoot is indistinguishable
    // from calibration noise, so it reads as the endpoint itself.
    const double snap = std::max(1e-9 * std::max(v_max - v_min, 1.0), 3.0 * model.rmse);
    if (std::abs(v_mv - f_lo) <= snap) return {model.x_min, false};
    if (std::abs(v_mv - f_hi) <= snap) return {model.x_max, false};
    const bool low = !(v_mv > v_min);
    return {(low == rising) ? model.x_min : model.x_max, true};
  }
  const auto g = [&](double x) { return model.evaluate(x) - v_mv; };
  std::uintmax_t iters = 200;
  const auto tol = [](double a, double b) { return std::abs(b - a) < 1e-10; };
  const auto [a, b] = boost::math::tools::toms748_solve(g, model.x_min, model.x_max, f_lo - v_mv, f_hi - v_mv, tol, iters);
  // Return whichever bracket end has the smaller residual.
  const double x = std::abs(g(a)) <= std::abs(g(b)) ? a : b;
  return {x, false};
}

// ---------------------------------------------------------------------------

namespace {

std::int64_t setpoint_key(double pressure) { return std::llround(pressure * 1e6); }

std::vector<CalibrationSample> canonical(std::span<const CalibrationSample> samples) {
  std::vector<CalibrationSample> out(samples.begin(), samples.end());
  std::sort(out.begin(), out.end(), [](const CalibrationSample& a, const CalibrationSample& b) {
    return std::tuple(a.cycle, a.branch, setpoint_key(a.pressure_kpa), a.t_s, a.displacement_mm, a.v1_mv, a.v2_mv) <
           std::tuple(b.cycle, b.branch, setpoint_key(b.pressure_kpa), b.t_s, b.displacement_mm, b.v1_mv, b.v2_mv);
  });
  return out;
}

struct Accumulator {
  double sum_x = 0.0, sum_v = 0.0;
  std::vector<double> v;
};

double interp(const std::vector<std::pair<double, double>>& curve, double x) {
  auto it = std::lower_bound(curve.begin(), curve.end(), x, [](const auto& p, double v) { return p.first < v; });
  if (it == curve.begin()) return it->second;
  if (it == curve.end()) return curve.back().second;
  const auto& [x1, y1] = *it;
  const auto& [x0, y0] = *(it - 1);
  if (x1 == x0) return y1;
  return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
}

}  // namespace

SensorMetrics compute_metrics(std::span<const CalibrationSample> raw, const CalibrationModel& model,
                              const MetricsOptions& options) {
  SensorMetrics m;
  const double f_lo = model.evaluate(model.x_min), f_hi = model.evaluate(model.x_max);
  m.span_mv = std::abs(f_hi - f_lo);
  m.sensitivity_mv_per_mm = model.x_max > model.x_min ? m.span_mv / (model.x_max - model.x_min) : 0.0;

  const auto samples = canonical(raw);

  // Split into holds: consecutive samples with the same cycle, branch and setpoint.
  using GroupKey = std::pair<int, std::int64_t>;  // branch, setpoint
  std::map<GroupKey, Accumulator> groups;
  std::size_t i = 0;
  while (i < samples.size()) {
    std::size_t j = i;
    const auto& first = samples[i];
    const auto key = setpoint_key(first.pressure_kpa);
    while (j < samples.size() && samples[j].cycle == first.cycle && samples[j].branch == first.branch &&
           setpoint_key(samples[j].pressure_kpa) == key)
      ++j;
    const std::size_t n = j - i;
    const auto skip = static_cast<std::size_t>(std::floor(options.settle_fraction * static_cast<double>(n)));
    auto& acc = groups[{static_cast<int>(first.branch), key}];
    for (std::size_t k = i + std::min(skip, n - 1); k < j; ++k) {
      acc.sum_x += samples[k].displacement_mm;
      const double v = samples[k].voltage(model.sensor);
      acc.sum_v += v;
      acc.v.push_back(v);
    }
    i = j;
  }

  // Pooled setpoint noise.
  double ss = 0.0;
  std::size_t dof = 0;
  for (const auto& [key, acc] : groups) {
    const double n = static_cast<double>(acc.v.size());
    const double mean = acc.sum_v / n;
    for (double v : acc.v) ss += (v - mean) * (v - mean);
    if (acc.v.size() > 1) dof += acc.v.size() - 1;
  }
  m.noise_std_mv = dof > 0 ? std::sqrt(ss / static_cast<double>(dof)) : 0.0;
  m.snr_db = m.noise_std_mv > 0.0 ? 20.0 * std::log10(m.span_mv / m.noise_std_mv)
                                  : std::numeric_limits<double>::infinity();

  // Branch curves of mean voltage against mean displacement per setpoint.
  std::array<std::vector<std::pair<double, double>>, 2> curves;
  for (const auto& [key, acc] : groups) {
    const double n = static_cast<double>(acc.v.size());
    curves[static_cast<std::size_t>(key.first)].emplace_back(acc.sum_x / n, acc.sum_v / n);
  }
  for (auto& c : curves) std::sort(c.begin(), c.end());
  if (curves[0].empty() || curves[1].empty() || m.span_mv <= 0.0) return m;

  const double lo = std::max(curves[0].front().first, curves[1].front().first);
  const double hi = std::min(curves[0].back().first, curves[1].back().first);
  if (lo > hi) return m;
  m.hysteresis_defined = true;
  double worst = 0.0;
  const auto steps = static_cast<long>(std::floor((hi - lo) / options.grid_mm + 1e-9));
  for (long k = 0; k <= steps + 1; ++k) {
    const double x = k > steps ? hi : lo + static_cast<double>(k) * options.grid_mm;
    worst = std::max(worst, std::abs(interp(curves[0], x) - interp(curves[1], x)));
  }
  m.hysteresis_pct = 100.0 * worst / m.span_mv;
  return m;
}

double system_sensitivity(const SensorMetrics& s1, const SensorMetrics& s2) {
  return 0.5 * (s1.sensitivity_mv_per_mm + s2.sensitivity_mv_per_mm);
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json number_or_text(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double read_number(const nlohmann::json& j) {
  if (j.is_string()) return std::stod(j.get<std::string>());
  return j.get<double>();
}

}  // namespace

void write_models_json(const CalibrationReport& report, std::ostream& out) {
  using nlohmann::json;
  json sensors = json::array();
  for (std::size_t s = 0; s < 2; ++s) {
    const auto& m = report.models[s];
    const auto& q = report.metrics[s];
    sensors.push_back({{"sensor", m.sensor},
                       {"coefficients", m.coeffs},
                       {"r_squared", m.r_squared},
                       {"r_squared_defined", m.r_squared_defined},
                       {"below_r_squared_floor", m.below_r_squared_floor},
                       {"valid_range_mm", {m.x_min, m.x_max}},
                       {"monotone", m.monotone},
                       {"inversion_enabled", m.monotone},
                       {"fit", {{"n_samples", m.n_samples}, {"rmse_mv", m.rmse}, {"degree", 3}}},
                       {"metrics",
                        {{"sensitivity_mv_per_mm", q.sensitivity_mv_per_mm},
                         {"hysteresis_pct", q.hysteresis_defined ? json(q.hysteresis_pct) : json(nullptr)},
                         {"snr_db", number_or_text(q.snr_db)},
                         {"noise_std_mv", q.noise_std_mv},
                         {"span_mv", q.span_mv}}}});
  }
  json j;
  j["engine_version"] = BOAT_VERSION;
  j["voltage_unit"] = "mV (assumed)";
  j["source_hash"] = report.source_hash;
  j["sensors"] = sensors;
  j["system_sensitivity_mv_per_mm"] = system_sensitivity(report.metrics[0], report.metrics[1]);
  out << j.dump(2) << '\n';
}

std::array<CalibrationModel, 2> load_models_json(std::istream& in) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model file is not valid JSON: ") + e.what());
  }
  std::array<CalibrationModel, 2> out;
  try {
    const auto& sensors = j.at("sensors");
    if (!sensors.is_array() || sensors.size() != 2) throw ValidationError("model file must hold two sensors");
    for (const auto& s : sensors) {
      const int id = s.at("sensor").get<int>();
      if (id != 1 && id != 2) throw ValidationError("sensor id must be 1 or 2");
      CalibrationModel m;
      m.sensor = id;
      const auto c = s.at("coefficients");
      if (!c.is_array() || c.size() != 4) throw ValidationError("model needs four coefficients");
      for (std::size_t k = 0; k < 4; ++k) m.coeffs[k] = read_number(c[k]);
      m.r_squared = read_number(s.at("r_squared"));
      m.x_min = read_number(s.at("valid_range_mm").at(0));
      m.x_max = read_number(s.at("valid_range_mm").at(1));
      if (s.contains("fit")) {
        const auto& fit = s.at("fit");
        if (fit.contains("rmse_mv")) m.rmse = read_number(fit.at("rmse_mv"));
        if (fit.contains("n_samples")) m.n_samples = fit.at("n_samples").get<std::size_t>();
      }
      m.monotone = is_monotone(m.coeffs, m.x_min, m.x_max);
      out[static_cast<std::size_t>(id - 1)] = m;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
  if (out[0].sensor != 1 || out[1].sensor != 2) throw ValidationError("model file must define sensors 1 and 2");
  return out;
}

std::array<CalibrationModel, 2> load_models_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file '" + path + "'");
  return load_models_json(in);
}

// ---------------------------------------------------------------------------

std::vector<double> fixture_setpoints(const CalibrationFixtureParams& p) {
  if (!(p.p_step_kpa > 0.0) || !(p.p_max_kpa > p.p_min_kpa))
    throw ValidationError("fixture pressure range must be increasing with a positive step");
  std::vector<double> out;
  const auto n = static_cast<long>(std::llround((p.p_max_kpa - p.p_min_kpa) / p.p_step_kpa));
  for (long k = 0; k <= n; ++k) out.push_back(p.p_max_kpa - static_cast<double>(k) * p.p_step_kpa);
  out.back() = std::max(out.back(), p.p_min_kpa);
  return out;
}

std::vector<CalibrationSample> synthesize_calibration(const CalibrationFixtureParams& p) {
  if (p.cycles < 1) throw ValidationError("fixture needs at least one cycle");
  if (!(p.rate_hz > 0.0) || !(p.hold_s > 0.0)) throw ValidationError("fixture rate and hold must be positive");
  const auto down = fixture_setpoints(p);
  const auto per_hold = static_cast<std::size_t>(std::llround(p.hold_s * p.rate_hz));
  std::array<double, 2> span{};
  for (std::size_t s = 0; s < 2; ++s) {
    const auto m = make_model(static_cast<int>(s + 1), p.coeffs[s], p.mm_per_kpa * down.back(),
                              p.mm_per_kpa * down.front());
    span[s] = std::abs(m.evaluate(m.x_max) - m.evaluate(m.x_min));
  }

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<CalibrationSample> out;
  out.reserve(static_cast<std::size_t>(p.cycles) * 2 * down.size() * per_hold);
  std::size_t tick = 0;
  for (int c = 1; c <= p.cycles; ++c) {
    for (Branch b : {Branch::unloading, Branch::loading}) {
      for (std::size_t k = 0; k < down.size(); ++k) {
        const double pressure = b == Branch::unloading ? down[k] : down[down.size() - 1 - k];
        const double x = p.mm_per_kpa * pressure;
        for (std::size_t h = 0; h < per_hold; ++h, ++tick) {
          CalibrationSample s;
          s.t_s = static_cast<double>(tick) / p.rate_hz;
          s.pressure_kpa = pressure;
          s.displacement_mm = x;
          s.cycle = c;
          s.branch = b;
          std::array<double, 2> v{};
          for (std::size_t q = 0; q < 2; ++q) {
            const auto& a = p.coeffs[q];
            v[q] = a[0] + x * (a[1] + x * (a[2] + x * a[3]));
            if (b == Branch::loading) v[q] += p.hysteresis_fraction * span[q];
            if (p.noise_mv > 0.0) v[q] += p.noise_mv * noise(rng);
          }
          s.v1_mv = v[0];
          s.v2_mv = v[1];
          out.push_back(s);
        }
      }
    }
  }
  return out;
}

}  // namespace boat
