#include "boat/design_opt.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <thread>

#include <Eigen/Dense>
#include <json.hpp>

#include "boat/csv.hpp"

namespace boat {

SweepGrid SweepGrid::full() {
  SweepGrid g;
  for (int k = 0; k <= 5; ++k) {
    const double v = (5 + k) / 10.0;
    g.widths.push_back(v);
    g.depths.push_back(v);
    g.spacings.push_back(v);
  }
  g.cavity_counts = {3, 5, 7};
  return g;
}

std::size_t SweepGrid::size() const {
  return widths.size() * depths.size() * spacings.size() * cavity_counts.size();
}

void SweepGrid::validate() const {
  if (size() == 0) throw ValidationError("sweep grid is empty");
  const auto check_axis = [](const std::vector<double>& axis, const char* name) {
    for (double v : axis)
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string("grid ") + name + " must be positive");
    std::set<double> unique(axis.begin(), axis.end());
    if (unique.size() != axis.size()) throw ValidationError(std::string("grid ") + name + " has duplicates");
  };
  check_axis(widths, "widths");
  check_axis(depths, "depths");
  check_axis(spacings, "spacings");
  std::set<int> counts(cavity_counts.begin(), cavity_counts.end());
  if (counts.size() != cavity_counts.size()) throw ValidationError("grid cavity counts have duplicates");
  for (int n : cavity_counts)
    if (n < 1) throw ValidationError("grid cavity counts must be >= 1");
}

std::vector<PatternSpec> SweepGrid::specs() const {
  auto sorted = [](auto v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto n = sorted(cavity_counts);
  const auto w = sorted(widths);
  const auto d = sorted(depths);
  const auto s = sorted(spacings);
  std::vector<PatternSpec> out;
  out.reserve(size());
  for (int count : n)
    for (double width : w)
      for (double depth : d)
        for (double spacing : s) out.push_back({count, width, depth, spacing});
  return out;
}

// ---------------------------------------------------------------------------

double CubicFit::operator()(double x) const {
  return coeffs[0] + x * (coeffs[1] + x * (coeffs[2] + x * coeffs[3]));
}

CubicFit fit_cubic(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("fit_cubic: xs and ys differ in length");
  std::set<double> distinct(xs.begin(), xs.end());
  if (distinct.size() < 4) throw ValidationError("fit_cubic: need at least 4 distinct x values");

  const auto n = static_cast<Eigen::Index>(xs.size());
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = xs[static_cast<std::size_t>(i)];
    a(i, 0) = 1.0;
    a(i, 1) = x;
    a(i, 2) = x * x;
    a(i, 3) = x * x * x;
    b(i) = ys[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < 4) throw ValidationError("fit_cubic: rank-deficient design matrix");
  const Eigen::VectorXd c = qr.solve(b);

  CubicFit fit;
  for (int k = 0; k < 4; ++k) fit.coeffs[static_cast<std::size_t>(k)] = c(k);
  double ss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - fit(xs[i]);
    ss += r * r;
  }
  fit.rmse = std::sqrt(ss / static_cast<double>(xs.size()));
  return fit;
}

Score p_metric(double delta, int n_sign, double rmse, bool literal, double zero_rmse) {
  Score s;
  s.delta = delta;
  s.n_sign = n_sign;
  s.rmse = rmse;
  if (n_sign == 0) {
    if (literal) throw ValidationError("P is undefined for n_sign = 0 under the literal formula");
    s.guard_fired = true;
  }
  if (delta == 0.0) {
    s.p = 0.0;
    return s;
  }
  if (rmse <= zero_rmse) {
    s.perfect_fit = true;
    s.p = std::copysign(std::numeric_limits<double>::infinity(), delta);
    return s;
  }
  s.p = delta / (static_cast<double>(std::max(n_sign, 1)) * rmse);
  return s;
}

Score score(std::span<const double> series, std::span<const double> xs, const CubicFit& fit, bool literal) {
  if (series.size() < 2 || series.size() != xs.size()) throw ValidationError("score: series and regressor mismatch");
  int n_sign = 0;
  double scale = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    scale = std::max(scale, std::abs(series[i]));
    if (i > 0 && series[i] > series[i - 1]) ++n_sign;
  }
  const double delta = fit(xs.front()) - fit(xs.back());
  return p_metric(delta, n_sign, fit.rmse, literal, 1e-9 * std::max(scale, 1.0));
}

std::string to_string(Regressor r) { return r == Regressor::state_index ? "state_index" : "tip_displacement"; }
std::string to_string(SweepMetric m) { return m == SweepMetric::ndr ? "ndr" : "detected_power"; }

Regressor parse_regressor(const std::string& text) {
  if (text == "state_index" || text == "index") return Regressor::state_index;
  if (text == "tip_displacement" || text == "tip") return Regressor::tip_displacement;
  throw ValidationError("unknown regressor '" + text + "' (state_index|tip_displacement)");
}

SweepMetric parse_metric(const std::string& text) {
  if (text == "ndr") return SweepMetric::ndr;
  if (text == "detected_power" || text == "power") return SweepMetric::detected_power;
  throw ValidationError("unknown metric '" + text + "' (ndr|detected_power)");
}

// ---------------------------------------------------------------------------

std::string SweepRecord::flags() const {
  std::vector<std::string> tokens;
  if (failed) {
    std::string reason = failure;
    std::replace(reason.begin(), reason.end(), ',', ';');
    std::replace(reason.begin(), reason.end(), '\n', ' ');
    tokens.push_back("failed: " + reason);
  } else {
    if (score.guard_fired) tokens.push_back("nsign_guard");
    if (score.perfect_fit) tokens.push_back("perfect_fit");
  }
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ';';
    out += t;
  }
  return out;
}

namespace {

auto spec_key(const PatternSpec& s) { return std::tuple(s.cavity_count, s.width, s.depth, s.spacing); }

std::vector<double> regressor_values(const StateLibrary& library, Regressor r) {
  std::vector<double> xs;
  xs.reserve(library.size());
  for (std::size_t i = 0; i < library.size(); ++i)
    xs.push_back(r == Regressor::state_index ? static_cast<double>(i) : library.states[i].tip_displacement_mm);
  return xs;
}

SweepRecord failed_record(const PatternSpec& spec, const std::string& reason) {
  SweepRecord r;
  r.spec = spec;
  r.failed = true;
  r.failure = reason;
  return r;
}

}  // namespace

void rank_records(std::vector<SweepRecord>& records) {
  std::sort(records.begin(), records.end(), [](const SweepRecord& a, const SweepRecord& b) {
    if (a.failed != b.failed) return !a.failed;
    if (!a.failed && a.score.p != b.score.p) return a.score.p > b.score.p;
    return spec_key(a.spec) < spec_key(b.spec);
  });

  double max_finite = -std::numeric_limits<double>::infinity();
  bool any_pos_inf = false;
  for (const auto& r : records) {
    if (r.failed) continue;
    if (std::isfinite(r.score.p))
      max_finite = std::max(max_finite, r.score.p);
    else if (r.score.p > 0.0)
      any_pos_inf = true;
  }
  for (auto& r : records) {
    r.p_normalized = 0.0;
    if (r.failed) continue;
    if (std::isinf(r.score.p))
      r.p_normalized = r.score.p > 0.0 ? 1.0 : 0.0;
    else if (max_finite > 0.0)
      r.p_normalized = std::max(r.score.p, 0.0) / max_finite;
  }
  if (!any_pos_inf && !(max_finite > 0.0) && !records.empty() && !records.front().failed)
    records.front().p_normalized = 1.0;
}

SweepRecord make_record(const PatternSpec& spec, const StateResponse& response, std::span<const double> xs,
                        const SweepConfig& config) {
  SweepRecord r;
  r.spec = spec;
  r.ndr = response.ndr;
  r.detected_power = response.detected_power;
  std::vector<double> series;
  if (config.metric == SweepMetric::ndr)
    series.assign(response.ndr.begin(), response.ndr.end());
  else
    series = response.detected_power;
  r.fit = fit_cubic(xs, series);
  r.score = score(series, xs, r.fit, config.literal_formula);
  return r;
}

SweepResult run_sweep(const StateLibrary& library, const SweepGrid& grid, const SweepConfig& config) {
  library.validate();
  grid.validate();
  config.trace.validate();

  SweepResult result;
  result.n_states = library.size();
  result.library_hash = library.hash();
  const auto xs = regressor_values(library, config.regressor);
  const auto specs = grid.specs();

  std::vector<StateGeometry> geometry;
  std::string prepare_error;
  try {
    for (const auto& s : library.states) geometry.push_back(prepare_state(s, config.scene));
  } catch (const std::exception& e) {
    prepare_error = e.what();
  }
  ContentHash gh;
  for (const auto& g : geometry)
    for (const auto& ring : g.outlines)
      for (const auto& p : ring) gh.add(p.x).add(p.z);
  result.geometry_hash = gh.hex();

  std::vector<SweepRecord> records(specs.size());
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) {
      if (!prepare_error.empty()) {
        records[i] = failed_record(specs[i], prepare_error);
        continue;
      }
      try {
        const StateResponse response = ndr_vs_state(geometry, specs[i], config.trace, config.scene);
        records[i] = make_record(specs[i], response, xs, config);
      } catch (const std::exception& e) {
        records[i] = failed_record(specs[i], e.what());
      }
    }
  };

  std::size_t workers = config.workers > 0 ? static_cast<std::size_t>(config.workers)
                                           : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(specs.size(), 1));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  rank_records(records);
  result.records = std::move(records);
  if (!result.records.empty() && !result.records.front().failed) result.best = 0;
  return result;
}

// ---------------------------------------------------------------------------

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  out << "cavity_count,width_mm,depth_mm,spacing_mm";
  for (std::size_t k = 1; k <= result.n_states; ++k) out << ",ndr_s" << k;
  out << ",a0,a1,a2,a3,delta,n_sign,rmse,p,p_norm,flags\n";
  for (const auto& r : result.records) {
    out << r.spec.cavity_count << ',' << format_double(r.spec.width) << ',' << format_double(r.spec.depth) << ','
        << format_double(r.spec.spacing);
    for (std::size_t k = 0; k < result.n_states; ++k) {
      out << ',';
      if (!r.failed && k < r.ndr.size()) out << r.ndr[k];
    }
    if (r.failed) {
      out << ",,,,,,,,," << format_double(0.0) << ',' << r.flags() << '\n';
      continue;
    }
    for (double c : r.fit.coeffs) out << ',' << format_double(c);
    out << ',' << format_double(r.score.delta) << ',' << r.score.n_sign << ',' << format_double(r.score.rmse) << ','
        << format_double(r.score.p) << ',' << format_double(r.p_normalized) << ',' << r.flags() << '\n';
  }
}

void write_sweep_sidecar(const SweepResult& result, const SweepGrid& grid, const SweepConfig& config,
                         std::ostream& out) {
  using nlohmann::json;
  json j;
  j["engine_version"] = BOAT_VERSION;
  j["library_hash"] = result.library_hash;
  j["geometry_hash"] = result.geometry_hash;
  j["n_states"] = result.n_states;
  j["n_records"] = result.records.size();
  j["n_failed"] = std::count_if(result.records.begin(), result.records.end(), [](const auto& r) { return r.failed; });
  j["grid"] = {{"widths_mm", grid.widths},
               {"depths_mm", grid.depths},
               {"spacings_mm", grid.spacings},
               {"cavity_counts", grid.cavity_counts}};
  j["normalization"] = "joint across all cavity-count tiers";
  j["regressor"] = to_string(config.regressor);
  j["metric"] = to_string(config.metric);
  j["n_sign_zero"] = config.literal_formula ? "literal (error)" : "guarded max(n_sign, 1)";
  j["trace"] = {{"n_primary", config.trace.n_primary},
                {"aperture_deg", config.trace.aperture_deg},
                {"max_secondary", config.trace.max_secondary},
                {"secondary_budget", "per_primary"},
                {"power_floor", config.trace.power_floor},
                {"max_bounces", config.trace.max_bounces},
                {"detect_threshold", config.trace.detect_threshold},
                {"wavelength_nm", config.trace.wavelength_nm}};
  j["scene"] = {{"thickness_mm", config.scene.thickness_mm},
                {"standoff_mm", config.scene.standoff_mm},
                {"cavity_side", config.scene.cavity_side == CavitySide::outer ? "outer" : "inner"},
                {"core_index", config.scene.core_index},
                {"exterior_index", config.scene.exterior_index}};
  if (result.best) {
    const auto& b = result.records[*result.best];
    j["best"] = {{"cavity_count", b.spec.cavity_count},
                 {"width_mm", b.spec.width},
                 {"depth_mm", b.spec.depth},
                 {"spacing_mm", b.spec.spacing},
                 {"p", std::isfinite(b.score.p) ? json(b.score.p) : json(format_double(b.score.p))}};
  } else {
    j["best"] = nullptr;
  }
  out << j.dump(2) << '\n';
}

HeatmapTable emit_heatmap_table(std::span<const SweepRecord> records, const SweepGrid& grid, int cavity_count,
                                double width) {
  HeatmapTable t;
  t.cavity_count = cavity_count;
  t.width = width;
  t.depths = grid.depths;
  t.spacings = grid.spacings;
  std::sort(t.depths.begin(), t.depths.end());
  std::sort(t.spacings.begin(), t.spacings.end());
  t.cells.assign(t.depths.size(), std::vector<std::optional<double>>(t.spacings.size()));
  for (const auto& r : records) {
    if (r.failed || r.spec.cavity_count != cavity_count || r.spec.width != width) continue;
    const auto di = std::find(t.depths.begin(), t.depths.end(), r.spec.depth);
    const auto si = std::find(t.spacings.begin(), t.spacings.end(), r.spec.spacing);
    if (di == t.depths.end() || si == t.spacings.end()) continue;
    auto& cell = t.cells[static_cast<std::size_t>(di - t.depths.begin())][static_cast<std::size_t>(si - t.spacings.begin())];
    if (!cell) ++t.filled;
    cell = r.p_normalized;
  }
  return t;
}

void write_heatmap_csv(const HeatmapTable& table, std::ostream& out) {
  out << "depth_mm";
  for (double s : table.spacings) out << ",s_" << format_double(s);
  out << '\n';
  for (std::size_t i = 0; i < table.depths.size(); ++i) {
    out << format_double(table.depths[i]);
    for (const auto& cell : table.cells[i]) {
      out << ',';
      if (cell) out << format_double(*cell);
    }
    out << '\n';
  }
}

}  // namespace boat
