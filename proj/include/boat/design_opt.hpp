#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "boat/deformation.hpp"
#include "boat/geometry.hpp"
#include "boat/raytrace.hpp"

namespace boat {

struct SweepGrid {
  std::vector<double> widths;
  std::vector<double> depths;
  std::vector<double> spacings;
  std::vector<int> cavity_counts;

  /// 0.5..1.0 mm in 0.1 mm steps on every axis, 3/5/7 cavities.
  static SweepGrid full();

  std::size_t size() const;
  void validate() const;

  /// Canonical order: cavity count, then width, depth, spacing, all ascending.
  std::vector<PatternSpec> specs() const;
};

/// Ascending-degree cubic a0 + a1 x + a2 x^2 + a3 x^3 with its fit residual.
struct CubicFit {
  std::array<double, 4> coeffs{};
  double rmse = 0.0;

  double operator()(double x) const;
};

/// Least-squares cubic. Throws ValidationError on fewer than 4 distinct xs.
CubicFit fit_cubic(std::span<const double> xs, std::span<const double> ys);

struct Score {
  double delta = 0.0;  // fit at max compression minus fit at max elongation
  int n_sign = 0;      // consecutive increases along the series
  double rmse = 0.0;
  double p = 0.0;
  bool guard_fired = false;  // n_sign was 0 and max(n_sign, 1) was used
  bool perfect_fit = false;  // rmse vanished with nonzero delta; p is +/-inf
};

/// P from its ingredients. `zero_rmse` is the level at or below which the fit
/// counts as exact.
Score p_metric(double delta, int n_sign, double rmse, bool literal = false, double zero_rmse = 0.0);

/// Figure of merit P = delta / (max(n_sign, 1) * rmse). With `literal` set,
/// n_sign = 0 throws instead of being guarded.
Score score(std::span<const double> series, std::span<const double> xs, const CubicFit& fit, bool literal = false);

enum class Regressor { state_index, tip_displacement };
enum class SweepMetric { ndr, detected_power };

std::string to_string(Regressor r);
std::string to_string(SweepMetric m);
Regressor parse_regressor(const std::string& text);
SweepMetric parse_metric(const std::string& text);

struct SweepConfig {
  TraceConfig trace;
  SceneOptions scene;
  Regressor regressor = Regressor::state_index;
  SweepMetric metric = SweepMetric::ndr;
  bool literal_formula = false;
  int workers = 1;
};

struct SweepRecord {
  PatternSpec spec;
  std::vector<int> ndr;
  std::vector<double> detected_power;
  CubicFit fit;
  Score score;
  double p_normalized = 0.0;
  bool failed = false;
  std::string failure;

  /// Semicolon-joined flag tokens for the CSV.
  std::string flags() const;
};

struct SweepResult {
  std::vector<SweepRecord> records;  // ranked, failed records last
  std::optional<std::size_t> best;   // index into records
  std::size_t n_states = 0;
  std::string library_hash;
  std::string geometry_hash;
};

/// Ranks records in place and fills p_normalized (joint across cavity-count tiers).
void rank_records(std::vector<SweepRecord>& records);

SweepResult run_sweep(const StateLibrary& library, const SweepGrid& grid, const SweepConfig& config);

/// Scores one precomputed response series; used by run_sweep and the tests.
SweepRecord make_record(const PatternSpec& spec, const StateResponse& response, std::span<const double> xs,
                        const SweepConfig& config);

void write_sweep_csv(const SweepResult& result, std::ostream& out);
void write_sweep_sidecar(const SweepResult& result, const SweepGrid& grid, const SweepConfig& config,
                         std::ostream& out);

struct HeatmapTable {
  int cavity_count = 0;
  double width = 0.0;
  std::vector<double> depths;    // rows
  std::vector<double> spacings;  // columns
  std::vector<std::vector<std::optional<double>>> cells;
  std::size_t filled = 0;
};

/// p_normalized over (depth, spacing) for one cavity count and width.
HeatmapTable emit_heatmap_table(std::span<const SweepRecord> records, const SweepGrid& grid, int cavity_count,
                                double width);

void write_heatmap_csv(const HeatmapTable& table, std::ostream& out);

}  // namespace boat
