#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "boat/design_opt.hpp"

using namespace boat;

namespace {

// Plain Gaussian elimination on the 4x4 normal equations, in long double.
std::array<double, 4> normal_equations_cubic(const std::vector<double>& xs, const std::vector<double>& ys) {
  long double m[4][5] = {};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    long double pw[4] = {1.0L, xs[i], static_cast<long double>(xs[i]) * xs[i], static_cast<long double>(xs[i]) * xs[i] * xs[i]};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) m[r][c] += pw[r] * pw[c];
      m[r][4] += pw[r] * ys[i];
    }
  }
  for (int k = 0; k < 4; ++k) {
    int piv = k;
    for (int r = k + 1; r < 4; ++r)
      if (std::fabs(m[r][k]) > std::fabs(m[piv][k])) piv = r;
    for (int c = 0; c < 5; ++c) std::swap(m[k][c], m[piv][c]);
    for (int r = 0; r < 4; ++r) {
      if (r == k) continue;
      const long double f = m[r][k] / m[k][k];
      for (int c = k; c < 5; ++c) m[r][c] -= f * m[k][c];
    }
  }
  return {static_cast<double>(m[0][4] / m[0][0]), static_cast<double>(m[1][4] / m[1][1]),
          static_cast<double>(m[2][4] / m[2][2]), static_cast<double>(m[3][4] / m[3][3])};
}

std::vector<double> indices(std::size_t n) {
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = static_cast<double>(i);
  return xs;
}

SweepRecord record_with_p(PatternSpec spec, double p) {
  SweepRecord r;
  r.spec = spec;
  r.score.p = p;
  return r;
}

}  // namespace

TEST_CASE("exact cubic is recovered") {
  const auto xs = indices(15);
  std::vector<double> ys;
  for (double x : xs) ys.push_back(2.0 - 3.0 * x + x * x * x);
  const CubicFit f = fit_cubic(xs, ys);
  CHECK(f.coeffs[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(f.coeffs[1] == doctest::Approx(-3.0).epsilon(1e-9));
  CHECK(std::abs(f.coeffs[2]) < 1e-9);
  CHECK(f.coeffs[3] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.rmse < 1e-9);
}

TEST_CASE("constant data fits a constant") {
  const auto xs = indices(15);
  const std::vector<double> ys(15, 7.0);
  const CubicFit f = fit_cubic(xs, ys);
  CHECK(f.coeffs[0] == doctest::Approx(7.0));
  for (int k = 1; k < 4; ++k) CHECK(std::abs(f.coeffs[k]) < 1e-12);
}

TEST_CASE("quartic under a cubic fit matches the normal-equations oracle") {
  const std::vector<double> xs{-2, -1, 0, 1, 2};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(x * x * x * x);
  const CubicFit f = fit_cubic(xs, ys);
  const auto oracle = normal_equations_cubic(xs, ys);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(f.coeffs[k] - oracle[k]) < 1e-9);
  CHECK(f.coeffs[0] == doctest::Approx(-72.0 / 35.0));
  CHECK(f.coeffs[2] == doctest::Approx(31.0 / 7.0));
  CHECK(std::abs(f.rmse - std::sqrt(2016.0) / 35.0) < 1e-9);
}

TEST_CASE("random data agrees with the normal-equations oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 5.0);
  const auto xs = indices(15);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> ys;
    for (double x : xs) ys.push_back(200.0 - 3.0 * x + noise(rng));
    const auto oracle = normal_equations_cubic(xs, ys);
    const CubicFit f = fit_cubic(xs, ys);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(f.coeffs[k] - oracle[k]) < 1e-8);
  }
}

TEST_CASE("fewer than four distinct abscissae is rejected") {
  const std::vector<double> xs{0, 1, 1, 2, 2};
  const std::vector<double> ys{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(fit_cubic(xs, ys), ValidationError);
}

TEST_CASE("P metric arithmetic") {
  CHECK(p_metric(10.0, 2, 0.5).p == 10.0);
  CHECK(p_metric(0.0, 3, 0.0).p == 0.0);
  CHECK(p_metric(0.0, 3, 0.7).p == 0.0);
  const Score guarded = p_metric(6.0, 0, 2.0);
  CHECK(guarded.guard_fired);
  CHECK(guarded.p == 3.0);
  CHECK_THROWS_AS(p_metric(6.0, 0, 2.0, true), ValidationError);
  const Score perfect = p_metric(6.0, 1, 0.0);
  CHECK(perfect.perfect_fit);
  CHECK(perfect.p == std::numeric_limits<double>::infinity());
  CHECK(p_metric(-6.0, 1, 0.0).p == -std::numeric_limits<double>::infinity());
}

TEST_CASE("strictly decreasing cubic series fires the guard with a perfect fit") {
  const auto xs = indices(15);
  std::vector<double> ys;
  for (double x : xs) ys.push_back(300.0 - 2.0 * x - 0.01 * x * x * x);
  const CubicFit f = fit_cubic(xs, ys);
  const Score s = score(ys, xs, f);
  CHECK(s.n_sign == 0);
  CHECK(s.guard_fired);
  CHECK(s.delta == doctest::Approx(2.0 * 14 + 0.01 * 14 * 14 * 14));
  CHECK(s.perfect_fit);
  CHECK(s.p == std::numeric_limits<double>::infinity());
}

TEST_CASE("an injected increase is penalized") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> step(1.0, 10.0), bump(0.5, 20.0);
  std::uniform_int_distribution<int> where(1, 12);
  const auto xs = indices(15);
  for (int trial = 0; trial < 100; ++trial) {
    // One increase already present so the n_sign guard stays out of the way.
    std::vector<double> ys{300.0};
    for (int i = 1; i < 15; ++i) ys.push_back(ys.back() - step(rng));
    ys[14] = ys[13] + 0.5;
    const Score base = score(ys, xs, fit_cubic(xs, ys));
    REQUIRE(base.n_sign == 1);

    auto injected = ys;
    const int i = where(rng);
    injected[static_cast<std::size_t>(i)] = injected[static_cast<std::size_t>(i - 1)] + bump(rng);
    const CubicFit f = fit_cubic(xs, injected);
    const Score s = score(injected, xs, f);
    CHECK(s.n_sign > base.n_sign);
    if (s.delta > 0.0) {
      CHECK(s.p < p_metric(s.delta, base.n_sign, s.rmse).p);
      CHECK(s.p == doctest::Approx(s.delta / (s.n_sign * s.rmse)).epsilon(1e-12));
    }
  }
}

TEST_CASE("P is invariant under positive scaling of the series") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 3.0);
  const auto xs = indices(15);
  std::vector<double> ys;
  for (double x : xs) ys.push_back(250.0 - 4.0 * x + noise(rng));
  const Score a = score(ys, xs, fit_cubic(xs, ys));
  for (double c : {0.001, 3.0, 1e4}) {
    std::vector<double> scaled;
    for (double y : ys) scaled.push_back(c * y);
    const Score b = score(scaled, xs, fit_cubic(xs, scaled));
    CHECK(b.n_sign == a.n_sign);
    CHECK(b.p == doctest::Approx(a.p).epsilon(1e-9));
  }
}

TEST_CASE("ranking and normalization") {
  SUBCASE("positive infinity outranks every finite value") {
    std::vector<SweepRecord> rs{record_with_p({3, 0.5, 0.5, 0.5}, 4.0), record_with_p({5, 0.5, 0.5, 0.5}, 8.0),
                                record_with_p({7, 0.5, 0.5, 0.5}, std::numeric_limits<double>::infinity())};
    rank_records(rs);
    CHECK(rs[0].spec.cavity_count == 7);
    CHECK(rs[0].p_normalized == 1.0);
    CHECK(rs[1].p_normalized == 1.0);
    CHECK(rs[2].p_normalized == 0.5);
  }
  SUBCASE("ties break on the spec tuple and failures sink") {
    std::vector<SweepRecord> rs{record_with_p({5, 0.6, 0.5, 0.5}, 2.0), record_with_p({5, 0.5, 0.5, 0.5}, 2.0),
                                record_with_p({3, 0.5, 0.5, 0.5}, 9.0)};
    rs.back().failed = true;
    rank_records(rs);
    CHECK(rs[0].spec.width == 0.5);
    CHECK(rs[1].spec.width == 0.6);
    CHECK(rs[0].p_normalized == 1.0);
    CHECK(rs[1].p_normalized == 1.0);
    CHECK(rs[2].failed);
    CHECK(rs[2].p_normalized == 0.0);
  }
  SUBCASE("all non-positive scores normalize the leader to one") {
    std::vector<SweepRecord> rs{record_with_p({5, 0.5, 0.5, 0.5}, -3.0), record_with_p({3, 0.5, 0.5, 0.5}, -1.0)};
    rank_records(rs);
    CHECK(rs[0].score.p == -1.0);
    CHECK(rs[0].p_normalized == 1.0);
    CHECK(rs[1].p_normalized == 0.0);
  }
}

TEST_CASE("full grid dimensions") {
  const SweepGrid g = SweepGrid::full();
  CHECK(g.size() == 648);
  const auto specs = g.specs();
  REQUIRE(specs.size() == 648);
  CHECK(specs.front() == PatternSpec{3, 0.5, 0.5, 0.5});
  CHECK(specs.back() == PatternSpec{7, 1.0, 1.0, 1.0});
  CHECK(g.widths[4] == 0.9);
  SweepGrid dup = g;
  dup.depths.push_back(0.5);
  CHECK_THROWS_AS(dup.validate(), ValidationError);
}

TEST_CASE("single-spec sweep normalizes to one and fills a 1x1 heatmap") {
  const StateLibrary lib = synthesize_states({});
  const SweepGrid grid{{1.0}, {0.5}, {0.9}, {5}};
  const SweepResult r = run_sweep(lib, grid, SweepConfig{});
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].ndr.size() == 15);
  CHECK(r.records[0].p_normalized == 1.0);
  REQUIRE(r.best);

  const HeatmapTable t = emit_heatmap_table(r.records, grid, 5, 1.0);
  REQUIRE(t.cells.size() == 1);
  REQUIRE(t.cells[0].size() == 1);
  CHECK(t.cells[0][0] == 1.0);
  std::ostringstream csv;
  write_heatmap_csv(t, csv);
  CHECK(csv.str() == "depth_mm,s_0.9\n0.5,1\n");

  const HeatmapTable empty = emit_heatmap_table(r.records, grid, 7, 1.0);
  CHECK(empty.filled == 0);
  std::ostringstream blank;
  write_heatmap_csv(empty, blank);
  CHECK(blank.str() == "depth_mm,s_0.9\n0.5,\n");
}

TEST_CASE("sweep output is identical across worker counts") {
  const StateLibrary lib = synthesize_states({});
  const SweepGrid grid{{0.5, 1.0}, {0.5, 0.8}, {0.6}, {3, 5}};
  SweepConfig one, many;
  many.workers = 3;
  std::ostringstream a, b;
  write_sweep_csv(run_sweep(lib, grid, one), a);
  write_sweep_csv(run_sweep(lib, grid, many), b);
  CHECK(a.str() == b.str());
}

TEST_CASE("infeasible specs fail without stopping the sweep") {
  const StateLibrary lib = synthesize_states({});
  const SweepGrid grid{{1.0}, {0.5, 1.6}, {0.9}, {5}};
  const SweepResult r = run_sweep(lib, grid, SweepConfig{});
  REQUIRE(r.records.size() == 2);
  CHECK_FALSE(r.records[0].failed);
  CHECK(r.records[1].failed);
  CHECK(r.records[1].flags().find("failed") != std::string::npos);
  CHECK(r.records[0].p_normalized == 1.0);
}

TEST_CASE("regressor and metric names") {
  CHECK(parse_regressor("tip_displacement") == Regressor::tip_displacement);
  CHECK(to_string(parse_metric("detected_power")) == "detected_power");
  CHECK_THROWS_AS(parse_metric("lumens"), ValidationError);
}
