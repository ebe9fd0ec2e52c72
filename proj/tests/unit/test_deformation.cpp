#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "boat/deformation.hpp"

using namespace boat;

namespace {

// Fine polyline length of an arc, independent of the quadrature inside EllipticalArc.
double chord_sum_length(const EllipticalArc& arc, int n = 400000) {
  double total = 0.0;
  Point2 prev{0.0, arc.z(0.0)};
  for (int i = 1; i <= n; ++i) {
    const double x = arc.chord * i / n;
    const Point2 p{x, arc.z(x)};
    total += distance(prev, p);
    prev = p;
  }
  return total;
}

double max_deviation(const Polyline& pts, const std::function<double(double)>& f) {
  double worst = 0.0;
  for (const auto& p : pts) worst = std::max(worst, std::abs(p.z - f(p.x)));
  return worst;
}

}  // namespace

TEST_CASE("adaptive simpson integrates smooth functions") {
  CHECK(adaptive_simpson([](double x) { return std::sin(x); }, 0.0, std::numbers::pi) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(adaptive_simpson([](double x) { return x * x; }, -1.0, 2.0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("spline reproduces lines and parabolas") {
  const Polyline line{{0, 1}, {1.5, 2.5}, {4, 5}, {7, 8}};
  const Polyline para{{-2, 4}, {-0.5, 0.25}, {1, 1}, {2.5, 6.25}, {3, 9}};
  const CubicSpline sl(line), sp(para);
  for (double x = -2.0; x <= 3.0; x += 0.01) {
    if (x >= 0.0 && x <= 7.0) CHECK(std::abs(sl.value(x) - (x + 1.0)) < 1e-9);
    CHECK(std::abs(sp.value(x) - x * x) < 1e-9);
    CHECK(std::abs(sp.slope(x) - 2.0 * x) < 1e-9);
  }
  CHECK(max_deviation(interpolate_centerline(para, 57), [](double x) { return x * x; }) < 1e-9);
}

TEST_CASE("collinear points interpolate to equally spaced collinear points") {
  const Polyline raw{{0, 0}, {2, 0}, {3, 0}, {10, 0}};
  const Polyline out = interpolate_centerline(raw, 10);
  REQUIRE(out.size() == 10);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(std::abs(out[i].z) < 1e-12);
    CHECK(out[i].x == doctest::Approx(10.0 * i / 9.0).epsilon(1e-9));
  }
}

TEST_CASE("sampled sine is recovered within 1e-3 of its length") {
  const double length = 50.0;
  const auto f = [&](double x) { return std::sin(std::numbers::pi * x / length); };
  Polyline raw;
  for (int i = 0; i < 7; ++i) raw.push_back({length * i / 6.0, f(length * i / 6.0)});
  const Polyline out = interpolate_centerline(raw, 100);
  REQUIRE(out.size() == 100);
  CHECK(max_deviation(out, f) < 1e-3 * length);
  CHECK(out.front() == raw.front());
  CHECK(out.back().x == doctest::Approx(length));
}

TEST_CASE("interpolating at the raw count returns the raw points") {
  // Knots already equally spaced in arc length survive re-parameterization.
  Polyline raw;
  for (int i = 0; i < 7; ++i) raw.push_back({static_cast<double>(i), 0.0});
  const Polyline out = interpolate_centerline(raw, raw.size());
  REQUIRE(out.size() == raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(distance(out[i], raw[i]) < 1e-6);
}

TEST_CASE("spline arc length inverse") {
  const CubicSpline s({{0, 0}, {1, 0.5}, {2, 0.2}, {3, 1.0}});
  for (double x : {0.0, 0.3, 1.7, 3.0}) CHECK(s.x_at_arc_length(s.arc_length_to(x)) == doctest::Approx(x).epsilon(1e-9));
  CHECK(s.x_at_arc_length(-1.0) == 0.0);
  CHECK(s.x_at_arc_length(1e9) == 3.0);
}

TEST_CASE("resampling at 0.5 mm") {
  const Polyline line{{0, 0}, {10, 0}};
  const Polyline r = resample(line, 0.5);
  CHECK(r.size() == 21);
  CHECK(resample(line, 10.0).size() == 2);
  CHECK(resample(r, 0.5) == r);
  CHECK_THROWS_AS(resample(line, 0.0), ValidationError);

  const Polyline bent{{0, 0}, {3, 4}, {6, 4.5}, {9, 2}};
  const Polyline rb = resample(bent, 0.5);
  CHECK(std::abs(polyline_length(rb) - polyline_length(bent)) < 0.5);
}

TEST_CASE("state labels") {
  CHECK(StateLabel::parse("compression_7").order_key() == -7);
  CHECK(StateLabel::parse("rest").order_key() == 0);
  CHECK(StateLabel::parse("elongation_2").str() == "elongation_2");
  CHECK_THROWS_AS(StateLabel::parse("twisted_1"), ValidationError);
  CHECK_THROWS_AS(StateLabel::parse("compression_0"), ValidationError);
}

TEST_CASE("elliptical arc length matches a fine chord sum") {
  for (double bow : {0.5, 2.5, 5.0}) {
    const EllipticalArc arc{40.0, bow, 0.5};
    CHECK(std::abs(arc.arc_length() - chord_sum_length(arc)) < 1e-6);
    CHECK(arc.z(20.0) == doctest::Approx(bow));
    CHECK(arc.z(0.0) == doctest::Approx(0.0));
  }
}

TEST_CASE("chord shrinks strictly as the bow grows on a 50 mm span") {
  double previous = 1e9;
  for (double bow : {2.0, 4.0, 6.0}) {
    const double chord = chord_for_arc_length(50.0, bow, 0.5);
    CHECK(std::abs(chord_sum_length({chord, bow, 0.5}) - 50.0) < 1e-6);
    CHECK(chord < previous);
    previous = chord;
  }
}

TEST_CASE("synthetic library shape") {
  SynthesisParams p;
  p.rest_bow_mm = 3.0;
  p.bow_min_mm = 0.0;
  p.bow_max_mm = 6.0;
  const StateLibrary lib = synthesize_states(p);
  REQUIRE(lib.size() == 15);
  CHECK(lib.states.front().label.str() == "compression_7");
  CHECK(lib.states.back().label.str() == "elongation_7");
  lib.validate(true);

  SUBCASE("state 8 is the rest geometry") {
    const auto& rest = lib.states[7];
    CHECK(rest.label.str() == "rest");
    CHECK(rest.tip_displacement_mm == 0.0);
    const double chord = chord_for_arc_length(50.0, 3.0, 0.5);
    const EllipticalArc arc{chord, 3.0, 0.5};
    for (std::size_t k = 1; k + 1 < rest.waveguides[0].size(); ++k)
      CHECK(rest.waveguides[0][k].z == arc.z(rest.waveguides[0][k].x));
  }

  SUBCASE("bow 0 is straight with the most negative tip") {
    const auto& s = lib.states.front();
    for (const auto& pt : s.waveguides[0]) CHECK(pt.z == 0.0);
    CHECK(s.waveguides[0].back().x == doctest::Approx(50.0).epsilon(1e-9));
    for (const auto& other : lib.states) CHECK(s.tip_displacement_mm <= other.tip_displacement_mm);
  }

  SUBCASE("bow heights rise with state index and the twins mirror") {
    double previous = -1.0;
    for (const auto& s : lib.states) {
      double bow = 0.0;
      for (const auto& pt : s.waveguides[0]) bow = std::max(bow, pt.z);
      CHECK(bow > previous - 1e-12);
      previous = bow;
      for (std::size_t k = 0; k < s.waveguides[0].size(); ++k) {
        CHECK(std::abs(s.waveguides[0][k].x - s.waveguides[1][k].x) < 1e-12);
        CHECK(std::abs(s.waveguides[0][k].z + s.waveguides[1][k].z) < 1e-12);
      }
    }
  }
}

TEST_CASE("synthesis rejects inconsistent bows") {
  SynthesisParams p;
  p.n_states = 14;
  CHECK_THROWS_AS(synthesize_states(p), ValidationError);
  p.n_states = 15;
  p.bow_min_mm = 3.0;
  CHECK_THROWS_AS(synthesize_states(p), ValidationError);
}

TEST_CASE("states csv round trip is order independent") {
  const StateLibrary lib = synthesize_states({});
  std::ostringstream out;
  write_states(lib, out);

  std::istringstream in(out.str());
  const StateLibrary back = load_states(in);
  CHECK(back.hash() == lib.hash());

  std::vector<std::string> rows;
  std::istringstream lines(out.str());
  std::string header, line;
  std::getline(lines, header);
  while (std::getline(lines, line)) rows.push_back(line);
  std::mt19937 rng(7);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::string shuffled = header + "\n";
  for (const auto& r : rows) shuffled += r + "\n";
  std::istringstream in2(shuffled);
  CHECK(load_states(in2).hash() == lib.hash());
}

TEST_CASE("single rest state loads as a library of one") {
  std::string text = std::string(kStatesCsvHeader) + "\n";
  for (int w = 1; w <= 2; ++w)
    for (int k = 0; k < 7; ++k)
      text += "rest,0," + std::to_string(w) + "," + std::to_string(k) + "," + std::to_string(5 * k) + "," +
              (k == 1 ? (w == 1 ? "1" : "-1") : "0") + ",0\n";
  std::istringstream in(text);
  const StateLibrary lib = load_states(in);
  REQUIRE(lib.size() == 1);
  CHECK(lib.states[0].tip_displacement_mm == 0.0);
  CHECK(lib.find("rest").waveguides[1][1].z == -1.0);
  CHECK_THROWS_AS(lib.find("elongation_1"), ValidationError);
}

TEST_CASE("malformed states files report the row") {
  std::istringstream bad(std::string(kStatesCsvHeader) + "\nrest,0,1,0,0,0,0\nrest,zero,1,1,5,1,0\n");
  try {
    load_states(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
  }
  std::istringstream wrong_header("label,x\n");
  CHECK_THROWS_AS(load_states(wrong_header), ParseError);
}
