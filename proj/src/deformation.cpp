#include "boat/deformation.hpp"

#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>

#include "boat/csv.hpp"

namespace boat {

namespace {

double simpson_step(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                    double whole, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * eps) return left + right + delta / 15.0;
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double rel_tol) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double eps = rel_tol * std::max(std::abs(whole), 1e-300);
  return simpson_step(f, a, b, fa, fm, fb, whole, eps, 48);
}

// ---------------------------------------------------------------------------
// CubicSpline

CubicSpline::CubicSpline(const Polyline& knots) : knots_(knots) {
  const std::size_t n = knots_.size();
  if (n < 3) throw ValidationError("spline needs at least 3 points, got " + std::to_string(n));
  for (std::size_t i = 1; i < n; ++i) {
    if (knots_[i] == knots_[i - 1])
      throw ValidationError("coincident consecutive points at index " + std::to_string(i));
    if (!(knots_[i].x > knots_[i - 1].x))
      throw ValidationError("x must be strictly increasing (index " + std::to_string(i) + ")");
  }

  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = knots_[i + 1].x - knots_[i].x;
    delta[i] = (knots_[i + 1].z - knots_[i].z) / h[i];
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    a(r, r - 1) = h[i - 1];
    a(r, r) = 2.0 * (h[i - 1] + h[i]);
    a(r, r + 1) = h[i];
    rhs(r) = 6.0 * (delta[i] - delta[i - 1]);
  }
  const auto last = static_cast<Eigen::Index>(n - 1);
  if (n == 3) {
    // Single parabola: constant second derivative.
    a(0, 0) = 1.0;
    a(0, 1) = -1.0;
    a(last, last - 1) = 1.0;
    a(last, last) = -1.0;
  } else {
    // Not-a-knot: third derivative continuous across the second and second-to-last knots.
    a(0, 0) = h[1];
    a(0, 1) = -(h[0] + h[1]);
    a(0, 2) = h[0];
    a(last, last - 2) = h[n - 2];
    a(last, last - 1) = -(h[n - 3] + h[n - 2]);
    a(last, last) = h[n - 3];
  }
  const Eigen::VectorXd m = a.partialPivLu().solve(rhs);
  moments_.assign(m.data(), m.data() + m.size());

  knot_arc_.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) knot_arc_[i + 1] = knot_arc_[i] + piece_arc(i, knots_[i + 1].x);
}

std::size_t CubicSpline::piece(double x) const {
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), x,
                                   [](double v, const Point2& p) { return v < p.x; });
  const auto idx = static_cast<std::size_t>(std::distance(knots_.begin(), it));
  if (idx == 0) return 0;
  return std::min(idx - 1, knots_.size() - 2);
}

double CubicSpline::value(double x) const {
  const std::size_t i = piece(x);
  const double h = knots_[i + 1].x - knots_[i].x;
  const double t = x - knots_[i].x;
  const double u = knots_[i + 1].x - x;
  const double mi = moments_[i];
  const double mj = moments_[i + 1];
  return mi * u * u * u / (6.0 * h) + mj * t * t * t / (6.0 * h) + (knots_[i].z / h - mi * h / 6.0) * u +
         (knots_[i + 1].z / h - mj * h / 6.0) * t;
}

double CubicSpline::slope(double x) const {
  const std::size_t i = piece(x);
  const double h = knots_[i + 1].x - knots_[i].x;
  const double t = x - knots_[i].x;
  const double u = knots_[i + 1].x - x;
  const double mi = moments_[i];
  const double mj = moments_[i + 1];
  return -mi * u * u / (2.0 * h) + mj * t * t / (2.0 * h) + (knots_[i + 1].z - knots_[i].z) / h -
         (mj - mi) * h / 6.0;
}

double CubicSpline::curvature_bound() const {
  double m = 0.0;
  for (double v : moments_) m = std::max(m, std::abs(v));
  return m;
}

double CubicSpline::piece_arc(std::size_t i, double x) const {
  const auto speed = [this](double v) {
    const double s = slope(v);
    return std::sqrt(1.0 + s * s);
  };
  return adaptive_simpson(speed, knots_[i].x, x, 1e-9);
}

double CubicSpline::arc_length_to(double x) const {
  const std::size_t i = piece(x);
  return knot_arc_[i] + piece_arc(i, x);
}

double CubicSpline::x_at_arc_length(double s) const {
  if (s <= 0.0) return knots_.front().x;
  if (s >= knot_arc_.back()) return knots_.back().x;
  const auto it = std::upper_bound(knot_arc_.begin(), knot_arc_.end(), s);
  const std::size_t i = static_cast<std::size_t>(std::distance(knot_arc_.begin(), it)) - 1;
  const double lo = knots_[i].x;
  const double hi = knots_[i + 1].x;
  const double target = s - knot_arc_[i];
  const double guess = lo + (hi - lo) * target / (knot_arc_[i + 1] - knot_arc_[i]);
  const auto f = [&](double x) {
    const double sl = slope(x);
    return std::make_pair(piece_arc(i, x) - target, std::sqrt(1.0 + sl * sl));
  };
  return boost::math::tools::newton_raphson_iterate(f, guess, lo, hi, 50);
}

// ---------------------------------------------------------------------------
// Resampling

Polyline interpolate_centerline(const Polyline& raw, std::size_t n_out) {
  if (raw.size() < 3) throw ValidationError("interpolate_centerline needs at least 3 raw points");
  if (n_out < raw.size()) throw ValidationError("n_out must be at least the raw point count");
  const CubicSpline spline(raw);
  const double total = spline.total_arc_length();
  Polyline out(n_out);
  out.front() = raw.front();
  out.back() = raw.back();
  for (std::size_t k = 1; k + 1 < n_out; ++k) {
    const double s = total * static_cast<double>(k) / static_cast<double>(n_out - 1);
    const double x = spline.x_at_arc_length(s);
    out[k] = {x, spline.value(x)};
  }
  return out;
}

namespace {

Point2 point_at(const Polyline& line, const std::vector<double>& cum, double s) {
  const double snap = 1e-9 * std::max(1.0, cum.back());
  const auto it = std::lower_bound(cum.begin(), cum.end(), s - snap);
  auto j = static_cast<std::size_t>(std::distance(cum.begin(), it));
  if (j < cum.size() && std::abs(cum[j] - s) <= snap) return line[j];
  if (j == 0) return line.front();
  if (j >= cum.size()) return line.back();
  const double seg = cum[j] - cum[j - 1];
  const double u = seg > 0.0 ? (s - cum[j - 1]) / seg : 0.0;
  return line[j - 1] + u * (line[j] - line[j - 1]);
}

}  // namespace

Polyline resample(const Polyline& centerline, double interval) {
  if (!(interval > 0.0)) throw ValidationError("resample interval must be positive");
  if (centerline.size() < 2) throw ValidationError("resample needs at least 2 points");
  const auto cum = cumulative_length(centerline);
  const double total = cum.back();
  const double tol = 1e-9 * std::max(1.0, total);
  if (interval > total + tol) throw ValidationError("resample interval exceeds total arc length");

  Polyline out{centerline.front()};
  for (std::size_t k = 1;; ++k) {
    const double s = static_cast<double>(k) * interval;
    if (s >= total - tol) break;
    out.push_back(point_at(centerline, cum, s));
  }
  out.push_back(centerline.back());
  return out;
}

Polyline resample_count(const Polyline& line, std::size_t count) {
  if (count < 2) throw ValidationError("resample_count needs at least 2 output points");
  if (line.size() < 2) throw ValidationError("resample_count needs at least 2 input points");
  const auto cum = cumulative_length(line);
  Polyline out(count);
  out.front() = line.front();
  out.back() = line.back();
  for (std::size_t k = 1; k + 1 < count; ++k)
    out[k] = point_at(line, cum, cum.back() * static_cast<double>(k) / static_cast<double>(count - 1));
  return out;
}

Polyline select_representatives(const Polyline& raw, std::size_t count, std::size_t oversample) {
  const Polyline dense = interpolate_centerline(raw, std::max(count, oversample * raw.size()));
  return resample_count(dense, count);
}

Polyline discretize_curve(const Polyline& points, double max_chord_error, double max_step) {
  if (!(max_chord_error > 0.0) || !(max_step > 0.0)) throw ValidationError("discretization tolerances must be positive");
  if (points.size() == 2) {
    const double len = distance(points[0], points[1]);
    const auto n = static_cast<std::size_t>(std::ceil(len / max_step));
    return resample_count(points, std::max<std::size_t>(n, 1) + 1);
  }
  const CubicSpline spline(points);
  const double total = spline.total_arc_length();
  double step = max_step;
  const double kappa = spline.curvature_bound();
  // Sagitta of a chord of length h on a circle of curvature k is about k h^2 / 8.
  if (kappa > 0.0) step = std::min(step, std::sqrt(8.0 * max_chord_error / kappa));
  const auto segments = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(total / step)));
  Polyline out(segments + 1);
  out.front() = points.front();
  out.back() = points.back();
  for (std::size_t k = 1; k < segments; ++k) {
    const double x = spline.x_at_arc_length(total * static_cast<double>(k) / static_cast<double>(segments));
    out[k] = {x, spline.value(x)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labels and libraries

int StateLabel::order_key() const {
  switch (kind) {
    case StateKind::compression: return -step;
    case StateKind::elongation: return step;
    case StateKind::rest: break;
  }
  return 0;
}

std::string StateLabel::str() const {
  switch (kind) {
    case StateKind::compression: return "compression_" + std::to_string(step);
    case StateKind::elongation: return "elongation_" + std::to_string(step);
    case StateKind::rest: break;
  }
  return "rest";
}

StateLabel StateLabel::parse(const std::string& text) {
  if (text == "rest") return {StateKind::rest, 0};
  const auto parse_step = [&](std::string_view prefix, StateKind kind) -> StateLabel {
    const std::string_view rest = std::string_view(text).substr(prefix.size());
    int k = 0;
    const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), k);
    if (ec != std::errc{} || ptr != rest.data() + rest.size() || k < 1)
      throw ValidationError("invalid state label '" + text + "'");
    return {kind, k};
  };
  if (text.rfind("compression_", 0) == 0) return parse_step("compression_", StateKind::compression);
  if (text.rfind("elongation_", 0) == 0) return parse_step("elongation_", StateKind::elongation);
  throw ValidationError("invalid state label '" + text + "'");
}

const DeformationState& StateLibrary::find(const std::string& label) const {
  for (const auto& s : states)
    if (s.label.str() == label) return s;
  throw ValidationError("state '" + label + "' not in library");
}

void StateLibrary::validate(bool strict) const {
  if (states.empty()) throw ValidationError("state library is empty");
  if (strict && states.size() != 15)
    throw ValidationError("strict library must hold 15 states, got " + std::to_string(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& s = states[i];
    for (std::size_t w = 0; w < 2; ++w) {
      const auto& pts = s.waveguides[w];
      if (pts.size() < 3)
        throw ValidationError("state " + s.label.str() + " waveguide " + std::to_string(w + 1) + " has too few points");
      for (std::size_t k = 1; k < pts.size(); ++k)
        if (!(pts[k].x > pts[k - 1].x))
          throw ValidationError("state " + s.label.str() + " waveguide " + std::to_string(w + 1) + ": x not increasing");
    }
    if (strict && std::abs(s.pressure_kpa) > 50.0)
      throw ValidationError("state " + s.label.str() + " pressure outside [-50, 50] kPa");
    if (i > 0) {
      const auto& p = states[i - 1];
      if (!(s.tip_displacement_mm > p.tip_displacement_mm))
        throw ValidationError("tip displacement not strictly increasing at state " + s.label.str());
      if (!(s.label.order_key() > p.label.order_key()))
        throw ValidationError("label order disagrees with tip displacement order at state " + s.label.str());
    }
  }
}

std::string StateLibrary::hash() const {
  ContentHash h;
  h.add(sample_interval_mm);
  for (const auto& s : states) {
    h.add(s.label.str()).add(s.pressure_kpa).add(s.tip_displacement_mm);
    for (const auto& line : s.waveguides) {
      h.add(static_cast<std::int64_t>(line.size()));
      for (const auto& p : line) h.add(p.x).add(p.z);
    }
  }
  return h.hex();
}

StateLibrary load_states(std::istream& in) {
  struct PointRow {
    int index;
    Point2 p;
    std::size_t row;
  };
  struct Pending {
    StateLabel label;
    double pressure;
    double tip;
    std::size_t first_row;
    std::array<std::vector<PointRow>, 2> waveguides;
  };

  CsvReader reader(in);
  reader.expect_header(kStatesCsvHeader);
  std::map<std::string, Pending> pending;
  std::vector<std::string> order;
  while (auto row = reader.next()) {
    const std::size_t r = reader.row();
    if (row->size() != 7)
      throw ParseError("expected 7 columns, got " + std::to_string(row->size()), r);
    const std::string& name = (*row)[0];
    StateLabel label;
    try {
      label = StateLabel::parse(name);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), r);
    }
    const double pressure = parse_double((*row)[1], r, "pressure_kpa");
    const int wg = parse_int((*row)[2], r, "waveguide_id");
    const int idx = parse_int((*row)[3], r, "point_index");
    const double x = parse_double((*row)[4], r, "x_mm");
    const double z = parse_double((*row)[5], r, "z_mm");
    const double tip = parse_double((*row)[6], r, "tip_displacement_mm");
    if (wg != 1 && wg != 2) throw ParseError("waveguide_id must be 1 or 2", r);

    auto [it, inserted] = pending.try_emplace(name, Pending{label, pressure, tip, r, {}});
    if (inserted) {
      order.push_back(name);
    } else if (it->second.pressure != pressure || it->second.tip != tip) {
      throw ParseError("duplicate state label '" + name + "' with conflicting pressure or tip displacement", r);
    }
    auto& pts = it->second.waveguides[static_cast<std::size_t>(wg - 1)];
    for (const auto& q : pts)
      if (q.index == idx) throw ParseError("duplicate point " + std::to_string(idx) + " for state '" + name + "'", r);
    pts.push_back({idx, {x, z}, r});
  }

  StateLibrary lib;
  for (const auto& name : order) {
    auto& p = pending.at(name);
    DeformationState s{p.label, p.pressure, {}, p.tip};
    for (std::size_t w = 0; w < 2; ++w) {
      auto& pts = p.waveguides[w];
      if (pts.empty())
        throw ParseError("state '" + name + "' is missing waveguide " + std::to_string(w + 1), p.first_row);
      std::sort(pts.begin(), pts.end(), [](const PointRow& a, const PointRow& b) { return a.index < b.index; });
      if (pts.size() < 7)
        throw ParseError("state '" + name + "' waveguide " + std::to_string(w + 1) + " has fewer than 7 points",
                         pts.front().row);
      for (std::size_t k = 1; k < pts.size(); ++k)
        if (!(pts[k].p.x > pts[k - 1].p.x))
          throw ParseError("non-monotone x in state '" + name + "' waveguide " + std::to_string(w + 1), pts[k].row);
      for (const auto& q : pts) s.waveguides[w].push_back(q.p);
    }
    lib.states.push_back(std::move(s));
  }
  std::stable_sort(lib.states.begin(), lib.states.end(), [](const DeformationState& a, const DeformationState& b) {
    return a.tip_displacement_mm < b.tip_displacement_mm;
  });
  lib.validate();
  return lib;
}

StateLibrary load_states_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open states file '" + path + "'");
  return load_states(in);
}

void write_states(const StateLibrary& library, std::ostream& out) {
  out << kStatesCsvHeader << '\n';
  for (const auto& s : library.states) {
    for (std::size_t w = 0; w < 2; ++w) {
      for (std::size_t k = 0; k < s.waveguides[w].size(); ++k) {
        const Point2 p = s.waveguides[w][k];
        out << s.label.str() << ',' << format_double(s.pressure_kpa) << ',' << (w + 1) << ',' << k << ','
            << format_double(p.x) << ',' << format_double(p.z) << ',' << format_double(s.tip_displacement_mm) << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic states

namespace {

struct EllipseShape {
  double a;  // semi-axis along x
  double b;  // semi-axis along z
};

EllipseShape ellipse_for(double chord, double bow, double aspect) {
  const double half = 0.5 * chord;
  const double a = (half * half + bow * bow / (aspect * aspect)) * aspect / (2.0 * bow);
  return {a, aspect * a};
}

}  // namespace

double EllipticalArc::z(double x) const {
  if (bow == 0.0) return 0.0;
  const auto e = ellipse_for(chord, bow, aspect);
  const double u = (x - 0.5 * chord) / e.a;
  const double u2 = std::min(u * u, 1.0);
  return bow - e.b * u2 / (1.0 + std::sqrt(1.0 - u2));
}

double EllipticalArc::slope(double x) const {
  if (bow == 0.0) return 0.0;
  const auto e = ellipse_for(chord, bow, aspect);
  const double u = (x - 0.5 * chord) / e.a;
  return -(e.b / e.a) * u / std::sqrt(std::max(1.0 - u * u, 1e-300));
}

double EllipticalArc::arc_length() const {
  if (bow == 0.0) return chord;
  // Parametric form x = chord/2 + a sin(t), z = bow - b + b cos(t) keeps the integrand smooth.
  const auto e = ellipse_for(chord, bow, aspect);
  const double t0 = std::asin(std::min(1.0, 0.5 * chord / e.a));
  return 2.0 * adaptive_simpson(
                   [&e](double t) {
                     const double c = std::cos(t);
                     const double s = std::sin(t);
                     return std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s);
                   },
                   0.0, t0, 1e-12);
}

double chord_for_arc_length(double arc_span, double bow, double aspect) {
  if (!(arc_span > 0.0) || bow < 0.0 || !(aspect > 0.0)) throw ValidationError("invalid arc parameters");
  if (bow == 0.0) return arc_span;
  // The family spans chords from the half-ellipse (chord = 2 bow / aspect) upward.
  const double c_min = 2.0 * bow / aspect;
  const auto residual = [&](double c) { return EllipticalArc{c, bow, aspect}.arc_length() - arc_span; };
  if (c_min >= arc_span || residual(c_min) > 0.0)
    throw ValidationError("bow " + std::to_string(bow) + " mm is too large for arc span " + std::to_string(arc_span));
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::toms748_solve(
      residual, c_min, arc_span, [](double lo, double hi) { return hi - lo < 1e-13; }, iters);
  return 0.5 * (r.first + r.second);
}

StateLibrary synthesize_states(const SynthesisParams& p) {
  if (p.n_states < 1 || p.n_states % 2 == 0) throw ValidationError("n_states must be odd and positive");
  if (p.bow_min_mm < 0.0 || !(p.bow_min_mm < p.rest_bow_mm) || !(p.rest_bow_mm < p.bow_max_mm))
    throw ValidationError("bows must satisfy 0 <= min < rest < max");
  if (p.points_per_waveguide < 3) throw ValidationError("need at least 3 points per waveguide");

  const int mid = (p.n_states - 1) / 2;
  const double rest_chord = chord_for_arc_length(p.arc_span_mm, p.rest_bow_mm, p.aspect);

  StateLibrary lib;
  lib.states.reserve(static_cast<std::size_t>(p.n_states));
  for (int i = 0; i < p.n_states; ++i) {
    double bow = p.rest_bow_mm;
    StateLabel label{StateKind::rest, 0};
    if (i < mid) {
      bow = p.bow_min_mm + (p.rest_bow_mm - p.bow_min_mm) * static_cast<double>(i) / mid;
      label = {StateKind::compression, mid - i};
    } else if (i > mid) {
      bow = p.rest_bow_mm + (p.bow_max_mm - p.rest_bow_mm) * static_cast<double>(i - mid) / mid;
      label = {StateKind::elongation, i - mid};
    }
    const double chord = chord_for_arc_length(p.arc_span_mm, bow, p.aspect);
    const EllipticalArc arc{chord, bow, p.aspect};

    DeformationState s;
    s.label = label;
    s.pressure_kpa = mid == 0 ? 0.0 : p.pressure_span_kpa * static_cast<double>(i - mid) / mid;
    s.tip_displacement_mm = i == mid ? 0.0 : rest_chord - chord;
    const int m = p.points_per_waveguide;
    for (int k = 0; k < m; ++k) {
      const double x = k == m - 1 ? chord : chord * static_cast<double>(k) / (m - 1);
      const double z = (k == 0 || k == m - 1) ? 0.0 : arc.z(x);
      s.waveguides[0].push_back({x, z});
      s.waveguides[1].push_back({x, -z});
    }
    lib.states.push_back(std::move(s));
  }
  lib.validate();
  return lib;
}

}  // namespace boat
