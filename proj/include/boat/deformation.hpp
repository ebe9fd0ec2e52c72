#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "boat/types.hpp"

namespace boat {

/// Adaptive Simpson quadrature on [a, b] with relative tolerance `rel_tol`.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double rel_tol = 1e-9);

/// Cubic interpolating spline z(x) with not-a-knot end conditions.
///
/// Reproduces polynomials up to degree three exactly. Knots must have strictly
/// increasing x. With three knots the spline degenerates to the interpolating parabola.
class CubicSpline {
 public:
  explicit CubicSpline(const Polyline& knots);

  double value(double x) const;
  double slope(double x) const;
  double curvature_bound() const;

  /// Arc length from the first knot to x.
  double arc_length_to(double x) const;
  double total_arc_length() const { return knot_arc_.back(); }

  /// Inverse of arc_length_to; s is clamped to [0, total_arc_length()].
  double x_at_arc_length(double s) const;

  const Polyline& knots() const { return knots_; }

 private:
  std::size_t piece(double x) const;
  double piece_arc(std::size_t i, double x) const;

  Polyline knots_;
  std::vector<double> moments_;  // second derivatives at knots
  std::vector<double> knot_arc_;
};

/// n_out points on the interpolating spline through `raw`, equally spaced in arc length.
/// Requires >= 3 raw points with strictly increasing x and n_out >= raw.size().
Polyline interpolate_centerline(const Polyline& raw, std::size_t n_out);

/// Points at arc-length multiples of `interval`, first and last point always kept.
Polyline resample(const Polyline& centerline, double interval);

/// `count` points equally spaced in arc length along a polyline (linear in between).
Polyline resample_count(const Polyline& line, std::size_t count);

/// Densify the spline through `raw` by `oversample`x, then pick `count`
/// equally arc-spaced representative points from the dense curve.
Polyline select_representatives(const Polyline& raw, std::size_t count, std::size_t oversample = 10);

/// Discretize the spline through `points` into a polyline whose chords deviate
/// from the curve by at most `max_chord_error` and are no longer than `max_step`.
Polyline discretize_curve(const Polyline& points, double max_chord_error = 0.1, double max_step = 0.5);

enum class StateKind { compression, rest, elongation };

struct StateLabel {
  StateKind kind = StateKind::rest;
  int step = 0;  // k >= 1 for compression_k / elongation_k, 0 for rest

  /// Signed ordering key: -k for compression, 0 rest, +k elongation.
  int order_key() const;
  std::string str() const;
  static StateLabel parse(const std::string& text);
  friend bool operator==(const StateLabel&, const StateLabel&) = default;
};

/// One snapshot of both waveguide centerlines (tracked points) at an actuation level.
struct DeformationState {
  StateLabel label;
  double pressure_kpa = 0.0;
  std::array<Polyline, 2> waveguides;
  double tip_displacement_mm = 0.0;
};

/// Deformation states ordered from maximum compression to maximum elongation.
struct StateLibrary {
  std::vector<DeformationState> states;
  double sample_interval_mm = 0.5;

  std::size_t size() const { return states.size(); }
  const DeformationState& find(const std::string& label) const;

  /// Throws ValidationError if ordering or point invariants are violated.
  void validate(bool strict = false) const;

  /// Content hash over labels, pressures, tip displacements and raw points.
  std::string hash() const;
};

inline constexpr const char* kStatesCsvHeader =
    "state_label,pressure_kpa,waveguide_id,point_index,x_mm,z_mm,tip_displacement_mm";

StateLibrary load_states(std::istream& in);
StateLibrary load_states_file(const std::string& path);
void write_states(const StateLibrary& library, std::ostream& out);

struct SynthesisParams {
  double arc_span_mm = 50.0;  // arc length of each waveguide centerline
  double rest_bow_mm = 2.5;
  double bow_min_mm = 0.0;  // bow at maximum compression
  double bow_max_mm = 5.0;  // bow at maximum elongation
  int n_states = 15;
  double aspect = 0.5;  // ellipse semi-axis ratio (z over x)
  int points_per_waveguide = 7;
  double pressure_span_kpa = 50.0;
};

/// Elliptical arc through (0,0) and (chord,0) with peak height `bow`.
struct EllipticalArc {
  double chord = 0.0;
  double bow = 0.0;
  double aspect = 0.5;

  double z(double x) const;
  double slope(double x) const;
  double arc_length() const;
};

/// Chord whose elliptical arc with the given bow has arc length `arc_span`.
double chord_for_arc_length(double arc_span, double bow, double aspect);

/// Twin elliptical-arc states; bow grows from compression to elongation,
/// waveguide 2 is the z-mirror of waveguide 1.
StateLibrary synthesize_states(const SynthesisParams& params);

}  // namespace boat
