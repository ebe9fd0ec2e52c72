#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace boat {

/// Point or vector in the x-z bending plane, in millimeters.
/// x runs along the actuator axis, z is the in-plane bending direction.
struct Point2 {
  double x = 0.0;
  double z = 0.0;

  friend constexpr Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.z + b.z}; }
  friend constexpr Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.z - b.z}; }
  friend constexpr Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.z}; }
  friend constexpr Point2 operator*(Point2 a, double s) { return {s * a.x, s * a.z}; }
  friend constexpr Point2 operator-(Point2 a) { return {-a.x, -a.z}; }
  friend constexpr bool operator==(Point2 a, Point2 b) = default;
};

using Polyline = std::vector<Point2>;

inline constexpr double dot(Point2 a, Point2 b) { return a.x * b.x + a.z * b.z; }
inline constexpr double cross(Point2 a, Point2 b) { return a.x * b.z - a.z * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.z); }
inline double distance(Point2 a, Point2 b) { return norm(b - a); }

inline Point2 normalized(Point2 a) {
  const double n = norm(a);
  return {a.x / n, a.z / n};
}

/// Left-hand normal of a direction (counterclockwise rotation by 90 degrees).
inline constexpr Point2 left_normal(Point2 d) { return {-d.z, d.x}; }

inline constexpr Point2 mirror_z(Point2 p) { return {p.x, -p.z}; }

inline bool is_finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.z); }

struct Segment {
  Point2 a;
  Point2 b;

  double length() const { return distance(a, b); }
};

/// Input rejected before any computation (bad file, bad parameters, infeasible geometry).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Geometry construction failure (self-intersecting offset, oversize pattern, ...).
class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Malformed input file; the message carries the 1-based row number.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t row)
      : ValidationError("row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Cumulative arc length of a polyline, starting at 0.
std::vector<double> cumulative_length(const Polyline& line);

double polyline_length(const Polyline& line);

/// Perimeter of a closed polygon (last vertex connects back to the first).
double closed_length(const Polyline& ring);

/// Signed area of a closed polygon; positive for counterclockwise order.
double signed_area(const Polyline& ring);

bool point_in_polygon(const Polyline& ring, Point2 p);

/// Proper or touching intersection of two closed segments.
bool segments_intersect(const Segment& s, const Segment& t);

/// True if no two non-adjacent edges of the closed polygon touch.
bool is_simple(const Polyline& ring);

}  // namespace boat
