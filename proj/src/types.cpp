#include "boat/types.hpp"

#include <algorithm>
#include <numeric>

namespace boat {

std::vector<double> cumulative_length(const Polyline& line) {
  std::vector<double> s(line.size(), 0.0);
  for (std::size_t i = 1; i < line.size(); ++i) s[i] = s[i - 1] + distance(line[i - 1], line[i]);
  return s;
}

double polyline_length(const Polyline& line) {
  double total = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) total += distance(line[i - 1], line[i]);
  return total;
}

double closed_length(const Polyline& ring) {
  if (ring.size() < 2) return 0.0;
  return polyline_length(ring) + distance(ring.back(), ring.front());
}

double signed_area(const Polyline& ring) {
  double a = 0.0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) a += cross(ring[i], ring[(i + 1) % n]);
  return 0.5 * a;
}

bool point_in_polygon(const Polyline& ring, Point2 p) {
  bool inside = false;
  for (std::size_t i = 0, n = ring.size(), j = n - 1; i < n; j = i++) {
    const Point2 a = ring[i];
    const Point2 b = ring[j];
    if ((a.z > p.z) != (b.z > p.z)) {
      const double x = a.x + (p.z - a.z) * (b.x - a.x) / (b.z - a.z);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

namespace {

int orientation(Point2 a, Point2 b, Point2 c) {
  const double v = cross(b - a, c - a);
  return (v > 0) - (v < 0);
}

bool on_segment(Point2 a, Point2 b, Point2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.z, b.z) <= p.z &&
         p.z <= std::max(a.z, b.z);
}

}  // namespace

bool segments_intersect(const Segment& s, const Segment& t) {
  const int o1 = orientation(s.a, s.b, t.a);
  const int o2 = orientation(s.a, s.b, t.b);
  const int o3 = orientation(t.a, t.b, s.a);
  const int o4 = orientation(t.a, t.b, s.b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(s.a, s.b, t.a)) return true;
  if (o2 == 0 && on_segment(s.a, s.b, t.b)) return true;
  if (o3 == 0 && on_segment(t.a, t.b, s.a)) return true;
  if (o4 == 0 && on_segment(t.a, t.b, s.b)) return true;
  return false;
}

bool is_simple(const Polyline& ring) {
  const std::size_t n = ring.size();
  if (n < 3) return false;
  struct Edge {
    double xmin, xmax;
    std::size_t i;
  };
  std::vector<Edge> edges(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 a = ring[i];
    const Point2 b = ring[(i + 1) % n];
    edges[i] = {std::min(a.x, b.x), std::max(a.x, b.x), i};
  }
  std::sort(edges.begin(), edges.end(),
            [](const Edge& l, const Edge& r) { return l.xmin < r.xmin || (l.xmin == r.xmin && l.i < r.i); });

  // Sort-and-sweep over x extents; only edges whose x ranges overlap are tested.
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = edges[k].i;
    const Segment si{ring[i], ring[(i + 1) % n]};
    for (std::size_t m = k + 1; m < n && edges[m].xmin <= edges[k].xmax; ++m) {
      const std::size_t j = edges[m].i;
      const std::size_t d = i > j ? i - j : j - i;
      if (d == 1 || d == n - 1) {
        // Adjacent edges share a vertex; they only conflict if they fold back onto each other.
        const std::size_t first = (d == 1) ? std::min(i, j) : std::max(i, j);
        const Point2 p = ring[first];
        const Point2 q = ring[(first + 1) % n];
        const Point2 r = ring[(first + 2) % n];
        if (cross(q - p, r - q) == 0.0 && dot(q - p, r - q) < 0.0) return false;
        continue;
      }
      if (segments_intersect(si, Segment{ring[j], ring[(j + 1) % n]})) return false;
    }
  }
  return true;
}

}  // namespace boat
