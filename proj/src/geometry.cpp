#include "boat/geometry.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "boat/csv.hpp"

namespace boat {

double PatternSpec::footprint() const {
  if (cavity_count <= 0) return 0.0;
  return cavity_count * width + (cavity_count - 1) * spacing;
}

std::string PatternSpec::str() const {
  std::ostringstream os;
  os << cavity_count << ',' << format_double(width) << ',' << format_double(depth) << ',' << format_double(spacing);
  return os.str();
}

void PatternSpec::validate() const {
  if (cavity_count < 0) throw ValidationError("cavity count must be non-negative");
  if (cavity_count == 0) return;
  if (!(width > 0.0) || !(depth > 0.0) || !(spacing > 0.0))
    throw ValidationError("cavity width, depth and spacing must be positive (" + str() + ")");
}

std::size_t Scene::segment_count() const {
  std::size_t n = 0;
  for (const auto& o : outlines) n += o.size();
  return n;
}

void Scene::validate() const {
  if (outlines.empty()) throw ValidationError("scene has no waveguide outlines");
  if (!(exterior_index > 0.0) || !(core_index > exterior_index))
    throw ValidationError("core index must exceed exterior index (guiding condition)");
  for (std::size_t k = 0; k < outlines.size(); ++k) {
    const auto& ring = outlines[k];
    if (ring.size() < 3) throw ValidationError("outline " + std::to_string(k) + " is not a closed polygon");
    for (std::size_t i = 0; i < ring.size(); ++i) {
      if (!is_finite(ring[i])) throw ValidationError("outline " + std::to_string(k) + " has a non-finite vertex");
      if (distance(ring[i], ring[(i + 1) % ring.size()]) <= 1e-12)
        throw ValidationError("outline " + std::to_string(k) + " has a zero-length segment at vertex " +
                              std::to_string(i));
    }
    if (!is_simple(ring)) throw ValidationError("outline " + std::to_string(k) + " self-intersects");
  }
  if (!is_finite(emitter.position) || std::abs(norm(emitter.axis) - 1.0) > 1e-9)
    throw ValidationError("emitter pose is invalid");
}

std::string Scene::hash() const {
  ContentHash h;
  for (const auto& ring : outlines) {
    h.add(static_cast<std::int64_t>(ring.size()));
    for (const auto& p : ring) h.add(p.x).add(p.z);
  }
  h.add(emitter.position.x).add(emitter.position.z).add(emitter.axis.x).add(emitter.axis.z);
  h.add(receiver.a.x).add(receiver.a.z).add(receiver.b.x).add(receiver.b.z);
  h.add(core_index).add(exterior_index);
  return h.hex();
}

// ---------------------------------------------------------------------------

Polyline build_waveguide_outline(const Polyline& centerline, double thickness) {
  const std::size_t n = centerline.size();
  if (n < 2) throw GeometryError("centerline needs at least 2 points");
  if (!(thickness > 0.0)) throw GeometryError("thickness must be positive");
  std::vector<Point2> dirs(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!is_finite(centerline[i]) || !is_finite(centerline[i + 1])) throw GeometryError("non-finite centerline point");
    const double len = distance(centerline[i], centerline[i + 1]);
    if (!(len > 0.0))
      throw GeometryError("centerline arc length must strictly increase (repeated point at index " +
                          std::to_string(i + 1) + ")");
    dirs[i] = (1.0 / len) * (centerline[i + 1] - centerline[i]);
  }

  const auto cum = cumulative_length(centerline);
  const double half = 0.5 * thickness;
  std::vector<Point2> normals(n);
  normals.front() = left_normal(dirs.front());
  normals.back() = left_normal(dirs.back());
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Point2 a = centerline[i - 1];
    const Point2 b = centerline[i];
    const Point2 c = centerline[i + 1];
    const double twice_area = std::abs(cross(b - a, c - a));
    const Point2 bisector = dirs[i - 1] + dirs[i];
    const double radius = twice_area > 0.0 ? distance(a, b) * distance(b, c) * distance(a, c) / (2.0 * twice_area)
                                           : std::numeric_limits<double>::infinity();
    if (radius < half || norm(bisector) < 1e-12) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "offset self-intersects: curvature radius %.4g mm < half-thickness %.4g mm in arc-length "
                    "interval [%.4f, %.4f] mm",
                    radius, half, cum[i - 1], cum[i + 1]);
      throw GeometryError(buf);
    }
    normals[i] = left_normal(normalized(bisector));
  }

  Polyline ring;
  ring.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) ring.push_back(centerline[i] - half * normals[i]);
  for (std::size_t i = n; i-- > 0;) ring.push_back(centerline[i] + half * normals[i]);
  if (!is_simple(ring)) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "offset self-intersects in arc-length interval [0, %.4f] mm", cum.back());
    throw GeometryError(buf);
  }
  return ring;
}

namespace {

struct SurfaceHit {
  Point2 point;
  std::size_t edge = 0;
  double along = 0.0;  // fraction along the edge
  double distance = 0.0;
};

std::optional<SurfaceHit> cast_to_ring(const Polyline& ring, Point2 origin, Point2 dir) {
  std::optional<SurfaceHit> best;
  const std::size_t n = ring.size();
  for (std::size_t e = 0; e < n; ++e) {
    const Point2 a = ring[e];
    const Point2 edge = ring[(e + 1) % n] - a;
    const double denom = cross(dir, edge);
    if (std::abs(denom) < 1e-15) continue;
    const Point2 ao = a - origin;
    const double t = cross(ao, edge) / denom;
    const double u = cross(ao, dir) / denom;
    if (t <= 1e-12 || u < 0.0 || u >= 1.0) continue;
    if (!best || t < best->distance) best = SurfaceHit{origin + t * dir, e, u, t};
  }
  return best;
}

struct Cut {
  double position;  // edge index + fraction, increasing along the ring
  Point2 surface;
  Point2 floor;
};

}  // namespace

Polyline carve_pattern(const Polyline& outline, const Polyline& centerline, const PatternSpec& spec, int side) {
  spec.validate();
  if (spec.cavity_count == 0) return outline;
  if (side != 1 && side != -1) throw GeometryError("surface side must be +1 or -1");
  if (outline.size() < 3 || centerline.size() < 2) throw GeometryError("invalid outline or centerline");

  const auto cum = cumulative_length(centerline);
  const double length = cum.back();
  const double footprint = spec.footprint();
  if (footprint > length + 1e-12) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "pattern footprint %.4g mm exceeds centerline length %.4g mm", footprint, length);
    throw GeometryError(buf);
  }

  const double orientation = signed_area(outline) >= 0.0 ? 1.0 : -1.0;
  const std::size_t n = outline.size();

  const auto make_cut = [&](double s) {
    auto it = std::upper_bound(cum.begin(), cum.end(), s);
    std::size_t j = it == cum.begin() ? 0 : static_cast<std::size_t>(std::distance(cum.begin(), it)) - 1;
    j = std::min(j, centerline.size() - 2);
    const Point2 a = centerline[j];
    const Point2 b = centerline[j + 1];
    const double seg = cum[j + 1] - cum[j];
    const Point2 c = a + ((s - cum[j]) / seg) * (b - a);
    const Point2 dir = static_cast<double>(side) * left_normal(normalized(b - a));
    const auto hit = cast_to_ring(outline, c, dir);
    if (!hit) throw GeometryError("cavity at arc length " + format_double(s) + " mm does not meet the surface");
    if (spec.depth >= hit->distance) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "cavity depth %.4g mm >= local half-thickness %.4g mm at arc length %.4f mm",
                    spec.depth, hit->distance, s);
      throw GeometryError(buf);
    }
    const Point2 edge = outline[(hit->edge + 1) % n] - outline[hit->edge];
    // Outward normal of a counterclockwise ring is the right-hand normal.
    const Point2 inward = -orientation * normalized(Point2{edge.z, -edge.x});
    return Cut{static_cast<double>(hit->edge) + hit->along, hit->point, hit->point + spec.depth * inward};
  };

  std::vector<std::pair<Cut, Cut>> notches;
  const double start = 0.5 * (length - footprint);
  for (int k = 0; k < spec.cavity_count; ++k) {
    const double s0 = start + k * (spec.width + spec.spacing);
    Cut a = make_cut(s0);
    Cut b = make_cut(s0 + spec.width);
    if (b.position < a.position) std::swap(a, b);
    notches.emplace_back(a, b);
  }
  std::sort(notches.begin(), notches.end(),
            [](const auto& l, const auto& r) { return l.first.position < r.first.position; });
  for (std::size_t k = 1; k < notches.size(); ++k)
    if (notches[k].first.position <= notches[k - 1].second.position)
      throw GeometryError("cavities overlap on the surface for pattern " + spec.str());

  const auto inside_notch = [&](double pos) {
    for (const auto& [a, b] : notches)
      if (a.position < pos && pos < b.position) return true;
    return false;
  };

  Polyline out;
  out.reserve(n + 4 * notches.size());
  const auto emit = [&](Point2 p) {
    if (out.empty() || distance(out.back(), p) > 1e-12) out.push_back(p);
  };
  std::size_t next = 0;
  for (std::size_t e = 0; e < n; ++e) {
    if (!inside_notch(static_cast<double>(e))) emit(outline[e]);
    while (next < notches.size() && notches[next].first.position < static_cast<double>(e + 1)) {
      const auto& [a, b] = notches[next];
      emit(a.surface);
      emit(a.floor);
      emit(b.floor);
      emit(b.surface);
      ++next;
    }
  }
  while (out.size() > 1 && distance(out.back(), out.front()) <= 1e-12) out.pop_back();
  if (!is_simple(out)) throw GeometryError("carved outline self-intersects for pattern " + spec.str());
  return out;
}

int surface_side(std::span<const Polyline> centerlines, std::size_t index, CavitySide which) {
  if (index >= centerlines.size()) throw GeometryError("centerline index out of range");
  const Polyline& c = centerlines[index];
  if (c.size() < 2) throw GeometryError("centerline needs at least 2 points");
  int outer = 1;
  if (centerlines.size() == 1) {
    // Outer surface is the convex one, opposite the center of curvature.
    double turning = 0.0;
    for (std::size_t i = 1; i + 1 < c.size(); ++i) turning += cross(c[i] - c[i - 1], c[i + 1] - c[i]);
    outer = turning > 0.0 ? -1 : 1;
  } else {
    Point2 start{0.0, 0.0};
    Point2 end{0.0, 0.0};
    for (const auto& line : centerlines) {
      start = start + line.front();
      end = end + line.back();
    }
    const double inv = 1.0 / static_cast<double>(centerlines.size());
    start = inv * start;
    end = inv * end;
    const Point2 axis = end - start;
    double offset = 0.0;
    for (const auto& p : c) offset += cross(axis, p - start);
    const double heading = dot(c.back() - c.front(), axis) >= 0.0 ? 1.0 : -1.0;
    if (std::abs(offset) <= 1e-12 * norm(axis) * static_cast<double>(c.size())) {
      outer = index == 0 ? 1 : -1;
    } else {
      outer = (offset > 0.0) == (heading > 0.0) ? 1 : -1;
    }
  }
  return which == CavitySide::outer ? outer : -outer;
}

Optics place_optics(std::span<const Polyline> outlines, std::span<const Polyline> centerlines, double standoff,
                    double junction_tol) {
  if (centerlines.empty() || centerlines.size() > 2) throw GeometryError("place_optics expects one or two centerlines");
  if (standoff < 0.0) throw GeometryError("standoff must be non-negative");
  for (const auto& c : centerlines)
    if (c.size() < 2) throw GeometryError("centerline needs at least 2 points");

  Point2 entry = centerlines[0].front();
  Point2 exit = centerlines[0].back();
  Point2 entry_dir = normalized(centerlines[0][1] - centerlines[0][0]);
  Point2 exit_dir = normalized(centerlines[0].back() - centerlines[0][centerlines[0].size() - 2]);
  if (centerlines.size() == 2) {
    const auto& a = centerlines[0];
    const auto& b = centerlines[1];
    if (distance(a.front(), b.front()) > junction_tol || distance(a.back(), b.back()) > junction_tol)
      throw GeometryError("junctions not identifiable: centerline ends are more than " + format_double(junction_tol) +
                          " mm apart");
    entry = 0.5 * (a.front() + b.front());
    exit = 0.5 * (a.back() + b.back());
    const Point2 e = normalized(a[1] - a[0]) + normalized(b[1] - b[0]);
    const Point2 x = normalized(a.back() - a[a.size() - 2]) + normalized(b.back() - b[b.size() - 2]);
    if (norm(e) < 1e-9 || norm(x) < 1e-9) throw GeometryError("junction tangents cancel; optical axis undefined");
    entry_dir = normalized(e);
    exit_dir = normalized(x);
  }

  Optics optics;
  optics.emitter = {entry + standoff * entry_dir, entry_dir};

  const Point2 center = exit - standoff * exit_dir;
  const Point2 across = left_normal(exit_dir);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& ring : outlines) {
    for (std::size_t e = 0; e < ring.size(); ++e) {
      const Point2 a = ring[e];
      const Point2 edge = ring[(e + 1) % ring.size()] - a;
      const double denom = cross(across, edge);
      if (std::abs(denom) < 1e-15) continue;
      const Point2 ac = a - center;
      const double u = cross(ac, across) / denom;
      if (u < 0.0 || u > 1.0) continue;
      const double lambda = cross(ac, edge) / denom;
      lo = std::min(lo, lambda);
      hi = std::max(hi, lambda);
    }
  }
  if (!(lo <= hi)) throw GeometryError("receiver line does not cross any waveguide");
  optics.receiver = {center + lo * across, center + hi * across};
  return optics;
}

Scene mirror_scene(const Scene& scene) {
  Scene m = scene;
  for (auto& ring : m.outlines) {
    for (auto& p : ring) p = mirror_z(p);
    std::reverse(ring.begin(), ring.end());
  }
  m.emitter = {mirror_z(scene.emitter.position), mirror_z(scene.emitter.axis)};
  m.receiver = {mirror_z(scene.receiver.a), mirror_z(scene.receiver.b)};
  return m;
}

void write_scene_json(const Scene& scene, std::ostream& out) {
  using nlohmann::json;
  json j;
  j["units"] = "mm";
  json outlines = json::array();
  for (const auto& ring : scene.outlines) {
    json pts = json::array();
    for (const auto& p : ring) pts.push_back({p.x, p.z});
    outlines.push_back(pts);
  }
  j["boundary"] = outlines;
  j["emitter"] = {{"position", {scene.emitter.position.x, scene.emitter.position.z}},
                  {"axis", {scene.emitter.axis.x, scene.emitter.axis.z}}};
  j["receiver"] = {{scene.receiver.a.x, scene.receiver.a.z}, {scene.receiver.b.x, scene.receiver.b.z}};
  j["core_index"] = scene.core_index;
  j["exterior_index"] = scene.exterior_index;
  j["scene_hash"] = scene.hash();
  out << j.dump(2) << '\n';
}

void write_scene_svg(const Scene& scene, std::span<const RayPath> rays, std::ostream& out) {
  constexpr double px_per_mm = 20.0;  // 1 px = 0.05 mm
  double xmin = scene.emitter.position.x, xmax = xmin;
  double zmin = scene.emitter.position.z, zmax = zmin;
  const auto grow = [&](Point2 p) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    zmin = std::min(zmin, p.z);
    zmax = std::max(zmax, p.z);
  };
  for (const auto& ring : scene.outlines)
    for (const auto& p : ring) grow(p);
  grow(scene.receiver.a);
  grow(scene.receiver.b);
  xmin -= 1.0;
  xmax += 1.0;
  zmin -= 1.0;
  zmax += 1.0;
  const auto px = [&](Point2 p) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f", (p.x - xmin) * px_per_mm, (zmax - p.z) * px_per_mm);
    return std::string(buf);
  };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << (xmax - xmin) * px_per_mm << "\" height=\""
      << (zmax - zmin) * px_per_mm << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& ring : scene.outlines) {
    out << "<polygon fill=\"#cfe3f7\" stroke=\"#1f4e79\" stroke-width=\"1\" points=\"";
    for (const auto& p : ring) out << px(p) << ' ';
    out << "\"/>\n";
  }
  for (const auto& ray : rays) {
    if (ray.points.size() < 2) continue;
    const int shade = static_cast<int>(std::lround(200.0 * (1.0 - std::clamp(ray.power, 0.0, 1.0))));
    char color[16];
    std::snprintf(color, sizeof(color), "#%02x%02x%02x", 255, 160 + shade / 4, shade);
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"0.6\" points=\"";
    for (const auto& p : ray.points) out << px(p) << ' ';
    out << "\"/>\n";
  }
  out << "<line stroke=\"red\" stroke-width=\"3\" x1=\"" << (scene.receiver.a.x - xmin) * px_per_mm << "\" y1=\""
      << (zmax - scene.receiver.a.z) * px_per_mm << "\" x2=\"" << (scene.receiver.b.x - xmin) * px_per_mm
      << "\" y2=\"" << (zmax - scene.receiver.b.z) * px_per_mm << "\"/>\n";
  out << "<circle fill=\"black\" r=\"4\" cx=\"" << (scene.emitter.position.x - xmin) * px_per_mm << "\" cy=\""
      << (zmax - scene.emitter.position.z) * px_per_mm << "\"/>\n";
  out << "</svg>\n";
}

}  // namespace boat
