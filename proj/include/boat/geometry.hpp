#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "boat/types.hpp"

namespace boat {

/// Rectangular surface cavities cut into a waveguide.
struct PatternSpec {
  int cavity_count = 0;
  double width = 0.0;    // mm, along the surface
  double depth = 0.0;    // mm, into the core
  double spacing = 0.0;  // mm, gap between adjacent cavities

  double footprint() const;
  std::string str() const;
  void validate() const;
  friend bool operator==(const PatternSpec&, const PatternSpec&) = default;
};

/// Which waveguide surface receives the cavities.
enum class CavitySide { outer, inner };

struct Emitter {
  Point2 position;
  Point2 axis{1.0, 0.0};
};

/// 2D optical scene: closed waveguide outlines embedded in a uniform exterior medium.
struct Scene {
  std::vector<Polyline> outlines;
  Emitter emitter;
  Segment receiver;
  double core_index = 1.43;
  double exterior_index = 1.0;

  /// Throws ValidationError on open or self-intersecting outlines, zero-length
  /// boundary segments or a non-guiding index pair.
  void validate() const;

  std::size_t segment_count() const;
  std::string hash() const;
};

/// Offsets a centerline by +/- thickness/2 along vertex normals and closes it
/// with flat end caps. Vertices run counterclockwise: the right-hand side from
/// first to last point, then the left-hand side back.
Polyline build_waveguide_outline(const Polyline& centerline, double thickness);

/// Cuts spec.cavity_count rectangular notches into one surface of `outline`.
/// `side` is +1 for the surface on the left of the centerline direction, -1 for
/// the right. The group is centered at the centerline's arc-length midpoint.
Polyline carve_pattern(const Polyline& outline, const Polyline& centerline, const PatternSpec& spec, int side);

/// Sign (+1 left, -1 right) of the surface of `centerlines[index]` that is
/// outer (away from the twin axis) or inner.
int surface_side(std::span<const Polyline> centerlines, std::size_t index, CavitySide which);

struct Optics {
  Emitter emitter;
  Segment receiver;
};

/// Emitter `standoff` mm inside the entry junction along the mean entry tangent,
/// receiver across all outlines `standoff` mm before the exit junction.
/// Two centerlines must meet at both ends within `junction_tol`.
Optics place_optics(std::span<const Polyline> outlines, std::span<const Polyline> centerlines, double standoff,
                    double junction_tol = 0.25);

Scene mirror_scene(const Scene& scene);

void write_scene_json(const Scene& scene, std::ostream& out);

/// Ray path for documentation renders; power in (0, 1].
struct RayPath {
  Polyline points;
  double power = 1.0;
  bool detected = false;
};

/// SVG at 1 px = 0.05 mm. Rays are shaded by power, the receiver drawn in red.
void write_scene_svg(const Scene& scene, std::span<const RayPath> rays, std::ostream& out);

}  // namespace boat
