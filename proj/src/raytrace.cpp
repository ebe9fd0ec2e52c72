#include "boat/raytrace.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <queue>

#include <nlohmann/json.hpp>

namespace boat {

void TraceConfig::validate() const {
  if (n_primary < 1) throw ValidationError("n_primary must be at least 1");
  if (!(aperture_deg > 0.0 && aperture_deg < 180.0)) throw ValidationError("aperture must lie in (0, 180) degrees");
  if (max_secondary < 0) throw ValidationError("max_secondary must be non-negative");
  if (!(power_floor > 0.0 && power_floor <= 1.0)) throw ValidationError("power_floor must lie in (0, 1]");
  if (max_bounces < 0) throw ValidationError("max_bounces must be non-negative");
  if (!(detect_threshold >= 0.0)) throw ValidationError("detect_threshold must be non-negative");
}

FresnelResult fresnel_cos(double n1, double n2, double cos_incidence) {
  const double ci = std::clamp(cos_incidence, 0.0, 1.0);
  const double eta = n1 / n2;
  const double sin_t2 = eta * eta * (1.0 - ci * ci);
  FresnelResult r;
  if (sin_t2 >= 1.0 || ci == 0.0) {
    r.reflectance = 1.0;
    r.transmittance = 0.0;
    r.total_internal_reflection = sin_t2 >= 1.0;
    r.refraction_angle = r.total_internal_reflection ? std::numeric_limits<double>::quiet_NaN() : std::numbers::pi / 2;
    return r;
  }
  const double ct = std::sqrt(1.0 - sin_t2);
  const double rs = (n1 * ci - n2 * ct) / (n1 * ci + n2 * ct);
  const double rp = (n2 * ci - n1 * ct) / (n2 * ci + n1 * ct);
  r.reflectance = 0.5 * (rs * rs + rp * rp);
  r.transmittance = 1.0 - r.reflectance;
  r.refraction_angle = std::asin(std::sqrt(sin_t2));
  return r;
}

FresnelResult fresnel(double n1, double n2, double incidence) {
  if (incidence >= std::numbers::pi / 2) return fresnel_cos(n1, n2, 0.0);
  const double si = std::sin(incidence);
  if (n1 > n2 && si > n2 / n1) {
    FresnelResult r;
    r.reflectance = 1.0;
    r.transmittance = 0.0;
    r.total_internal_reflection = true;
    r.refraction_angle = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  FresnelResult r = fresnel_cos(n1, n2, std::cos(incidence));
  if (!r.total_internal_reflection) r.refraction_angle = std::asin(std::min(1.0, n1 * si / n2));
  return r;
}

double critical_angle(double n_core, double n_exterior) {
  if (!(n_exterior > 0.0) || !(n_core > n_exterior))
    throw ValidationError("critical angle needs n_core > n_exterior > 0");
  return std::asin(n_exterior / n_core);
}

std::vector<Ray> emit_fan(const TraceConfig& config, const Emitter& emitter) {
  config.validate();
  const int n = config.n_primary;
  const double aperture = config.aperture_deg * std::numbers::pi / 180.0;
  // (2k - (n-1)) is exact, so the fan is bit-symmetric about the axis.
  const double half_step = n > 1 ? aperture / (2.0 * (n - 1)) : 0.0;
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(n));
  const Point2 axis = emitter.axis;
  for (int k = 0; k < n; ++k) {
    const double angle = static_cast<double>(2 * k - (n - 1)) * half_step;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Ray r;
    r.origin = emitter.position;
    r.direction = {axis.x * c - axis.z * s, axis.x * s + axis.z * c};
    r.wavelength_nm = config.wavelength_nm;
    rays.push_back(r);
  }
  return rays;
}

namespace {

constexpr double kAdvance = 1e-9;    // mm, origin nudge after every event
constexpr double kTieWindow = 1e-9;  // mm, hits this close count as one event
constexpr std::size_t kMaxExcluded = 4;

struct BoundarySegment {
  Point2 a;
  Point2 edge;
  Point2 normal;  // unit, arbitrary orientation
  int outline;
};

struct Box {
  double xmin = std::numeric_limits<double>::infinity();
  double zmin = std::numeric_limits<double>::infinity();
  double xmax = -std::numeric_limits<double>::infinity();
  double zmax = -std::numeric_limits<double>::infinity();

  void grow(Point2 p) {
    xmin = std::min(xmin, p.x);
    zmin = std::min(zmin, p.z);
    xmax = std::max(xmax, p.x);
    zmax = std::max(zmax, p.z);
  }
  void grow(const Box& b) {
    xmin = std::min(xmin, b.xmin);
    zmin = std::min(zmin, b.zmin);
    xmax = std::max(xmax, b.xmax);
    zmax = std::max(zmax, b.zmax);
  }
};

struct Node {
  Box box;
  int left = -1;  // child index, or -1 for leaves
  int right = -1;
  int first = 0;  // leaf range into the ordered segment index list
  int count = 0;
};

struct Hit {
  double t;
  int segment;
};

/// Bounding-volume hierarchy over the scene boundary for nearest-hit queries.
class BoundaryIndex {
 public:
  explicit BoundaryIndex(const Scene& scene) {
    for (std::size_t k = 0; k < scene.outlines.size(); ++k) {
      const auto& ring = scene.outlines[k];
      for (std::size_t i = 0; i < ring.size(); ++i) {
        const Point2 a = ring[i];
        const Point2 e = ring[(i + 1) % ring.size()] - a;
        segments_.push_back({a, e, normalized(left_normal(e)), static_cast<int>(k)});
      }
    }
    order_.resize(segments_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * segments_.size());
    build(0, static_cast<int>(order_.size()));
  }

  const BoundarySegment& segment(int i) const { return segments_[static_cast<std::size_t>(i)]; }

  /// All hits within kTieWindow of the nearest forward hit, sorted by segment index.
  void nearest(Point2 o, Point2 d, std::span<const int> excluded, std::vector<Hit>& out) const {
    out.clear();
    if (nodes_.empty()) return;
    double best = std::numeric_limits<double>::infinity();
    const double inv_x = 1.0 / d.x;
    const double inv_z = 1.0 / d.z;
    std::array<int, 64> stack{};
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[static_cast<std::size_t>(stack[--top])];
      if (!box_hit(node.box, o, inv_x, inv_z, best + kTieWindow)) continue;
      if (node.left < 0) {
        for (int k = node.first; k < node.first + node.count; ++k) {
          const int s = order_[static_cast<std::size_t>(k)];
          if (std::find(excluded.begin(), excluded.end(), s) != excluded.end()) continue;
          const double t = intersect(segments_[static_cast<std::size_t>(s)], o, d);
          if (t <= best + kTieWindow) {
            out.push_back({t, s});
            best = std::min(best, t);
          }
        }
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
    std::erase_if(out, [best](const Hit& h) { return h.t > best + kTieWindow; });
    std::sort(out.begin(), out.end(), [](const Hit& a, const Hit& b) { return a.segment < b.segment; });
  }

  static double intersect(const BoundarySegment& seg, Point2 o, Point2 d) {
    const double denom = cross(d, seg.edge);
    if (denom == 0.0) return std::numeric_limits<double>::infinity();
    const Point2 ao = seg.a - o;
    const double t = cross(ao, seg.edge) / denom;
    const double u = cross(ao, d) / denom;
    if (t <= 0.0 || u < -1e-12 || u > 1.0 + 1e-12) return std::numeric_limits<double>::infinity();
    return t;
  }

 private:
  static bool box_hit(const Box& b, Point2 o, double inv_x, double inv_z, double tmax) {
    double t0 = 0.0;
    double t1 = tmax;
    const auto slab = [&](double lo, double hi, double origin, double inv) {
      if (std::isinf(inv)) return origin >= lo && origin <= hi;
      double a = (lo - origin) * inv;
      double c = (hi - origin) * inv;
      if (a > c) std::swap(a, c);
      t0 = std::max(t0, a);
      t1 = std::min(t1, c);
      return t0 <= t1 + 1e-12;
    };
    return slab(b.xmin, b.xmax, o.x, inv_x) && slab(b.zmin, b.zmax, o.z, inv_z);
  }

  int build(int first, int last) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Box box;
    Box centroids;
    for (int k = first; k < last; ++k) {
      const auto& s = segments_[static_cast<std::size_t>(order_[static_cast<std::size_t>(k)])];
      box.grow(s.a);
      box.grow(s.a + s.edge);
      centroids.grow(s.a + 0.5 * s.edge);
    }
    // Pad so that axis-aligned segments still have a finite-width box.
    box.xmin -= 1e-9;
    box.zmin -= 1e-9;
    box.xmax += 1e-9;
    box.zmax += 1e-9;
    nodes_[static_cast<std::size_t>(index)].box = box;
    if (last - first <= 4) {
      nodes_[static_cast<std::size_t>(index)].first = first;
      nodes_[static_cast<std::size_t>(index)].count = last - first;
      return index;
    }
    const bool split_x = (centroids.xmax - centroids.xmin) >= (centroids.zmax - centroids.zmin);
    const int mid = first + (last - first) / 2;
    const auto key = [&](int s) {
      const auto& seg = segments_[static_cast<std::size_t>(s)];
      const Point2 c = seg.a + 0.5 * seg.edge;
      return split_x ? c.x : c.z;
    };
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + last, [&](int a, int b) {
      const double ka = key(a);
      const double kb = key(b);
      return ka < kb || (ka == kb && a < b);
    });
    const int l = build(first, mid);
    const int r = build(mid, last);
    nodes_[static_cast<std::size_t>(index)].left = l;
    nodes_[static_cast<std::size_t>(index)].right = r;
    return index;
  }

  std::vector<BoundarySegment> segments_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

struct LiveRay {
  Point2 origin;
  Point2 direction;
  double power;
  int generation;
  int bounces;
  std::uint32_t membership;  // bit k set while inside outline k
  std::array<int, kMaxExcluded> excluded;
  std::size_t excluded_count;
  std::int64_t sequence;
  int path;  // index into the result's path list, or -1
};

struct QueueOrder {
  bool operator()(const LiveRay& a, const LiveRay& b) const {
    // Highest power first, ties by creation order.
    if (a.power != b.power) return a.power < b.power;
    return a.sequence > b.sequence;
  }
};

double receiver_distance(const Segment& receiver, Point2 o, Point2 d) {
  const Point2 edge = receiver.b - receiver.a;
  if (edge.x == 0.0 && edge.z == 0.0) return std::numeric_limits<double>::infinity();
  const double denom = cross(d, edge);
  if (denom == 0.0) return std::numeric_limits<double>::infinity();
  const Point2 ao = receiver.a - o;
  const double t = cross(ao, edge) / denom;
  const double u = cross(ao, d) / denom;
  if (t <= 0.0 || u < 0.0 || u > 1.0) return std::numeric_limits<double>::infinity();
  return t;
}

}  // namespace

TraceResult trace(const Scene& scene, const TraceConfig& config) {
  config.validate();
  scene.validate();
  if (scene.outlines.size() > 32) throw ValidationError("at most 32 outlines per scene");

  std::uint32_t start_membership = 0;
  for (std::size_t k = 0; k < scene.outlines.size(); ++k)
    if (point_in_polygon(scene.outlines[k], scene.emitter.position)) start_membership |= (1u << k);
  if (start_membership == 0) throw ValidationError("emitter lies outside every waveguide core");

  const BoundaryIndex index(scene);
  TraceResult result;
  std::vector<Hit> hits;
  hits.reserve(8);
  const std::int64_t step_guard = 4LL * config.max_bounces + 4096;

  const auto index_of = [&](std::uint32_t membership) {
    return membership != 0 ? scene.core_index : scene.exterior_index;
  };

  const auto new_path = [&](Point2 start, double power) -> int {
    if (!config.record_paths) return -1;
    result.ray_paths.push_back({{start}, power, false});
    return static_cast<int>(result.ray_paths.size()) - 1;
  };
  const auto extend_path = [&](int path, Point2 p) {
    if (path >= 0) result.ray_paths[static_cast<std::size_t>(path)].points.push_back(p);
  };

  const auto primaries = emit_fan(config, scene.emitter);
  for (const auto& primary : primaries) {
    std::priority_queue<LiveRay, std::vector<LiveRay>, QueueOrder> queue;
    std::int64_t sequence = 0;
    int secondaries = 0;
    queue.push(LiveRay{primary.origin, primary.direction, primary.power, 0, 0, start_membership, {}, 0, sequence++,
                       new_path(primary.origin, primary.power)});

    while (!queue.empty()) {
      LiveRay ray = queue.top();
      queue.pop();

      bool terminated = false;
      for (std::int64_t step = 0; !terminated; ++step) {
        if (step > step_guard) {
          result.ledger.bounce_limited += ray.power;
          break;
        }
        index.nearest(ray.origin, ray.direction, std::span<const int>(ray.excluded.data(), ray.excluded_count), hits);
        const double t_boundary = hits.empty() ? std::numeric_limits<double>::infinity() : hits.front().t;
        const double t_receiver = receiver_distance(scene.receiver, ray.origin, ray.direction);

        if (std::isfinite(t_receiver) && t_receiver <= t_boundary) {
          extend_path(ray.path, ray.origin + t_receiver * ray.direction);
          if (ray.path >= 0) result.ray_paths[static_cast<std::size_t>(ray.path)].detected = true;
          result.ledger.detected += ray.power;
          result.detected_power += ray.power;
          ++result.receiver_hits;
          if (ray.power >= config.detect_threshold) ++result.ndr;
          break;
        }
        if (hits.empty()) {
          extend_path(ray.path, ray.origin + 5.0 * ray.direction);
          result.ledger.escaped += ray.power;
          break;
        }

        const Point2 p = ray.origin + t_boundary * ray.direction;
        extend_path(ray.path, p);

        std::uint32_t toggles = 0;
        for (const auto& h : hits) toggles |= (1u << index.segment(h.segment).outline);
        const std::uint32_t other_side = ray.membership ^ toggles;
        const double n1 = index_of(ray.membership);
        const double n2 = index_of(other_side);

        std::array<int, kMaxExcluded> excluded{};
        const std::size_t excluded_count = std::min(hits.size(), kMaxExcluded);
        for (std::size_t k = 0; k < excluded_count; ++k) excluded[k] = hits[k].segment;

        if (n1 == n2) {
          // Overlapping cores: no optical interface.
          ray.origin = p + kAdvance * ray.direction;
          ray.membership = other_side;
          ray.excluded = excluded;
          ray.excluded_count = excluded_count;
          continue;
        }

        ++result.interface_events;
        if (++ray.bounces > config.max_bounces) {
          result.ledger.bounce_limited += ray.power;
          break;
        }

        Point2 normal = index.segment(hits.front().segment).normal;
        if (dot(normal, ray.direction) > 0.0) normal = -normal;
        const double cos_i = std::min(1.0, -dot(ray.direction, normal));
        const FresnelResult split = fresnel_cos(n1, n2, cos_i);
        result.max_energy_residual =
            std::max(result.max_energy_residual, std::abs(split.reflectance + split.transmittance - 1.0));

        LiveRay reflected = ray;
        reflected.direction = normalized(ray.direction + (2.0 * cos_i) * normal);
        reflected.power = ray.power * split.reflectance;
        reflected.origin = p + kAdvance * reflected.direction;
        reflected.excluded = excluded;
        reflected.excluded_count = excluded_count;

        if (split.total_internal_reflection || split.transmittance == 0.0) {
          ray = reflected;
          continue;
        }

        const double eta = n1 / n2;
        const double cos_t = std::sqrt(std::max(0.0, 1.0 - eta * eta * (1.0 - cos_i * cos_i)));
        LiveRay refracted = ray;
        refracted.direction = normalized(eta * ray.direction + (eta * cos_i - cos_t) * normal);
        refracted.power = ray.power * split.transmittance;
        refracted.membership = other_side;
        refracted.origin = p + kAdvance * refracted.direction;
        refracted.excluded = excluded;
        refracted.excluded_count = excluded_count;
        const double sin_i = std::sqrt(std::max(0.0, 1.0 - cos_i * cos_i));
        const double sin_t = std::abs(cross(refracted.direction, normal));
        result.max_snell_residual = std::max(result.max_snell_residual, std::abs(n1 * sin_i - n2 * sin_t));

        // The stronger child continues this lineage member; the weaker one is a secondary ray.
        const bool reflect_dominant = split.reflectance >= split.transmittance;
        LiveRay dominant = reflect_dominant ? reflected : refracted;
        LiveRay secondary = reflect_dominant ? refracted : reflected;

        if (secondary.power < config.power_floor) {
          result.ledger.absorbed += secondary.power;
        } else if (secondaries >= config.max_secondary) {
          result.ledger.budget_dropped += secondary.power;
        } else {
          ++secondaries;
          ++result.secondary_rays;
          secondary.generation = ray.generation + 1;
          secondary.bounces = ray.bounces;
          secondary.sequence = sequence++;
          secondary.path = new_path(p, secondary.power);
          queue.push(secondary);
        }

        if (dominant.power < config.power_floor) {
          result.ledger.absorbed += dominant.power;
          terminated = true;
        } else if (!queue.empty() && QueueOrder{}(dominant, queue.top())) {
          // A pending ray now outranks this one; requeue to keep power order.
          dominant.sequence = sequence++;
          queue.push(dominant);
          terminated = true;
        } else {
          ray = dominant;
        }
      }
    }
  }
  return result;
}

void write_trace_json(const TraceResult& result, const Scene& scene, const TraceConfig& config, std::ostream& out) {
  nlohmann::json j;
  j["ndr"] = result.ndr;
  j["detected_power"] = result.detected_power;
  j["receiver_hits"] = result.receiver_hits;
  j["power_ledger"] = {{"detected", result.ledger.detected},
                       {"escaped", result.ledger.escaped},
                       {"absorbed", result.ledger.absorbed},
                       {"bounce_limited", result.ledger.bounce_limited},
                       {"budget_dropped", result.ledger.budget_dropped}};
  j["interface_events"] = result.interface_events;
  j["secondary_rays"] = result.secondary_rays;
  j["config"] = {{"n_primary", config.n_primary},
                 {"aperture_deg", config.aperture_deg},
                 {"max_secondary", config.max_secondary},
                 {"secondary_budget", "per_primary"},
                 {"power_floor", config.power_floor},
                 {"max_bounces", config.max_bounces},
                 {"detect_threshold", config.detect_threshold},
                 {"wavelength_nm", config.wavelength_nm},
                 {"polarization", "unpolarized"}};
  j["core_index"] = scene.core_index;
  j["exterior_index"] = scene.exterior_index;
  j["scene_hash"] = scene.hash();
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

StateGeometry prepare_state(const DeformationState& state, const SceneOptions& options) {
  StateGeometry g;
  g.label = state.label.str();
  try {
    for (const auto& raw : state.waveguides) {
      const Polyline reps = select_representatives(raw, options.representative_points, options.oversample);
      g.centerlines.push_back(discretize_curve(reps, options.max_chord_error_mm, options.max_segment_mm));
    }
    for (const auto& c : g.centerlines) g.outlines.push_back(build_waveguide_outline(c, options.thickness_mm));
    for (std::size_t w = 0; w < g.centerlines.size(); ++w)
      g.cavity_sides.push_back(surface_side(g.centerlines, w, options.cavity_side));
  } catch (const GeometryError& e) {
    throw GeometryError("state " + g.label + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("state " + g.label + ": " + e.what());
  }
  return g;
}

Scene build_scene(const StateGeometry& geometry, const PatternSpec& spec, const SceneOptions& options) {
  if (2.0 * spec.depth >= options.thickness_mm && spec.cavity_count > 0)
    throw GeometryError("cavity depth must be below half the waveguide thickness");
  Scene scene;
  scene.core_index = options.core_index;
  scene.exterior_index = options.exterior_index;
  try {
    for (std::size_t w = 0; w < geometry.outlines.size(); ++w)
      scene.outlines.push_back(
          carve_pattern(geometry.outlines[w], geometry.centerlines[w], spec, geometry.cavity_sides[w]));
    const Optics optics =
        place_optics(scene.outlines, geometry.centerlines, options.standoff_mm, options.junction_tol_mm);
    scene.emitter = optics.emitter;
    scene.receiver = optics.receiver;
  } catch (const GeometryError& e) {
    throw GeometryError("state " + geometry.label + ": " + e.what());
  }
  return scene;
}

Scene straight_guide_scene(double length_mm, const PatternSpec& spec, const SceneOptions& options) {
  StateGeometry g;
  g.label = "straight";
  g.centerlines.push_back({{0.0, 0.0}, {length_mm, 0.0}});
  g.outlines.push_back(build_waveguide_outline(g.centerlines.front(), options.thickness_mm));
  g.cavity_sides.push_back(surface_side(g.centerlines, 0, options.cavity_side));
  return build_scene(g, spec, options);
}

StateResponse ndr_vs_state(std::span<const StateGeometry> states, const PatternSpec& spec, const TraceConfig& config,
                           const SceneOptions& options) {
  StateResponse out;
  out.ndr.reserve(states.size());
  out.detected_power.reserve(states.size());
  for (const auto& g : states) {
    const Scene scene = build_scene(g, spec, options);
    TraceResult r;
    try {
      r = trace(scene, config);
    } catch (const ValidationError& e) {
      throw ValidationError("state " + g.label + ": " + e.what());
    }
    out.ndr.push_back(r.ndr);
    out.detected_power.push_back(r.detected_power);
  }
  return out;
}

StateResponse ndr_vs_state(const StateLibrary& library, const PatternSpec& spec, const TraceConfig& config,
                           const SceneOptions& options) {
  std::vector<StateGeometry> geometry;
  geometry.reserve(library.size());
  for (const auto& s : library.states) geometry.push_back(prepare_state(s, options));
  return ndr_vs_state(geometry, spec, config, options);
}

}  // namespace boat
