#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "boat/deformation.hpp"
#include "boat/geometry.hpp"

namespace boat {

struct Ray {
  Point2 origin;
  Point2 direction{1.0, 0.0};
  double power = 1.0;
  int generation = 0;
  double wavelength_nm = 860.0;
};

struct TraceConfig {
  int n_primary = 250;
  double aperture_deg = 120.0;  // full cone angle
  int max_secondary = 100;      // per primary ray
  double power_floor = 1e-3;    // rays below this are absorbed
  int max_bounces = 200;
  double detect_threshold = 1e-3;
  double wavelength_nm = 860.0;
  bool record_paths = false;

  /// power_floor may be exactly 1 to disable every partial-reflection descendant.
  void validate() const;
};

struct FresnelResult {
  double reflectance = 0.0;
  double transmittance = 1.0;
  double refraction_angle = 0.0;  // radians from the normal; undefined under TIR
  bool total_internal_reflection = false;
};

/// Unpolarized Fresnel split (mean of s and p) at an interface from index n1 into n2.
FresnelResult fresnel(double n1, double n2, double incidence);

/// Same split parameterized by cos(incidence); used on the tracing hot path.
FresnelResult fresnel_cos(double n1, double n2, double cos_incidence);

double critical_angle(double n_core, double n_exterior);

/// Endpoint-inclusive uniform fan of n_primary unit-power rays around the emitter axis.
std::vector<Ray> emit_fan(const TraceConfig& config, const Emitter& emitter);

/// Where each unit of emitted power ended up.
struct PowerLedger {
  double detected = 0.0;
  double escaped = 0.0;
  double absorbed = 0.0;       // fell below power_floor
  double bounce_limited = 0.0;
  double budget_dropped = 0.0;  // secondary budget exhausted

  double total() const { return detected + escaped + absorbed + bounce_limited + budget_dropped; }
};

struct TraceResult {
  int ndr = 0;
  double detected_power = 0.0;
  int receiver_hits = 0;  // all receiver terminations, regardless of threshold
  PowerLedger ledger;
  std::int64_t interface_events = 0;
  std::int64_t secondary_rays = 0;
  double max_energy_residual = 0.0;  // max |R + T - 1| over all events
  double max_snell_residual = 0.0;   // max |n1 sin(t1) - n2 sin(t2)| over refraction events
  std::vector<RayPath> ray_paths;    // ordered by primary index, then creation order
};

/// Deterministic 2D trace of the emitter fan through the scene.
TraceResult trace(const Scene& scene, const TraceConfig& config);

void write_trace_json(const TraceResult& result, const Scene& scene, const TraceConfig& config, std::ostream& out);

// ---------------------------------------------------------------------------
// Deformation state -> scene

struct SceneOptions {
  double thickness_mm = 3.0;
  double standoff_mm = 3.0;
  CavitySide cavity_side = CavitySide::outer;
  double max_chord_error_mm = 0.1;
  double max_segment_mm = 0.5;
  std::size_t representative_points = 10;
  std::size_t oversample = 10;
  double junction_tol_mm = 0.25;
  double core_index = 1.43;
  double exterior_index = 1.0;
};

/// Spec-independent geometry of one state: discretized centerlines and uncarved outlines.
struct StateGeometry {
  std::string label;
  std::vector<Polyline> centerlines;
  std::vector<Polyline> outlines;
  std::vector<int> cavity_sides;
};

StateGeometry prepare_state(const DeformationState& state, const SceneOptions& options);

Scene build_scene(const StateGeometry& geometry, const PatternSpec& spec, const SceneOptions& options);

/// Straight single waveguide along +x; used by the acceptance-cone oracle.
Scene straight_guide_scene(double length_mm, const PatternSpec& spec, const SceneOptions& options);

struct StateResponse {
  std::vector<int> ndr;
  std::vector<double> detected_power;
};

/// Trace every library state (compression -> elongation) for one pattern.
/// Geometry errors are rethrown with the offending state label.
StateResponse ndr_vs_state(const StateLibrary& library, const PatternSpec& spec, const TraceConfig& config,
                           const SceneOptions& options = {});

StateResponse ndr_vs_state(std::span<const StateGeometry> states, const PatternSpec& spec,
                           const TraceConfig& config, const SceneOptions& options);

}  // namespace boat
