#pragma once

// Closed-form references shared by the unit and acceptance suites.

#include <cmath>
#include <cstddef>
#include <optional>

namespace boat::oracle {

/// EWMA after n frames of the input c*k (k = 0..n), seeded with the first input.
inline double ewma_of_ramp(std::size_t n, double c, double alpha) {
  const double keep = 1.0 - alpha;
  return c * (static_cast<double>(n) - keep / alpha * (1.0 - std::pow(keep, static_cast<double>(n))));
}

/// EWMA after n frames of the input q^k, seeded with q^0 = 1.
inline double ewma_of_geometric(std::size_t n, double q, double alpha) {
  const double keep = 1.0 - alpha;
  const double a = alpha * q / (q - keep);
  return a * std::pow(q, static_cast<double>(n)) + (1.0 - a) * std::pow(keep, static_cast<double>(n));
}

/// Frame at which a sustained-threshold drift alarm fires for a deviation ramp
/// of `slope` mm/s starting at frame 0.
inline std::optional<std::size_t> drift_alarm_frame(double slope_mm_per_s, double rate_hz, double alpha,
                                                    double threshold_mm, double hold_s,
                                                    std::size_t horizon = 10'000'000) {
  const double c = slope_mm_per_s / rate_hz;
  const auto hold = static_cast<std::size_t>(std::ceil(hold_s * rate_hz - 1e-9));
  for (std::size_t n = 0; n < horizon; ++n)
    if (std::abs(ewma_of_ramp(n, c, alpha)) > threshold_mm) return n + hold;
  return std::nullopt;
}

/// Frame at which a leak alarm fires when displacement x0 decays by the factor
/// (1 - decay_per_s)^t under constant pressure from frame 0.
inline std::optional<std::size_t> leak_alarm_frame(double x0_mm, double decay_per_s, double rate_hz, double alpha,
                                                   double drop_mm, double hold_s,
                                                   std::size_t horizon = 10'000'000) {
  const double q = std::pow(1.0 - decay_per_s, 1.0 / rate_hz);
  const auto hold = static_cast<std::size_t>(std::ceil(hold_s * rate_hz - 1e-9));
  for (std::size_t n = hold; n < horizon; ++n)
    if (x0_mm * (ewma_of_geometric(n, q, alpha) - 1.0) < -drop_mm) return n;
  return std::nullopt;
}

/// Guided rays of an endpoint-inclusive fan in a flat-walled guide.
inline int acceptance_cone_count(int n, double aperture_deg, double n_core, double n_exterior) {
  const double deg = 3.14159265358979323846 / 180.0;
  const double cone = 90.0 - std::asin(n_exterior / n_core) / deg;
  int count = 0;
  for (int k = 0; k < n; ++k) {
    const double angle = n > 1 ? -0.5 * aperture_deg + aperture_deg * k / (n - 1) : 0.0;
    if (std::abs(angle) < cone) ++count;
  }
  return count;
}

}  // namespace boat::oracle
