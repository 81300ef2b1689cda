#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ztree/common.hpp"

namespace ztree {

/// Per-dimension periods; a period of 0 marks an open dimension. An empty
/// vector means fully open space.
struct PeriodicDomain {
  std::vector<double> periods;

  PeriodicDomain() = default;
  explicit PeriodicDomain(std::vector<double> p) : periods(std::move(p)) {}
  static PeriodicDomain cube(int dims, double length) {
    return PeriodicDomain(std::vector<double>(dims, length));
  }

  [[nodiscard]] bool any() const {
    for (double p : periods)
      if (p > 0) return true;
    return false;
  }
  [[nodiscard]] double period(int i) const {
    return static_cast<std::size_t>(i) < periods.size() ? periods[i] : 0.0;
  }
  /// Throws UsageError on negative or non-finite periods or a dimension mismatch.
  void validate(int dims) const;
  /// Wraps every periodic coordinate of `pos` (row-major, `dims` wide) into [0, P).
  void wrap(std::span<double> pos, int dims) const;
};

/// Minimal-image component difference a - b, reduced into [-P/2, P/2).
inline double wrap_component(double diff, double period) {
  if (period > 0) {
    const double h = 0.5 * period;
    if (diff >= h || diff < -h) {
      diff -= period * std::floor(diff / period + 0.5);
      if (diff >= h)
        diff -= period;
      else if (diff < -h)
        diff += period;
    }
  }
  return diff;
}

/// Componentwise a - b with minimal-image reduction on periodic dimensions.
std::vector<double> displacement(std::span<const double> a, std::span<const double> b,
                                 const PeriodicDomain& domain);

/// Squared Euclidean (minimal image) distance. Summation runs over dimensions
/// in increasing order.
inline double distance2(const double* a, const double* b, int dims, const PeriodicDomain& domain) {
  double s = 0;
  if (domain.periods.empty()) {
    for (int i = 0; i < dims; ++i) {
      const double t = a[i] - b[i];
      s += t * t;
    }
  } else {
    for (int i = 0; i < dims; ++i) {
      const double t = wrap_component(a[i] - b[i], domain.period(i));
      s += t * t;
    }
  }
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b,
                       const PeriodicDomain& domain) {
  return std::sqrt(distance2(a.data(), b.data(), static_cast<int>(a.size()), domain));
}

/// Axis-aligned node box. `half_extent` may be +inf for nodes spanning both signs.
struct BoxRef {
  const double* center;
  const double* half_extent;
};

struct Box {
  std::vector<double> center;
  std::vector<double> half_extent;

  [[nodiscard]] BoxRef ref() const { return {center.data(), half_extent.data()}; }
  [[nodiscard]] int dims() const { return static_cast<int>(center.size()); }
};

/// Lower bound on the distance between any point of box a and any point of box b.
inline double d_low(BoxRef a, BoxRef b, int dims, const PeriodicDomain& domain) {
  double s = 0;
  for (int i = 0; i < dims; ++i) {
    const double period = domain.period(i);
    const double ext = a.half_extent[i] + b.half_extent[i];
    if (period > 0 && ext >= 0.5 * period) continue;
    const double dc = std::abs(wrap_component(a.center[i] - b.center[i], period));
    const double t = dc - ext;
    if (t > 0) s += t * t;
  }
  return std::sqrt(s);
}

/// Upper bound on the distance between any point of box a and any point of box b.
inline double d_up(BoxRef a, BoxRef b, int dims, const PeriodicDomain& domain) {
  double s = 0;
  for (int i = 0; i < dims; ++i) {
    const double dc = std::abs(wrap_component(a.center[i] - b.center[i], domain.period(i)));
    const double t = dc + (a.half_extent[i] + b.half_extent[i]);
    s += t * t;
  }
  return std::sqrt(s);
}

inline double d_low(const Box& a, const Box& b, const PeriodicDomain& domain) {
  return d_low(a.ref(), b.ref(), a.dims(), domain);
}
inline double d_up(const Box& a, const Box& b, const PeriodicDomain& domain) {
  return d_up(a.ref(), b.ref(), a.dims(), domain);
}

}  // namespace ztree
