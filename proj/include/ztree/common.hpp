#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ztree {

using Index = std::int64_t;

/// Morton level: log2 of a node volume on the interleaved bit grid.
using Level = int;

/// Sentinel level for identical points (zero-extent nodes).
inline constexpr Level kLevelMin = -(1 << 20);

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Relative slack applied when floating point node bounds are compared against
// radii. Node centers can carry one rounding, point distances a few more.
inline constexpr double kBoundSlack = 1.0 + 1e-12;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data (NaN/Inf coordinates, corrupt files, k > N, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent arguments supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Simulated transport or resolution failure in the multi-rank driver.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Positions (row-major N x d) with optional masses and velocities.
struct PointSet {
  int dims = 0;
  std::vector<double> positions;
  std::vector<double> masses;      // empty or N
  std::vector<double> velocities;  // empty or N x d

  PointSet() = default;
  PointSet(int d, std::vector<double> pos) : dims(d), positions(std::move(pos)) {}

  [[nodiscard]] Index size() const {
    return dims == 0 ? 0 : static_cast<Index>(positions.size()) / dims;
  }
  [[nodiscard]] bool empty() const { return size() == 0; }
  [[nodiscard]] bool has_masses() const { return !masses.empty(); }
  [[nodiscard]] bool has_velocities() const { return !velocities.empty(); }

  [[nodiscard]] std::span<const double> point(Index i) const {
    return {positions.data() + i * dims, static_cast<std::size_t>(dims)};
  }
  [[nodiscard]] double mass(Index i) const { return masses.empty() ? 1.0 : masses[i]; }

  /// Throws ValidationError on shape mismatch or non-finite values.
  void validate() const;
};

/// Gathers rows of `src` in the given order (positions, masses, velocities).
PointSet gather(const PointSet& src, std::span<const Index> order);

}  // namespace ztree
