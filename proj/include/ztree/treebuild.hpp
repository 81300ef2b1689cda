#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ztree/bounds.hpp"
#include "ztree/common.hpp"
#include "ztree/zorder.hpp"

namespace ztree {

/// Morton level of the smallest dyadic cell holding both p and q:
/// (msb(p_k, q_k) + 1) * d - k for the deciding dimension k.
inline Level morton_level(std::span<const double> p, std::span<const double> q) {
  const ZDiff diff = z_diff(p, q);
  if (diff.msb == kLevelMin) return kLevelMin;
  const int d = static_cast<int>(p.size());
  return (diff.msb + 1) * d - diff.dim;
}

inline Level floor_div(Level a, int b) {
  const Level q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

/// Extent level of dimension i: floor((lvl + i) / d).
inline Level extent_level(Level lvl, int d, int i) { return floor_div(lvl + i, d); }

std::vector<Level> extent_levels(Level lvl, int d);

/// Pair-level value assigned to the two boundary gaps. Strictly larger than any
/// level two finite double vectors can produce.
inline Level pair_level_sentinel(int d) { return (kEmax<double> + 1) * d + 1; }

/// N + 1 gap levels of a z-sorted array; entries 0 and N hold the sentinel.
std::vector<Level> pair_levels(std::span<const double> sorted, int dims);

struct NodeRange {
  Index l_b = 0;
  Index r_b = 0;
  Index n = 0;
};

/// Point range of the smallest node that holds points i-1 and i (binary search).
NodeRange node_range(std::span<const Level> levels, std::span<const double> sorted, int dims,
                     Index i);

/// Keeps candidate splits with n > n_max, or lvl > lvl_max when regularization is
/// active. The first and last candidates are always kept.
std::vector<Index> select_splits(std::span<const Index> candidates, std::span<const Index> n,
                                 std::span<const Level> lvl, Index n_max,
                                 std::optional<Level> lvl_max);

/// Dyadic box of the node at level `lvl` that contains `anchor`. Written into
/// center[0..d) and half_extent[0..d).
void node_box(const double* anchor, Level lvl, int d, double* center, double* half_extent);

inline Box node_box(std::span<const double> anchor, Level lvl) {
  Box b;
  b.center.resize(anchor.size());
  b.half_extent.resize(anchor.size());
  node_box(anchor.data(), lvl, static_cast<int>(anchor.size()), b.center.data(),
           b.half_extent.data());
  return b;
}

struct TreeParams {
  Index n_max0 = 48;  // leaf capacity
  Index coarsen = 8;  // capacity growth per plane
  Index n_target = 1000;
  double f_max = 50;  // regularization; +inf disables it
};

/// One partition of the sorted points into nodes.
struct TreePlane {
  std::vector<Index> spl;        // n_nodes + 1 offsets into the finer plane (points for plane 0)
  std::vector<Index> point_spl;  // n_nodes + 1 offsets into the joint sorted points
  std::vector<Level> level;
  std::vector<double> center;       // n_nodes x d
  std::vector<double> half_extent;  // n_nodes x d
  std::vector<Index> count;         // n_nodes x n_types
  Index n_max = 0;
  Level lvl_max = std::numeric_limits<Level>::max();

  [[nodiscard]] Index size() const { return static_cast<Index>(spl.size()) - 1; }
};

/// Plane hierarchy over one or more point types sorted jointly in z-order.
/// planes[0] holds the leaves; planes.back() is the coarsest plane.
struct TreeHierarchy {
  int dims = 0;
  int n_types = 1;
  TreeParams params;

  std::vector<double> positions;  // joint, z-sorted, N x d
  std::vector<int> type;          // per joint point
  std::vector<Index> id;          // per joint point: row in its type's input
  std::vector<Level> gap_level;   // N + 1

  std::vector<TreePlane> planes;

  std::vector<std::vector<double>> type_positions;  // per type, z-sorted
  std::vector<std::vector<Index>> type_ids;         // per type: sorted row -> input row
  std::vector<std::vector<Index>> leaf_splits;      // per type, n_leaves + 1

  [[nodiscard]] Index size() const { return static_cast<Index>(type.size()); }
  [[nodiscard]] int n_planes() const { return static_cast<int>(planes.size()); }
  [[nodiscard]] const TreePlane& top() const { return planes.back(); }
  [[nodiscard]] BoxRef box(int plane, Index node) const {
    return {planes[plane].center.data() + node * dims,
            planes[plane].half_extent.data() + node * dims};
  }
  [[nodiscard]] Index count(int plane, Index node, int t) const {
    return planes[plane].count[node * n_types + t];
  }
};

/// Volume level -> number of points in nodes of that level.
using LevelHistogram = std::map<Level, Index>;

inline constexpr Level kNoRegularization = std::numeric_limits<Level>::max();

/// Largest level whose volume stays below f_max times the point-weighted mean
/// volume of the smallest nodes holding 90% of the points.
Level regularization_level(const LevelHistogram& histogram, double f_max);
Level regularization_level(const TreePlane& plane, double f_max);
LevelHistogram level_histogram(const TreePlane& plane);

/// Points of one rank in a globally sorted array, plus neighbour information
/// so node ranges near the edges match the global build.
struct BuildContext {
  std::vector<double> ghost_prev;  // last point of the preceding rank, if any
  std::vector<double> ghost_next;  // first point of the following rank, if any
  Index global_n = -1;             // total point count over all ranks
};

/// Joint points already sorted in z-order.
struct SortedPoints {
  int dims = 0;
  int n_types = 1;
  std::vector<double> positions;
  std::vector<int> type;
  std::vector<Index> id;
};

/// Concatenates types and sorts them jointly (stable: ties keep type, then row order).
SortedPoints sort_jointly(std::span<const PointSet> types);

/// Number of planes built for `n` points.
int planned_planes(Index n, const TreeParams& params);

/// Count above which a node range is known to cross a rank boundary.
inline constexpr Index kStraddles = std::numeric_limits<Index>::max() / 4;

/// Plane-by-plane builder. The distributed driver interleaves a global
/// reduction of `propose_plane()` histograms before each `commit_plane()`.
class HierarchyBuilder {
 public:
  HierarchyBuilder(SortedPoints points, TreeParams params, BuildContext context = {});

  [[nodiscard]] bool done() const { return static_cast<int>(planes_.size()) == n_planes_; }
  [[nodiscard]] int n_planes() const { return n_planes_; }

  /// Count-criterion splits for the next plane; returns its level histogram.
  LevelHistogram propose_plane();
  /// Adds regularization splits above `lvl_max` and finalizes the plane.
  void commit_plane(Level lvl_max);

  TreeHierarchy finish() &&;

  /// Leaf candidates by the windowed range check and by binary search; exposed so
  /// both routes can be compared.
  [[nodiscard]] std::vector<Index> leaf_splits_windowed(Index n_max) const;
  [[nodiscard]] std::vector<Index> leaf_splits_binary(Index n_max) const;
  /// Max-over-types point count of the smallest node holding points i-1, i.
  [[nodiscard]] Index gap_count(Index i) const;

 private:
  [[nodiscard]] std::span<const double> pt(Index i) const {
    return {points_.positions.data() + i * points_.dims, static_cast<std::size_t>(points_.dims)};
  }
  [[nodiscard]] Index range_count(Index lo, Index hi) const;
  void finalize_plane(std::vector<Index> point_splits, Level lvl_max);

  SortedPoints points_;
  TreeParams params_;
  BuildContext context_;
  int n_planes_ = 1;
  Index n_ = 0;
  std::vector<Level> levels_;
  std::vector<std::vector<Index>> prefix_;  // per type, N + 1
  std::vector<TreePlane> planes_;
  std::vector<Index> pending_;              // proposed point splits for the next plane
  std::vector<Index> candidates_;           // point splits eligible for the next plane
  std::vector<Index> candidate_n_;          // cached gap counts of the current candidates
};

/// Builds the full hierarchy with plane-local regularization.
TreeHierarchy build_hierarchy(std::span<const PointSet> types, const TreeParams& params = {});
TreeHierarchy build_hierarchy(SortedPoints points, const TreeParams& params,
                              BuildContext context = {});

}  // namespace ztree
