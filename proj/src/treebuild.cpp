#include "ztree/treebuild.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ztree/parallel.hpp"

namespace ztree {

std::vector<Level> extent_levels(Level lvl, int d) {
  std::vector<Level> out(d);
  for (int i = 0; i < d; ++i) out[i] = extent_level(lvl, d, i);
  return out;
}

std::vector<Level> pair_levels(std::span<const double> sorted, int dims) {
  const auto d = static_cast<std::size_t>(dims);
  const Index n = static_cast<Index>(sorted.size() / d);
  std::vector<Level> lvl(n + 1);
  lvl[0] = pair_level_sentinel(dims);
  lvl[n] = pair_level_sentinel(dims);
  parallel_for(
      std::max<Index>(n - 1, 0),
      [&](Index j) {
        const Index i = j + 1;
        lvl[i] = morton_level(sorted.subspan((i - 1) * d, d), sorted.subspan(i * d, d));
      },
      4096);
  return lvl;
}

namespace {

// First j in [lo, hi) with pred(j) true, for pred monotone false -> true; hi if none.
template <class Pred>
Index first_true(Index lo, Index hi, Pred pred) {
  while (lo < hi) {
    const Index mid = lo + (hi - lo) / 2;
    if (pred(mid))
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

}  // namespace

NodeRange node_range(std::span<const Level> levels, std::span<const double> sorted, int dims,
                     Index i) {
  const auto d = static_cast<std::size_t>(dims);
  const Index n = static_cast<Index>(sorted.size() / d);
  const Level lvl = levels[i];
  auto pt = [&](Index j) { return sorted.subspan(j * d, d); };
  NodeRange r;
  r.l_b = first_true(0, i - 1, [&](Index j) { return morton_level(pt(j), pt(i)) <= lvl; });
  r.r_b = first_true(i, n, [&](Index j) { return morton_level(pt(i - 1), pt(j)) > lvl; });
  r.n = r.r_b - r.l_b;
  return r;
}

std::vector<Index> select_splits(std::span<const Index> candidates, std::span<const Index> n,
                                 std::span<const Level> lvl, Index n_max,
                                 std::optional<Level> lvl_max) {
  std::vector<Index> out;
  const auto m = candidates.size();
  for (std::size_t j = 0; j < m; ++j) {
    const bool boundary = j == 0 || j + 1 == m;
    if (boundary || n[j] > n_max || (lvl_max && lvl[j] > *lvl_max)) out.push_back(candidates[j]);
  }
  return out;
}

void node_box(const double* anchor, Level lvl, int d, double* center, double* half_extent) {
  for (int i = 0; i < d; ++i) {
    const double x = anchor[i];
    if (lvl == kLevelMin) {
      center[i] = x;
      half_extent[i] = 0;
      continue;
    }
    const Level l = extent_level(lvl, d, i);
    if (l > kEmax<double>) {
      // cell spans both signs
      center[i] = 0;
      half_extent[i] = kInf;
      continue;
    }
    if (l - 1 < -1074) {
      // narrower than the smallest subnormal spacing: coordinate shared exactly
      center[i] = x;
      half_extent[i] = 0;
      continue;
    }
    const double mag = std::abs(x);
    const double sign = std::signbit(x) && x != 0 ? -1.0 : 1.0;
    const double h = std::ldexp(1.0, l - 1);
    if (l == kEmax<double>) {
      center[i] = sign * h;
      half_extent[i] = h;
      continue;
    }
    double corner = 0;
    if (mag != 0) {
      const auto dec = decompose(mag);
      corner = l <= dec.exponent - FloatTraits<double>::kMantissaBits
                   ? mag
                   : std::ldexp(std::floor(std::ldexp(mag, -l)), l);
    }
    center[i] = sign * (corner + h);
    half_extent[i] = h;
  }
}

LevelHistogram level_histogram(const TreePlane& plane) {
  LevelHistogram h;
  for (Index i = 0; i < plane.size(); ++i)
    h[plane.level[i]] += plane.point_spl[i + 1] - plane.point_spl[i];
  return h;
}

Level regularization_level(const LevelHistogram& histogram, double f_max) {
  if (!(f_max < kInf) || histogram.empty()) return kNoRegularization;
  Index total = 0;
  for (const auto& [lvl, c] : histogram) total += c;
  if (total == 0) return kNoRegularization;
  const double target = 0.9 * static_cast<double>(total);
  // smallest volumes first; the level bucket crossing 90% is included whole
  Index cum = 0;
  Level top = kLevelMin;
  std::vector<std::pair<Level, Index>> used;
  for (const auto& [lvl, c] : histogram) {
    used.emplace_back(lvl, c);
    cum += c;
    if (lvl != kLevelMin) top = std::max(top, lvl);
    if (static_cast<double>(cum) >= target) break;
  }
  if (top == kLevelMin) return kNoRegularization;  // only zero-volume nodes
  double scaled = 0;
  for (const auto& [lvl, c] : used)
    if (lvl != kLevelMin) scaled += static_cast<double>(c) * std::ldexp(1.0, lvl - top);
  const double log_v90 = top + std::log2(scaled / static_cast<double>(cum));
  const double bound = std::floor(std::log2(f_max) + log_v90);
  if (bound >= static_cast<double>(kNoRegularization)) return kNoRegularization;
  if (bound <= static_cast<double>(kLevelMin)) return kLevelMin;
  return static_cast<Level>(bound);
}

Level regularization_level(const TreePlane& plane, double f_max) {
  return regularization_level(level_histogram(plane), f_max);
}

SortedPoints sort_jointly(std::span<const PointSet> types) {
  if (types.empty()) throw UsageError("at least one point type is required");
  SortedPoints out;
  out.dims = types.front().dims;
  out.n_types = static_cast<int>(types.size());
  std::vector<double> joint;
  std::vector<int> type;
  std::vector<Index> id;
  for (int t = 0; t < out.n_types; ++t) {
    const PointSet& ps = types[t];
    ps.validate();
    if (ps.dims != out.dims) throw ValidationError("point types differ in dimension");
    joint.insert(joint.end(), ps.positions.begin(), ps.positions.end());
    for (Index i = 0; i < ps.size(); ++i) {
      type.push_back(t);
      id.push_back(i);
    }
  }
  const auto order = z_sort(joint, out.dims);
  const auto d = static_cast<std::size_t>(out.dims);
  out.positions.resize(joint.size());
  out.type.resize(order.size());
  out.id.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::copy_n(joint.begin() + order[i] * d, d, out.positions.begin() + i * d);
    out.type[i] = type[order[i]];
    out.id[i] = id[order[i]];
  }
  return out;
}

int planned_planes(Index n, const TreeParams& params) {
  if (params.n_max0 < 1) throw UsageError("n_max0 must be >= 1");
  if (params.coarsen < 2) throw UsageError("coarsening factor must be >= 2");
  int planes = 1;
  double n_max = static_cast<double>(params.n_max0);
  while (planes < 64) {
    n_max *= static_cast<double>(params.coarsen);
    if (2.0 * static_cast<double>(n) / n_max < static_cast<double>(params.n_target)) break;
    ++planes;
  }
  return planes;
}

HierarchyBuilder::HierarchyBuilder(SortedPoints points, TreeParams params, BuildContext context)
    : points_(std::move(points)), params_(params), context_(std::move(context)) {
  const auto d = static_cast<std::size_t>(points_.dims);
  if (d == 0) throw UsageError("dims must be >= 1");
  n_ = static_cast<Index>(points_.positions.size() / d);
  if (static_cast<Index>(points_.type.size()) != n_) points_.type.assign(n_, 0);
  if (static_cast<Index>(points_.id.size()) != n_) {
    points_.id.resize(n_);
    std::iota(points_.id.begin(), points_.id.end(), Index{0});
  }
  n_planes_ = planned_planes(context_.global_n >= 0 ? context_.global_n : n_, params_);
  levels_ = pair_levels(points_.positions, points_.dims);
  prefix_.assign(points_.n_types, std::vector<Index>(n_ + 1, 0));
  for (Index i = 0; i < n_; ++i)
    for (int t = 0; t < points_.n_types; ++t)
      prefix_[t][i + 1] = prefix_[t][i] + (points_.type[i] == t ? 1 : 0);
}

Index HierarchyBuilder::range_count(Index lo, Index hi) const {
  Index best = 0;
  for (const auto& pre : prefix_) best = std::max(best, pre[hi] - pre[lo]);
  return best;
}

Index HierarchyBuilder::gap_count(Index i) const {
  const Level lvl = levels_[i];
  const Index l_b = first_true(0, i - 1, [&](Index j) { return morton_level(pt(j), pt(i)) <= lvl; });
  const Index r_b = first_true(i, n_, [&](Index j) { return morton_level(pt(i - 1), pt(j)) > lvl; });
  if (l_b == 0 && !context_.ghost_prev.empty() &&
      morton_level(context_.ghost_prev, pt(i)) <= lvl)
    return kStraddles;
  if (r_b == n_ && !context_.ghost_next.empty() &&
      morton_level(pt(i - 1), context_.ghost_next) <= lvl)
    return kStraddles;
  return range_count(l_b, r_b);
}

std::vector<Index> HierarchyBuilder::leaf_splits_windowed(Index n_max) const {
  std::vector<char> keep(std::max<Index>(n_ + 1, 1), 0);
  parallel_for(
      std::max<Index>(n_ - 1, 0),
      [&](Index j) {
        const Index i = j + 1;
        const Level lvl = levels_[i];
        std::vector<Index> counts(points_.n_types, 0);
        auto add = [&](Index p) { return ++counts[points_.type[p]] > n_max; };
        bool exceeds = add(i - 1) || add(i);
        // extend left while the gap levels stay inside the cell
        Index g = i - 1;
        while (!exceeds && g >= 1 && levels_[g] <= lvl) {
          exceeds = add(g - 1);
          --g;
        }
        if (!exceeds && g == 0 && !context_.ghost_prev.empty() &&
            morton_level(context_.ghost_prev, pt(i)) <= lvl)
          exceeds = true;
        g = i + 1;
        while (!exceeds && g <= n_ - 1 && levels_[g] <= lvl) {
          exceeds = add(g);
          ++g;
        }
        if (!exceeds && g == n_ && !context_.ghost_next.empty() &&
            morton_level(pt(i - 1), context_.ghost_next) <= lvl)
          exceeds = true;
        keep[i] = exceeds ? 1 : 0;
      },
      2048);
  std::vector<Index> out{0};
  for (Index i = 1; i < n_; ++i)
    if (keep[i]) out.push_back(i);
  if (n_ > 0) out.push_back(n_);
  return out;
}

std::vector<Index> HierarchyBuilder::leaf_splits_binary(Index n_max) const {
  std::vector<Index> out{0};
  for (Index i = 1; i < n_; ++i)
    if (gap_count(i) > n_max) out.push_back(i);
  if (n_ > 0) out.push_back(n_);
  return out;
}

LevelHistogram HierarchyBuilder::propose_plane() {
  const auto p = planes_.size();
  Index n_max = params_.n_max0;
  for (std::size_t q = 0; q < p; ++q) n_max *= params_.coarsen;
  if (p == 0) {
    pending_ = leaf_splits_windowed(n_max);
  } else {
    std::vector<Level> unused(candidates_.size());
    pending_ = select_splits(candidates_, candidate_n_, unused, n_max, std::nullopt);
  }
  LevelHistogram hist;
  for (std::size_t j = 0; j + 1 < pending_.size(); ++j) {
    const Index s = pending_[j];
    const Index e = pending_[j + 1];
    const Level lvl = e - s == 1 ? kLevelMin : morton_level(pt(s), pt(e - 1));
    hist[lvl] += e - s;
  }
  return hist;
}

void HierarchyBuilder::commit_plane(Level lvl_max) {
  std::vector<Index> splits = std::move(pending_);
  pending_.clear();
  if (lvl_max != kNoRegularization && n_ > 1) {
    std::vector<Index> extra;
    if (planes_.empty()) {
      for (Index i = 1; i < n_; ++i)
        if (levels_[i] > lvl_max) extra.push_back(i);
    } else {
      for (std::size_t j = 1; j + 1 < candidates_.size(); ++j)
        if (levels_[candidates_[j]] > lvl_max) extra.push_back(candidates_[j]);
    }
    if (!extra.empty()) {
      std::vector<Index> merged;
      merged.reserve(splits.size() + extra.size());
      std::set_union(splits.begin(), splits.end(), extra.begin(), extra.end(),
                     std::back_inserter(merged));
      splits = std::move(merged);
    }
  }
  finalize_plane(std::move(splits), lvl_max);
}

void HierarchyBuilder::finalize_plane(std::vector<Index> point_splits, Level lvl_max) {
  const int d = points_.dims;
  const int nt = points_.n_types;
  TreePlane plane;
  plane.lvl_max = lvl_max;
  plane.n_max = params_.n_max0;
  for (std::size_t q = 0; q < planes_.size(); ++q) plane.n_max *= params_.coarsen;
  if (point_splits.empty()) point_splits.push_back(0);
  const Index nodes = static_cast<Index>(point_splits.size()) - 1;
  if (planes_.empty()) {
    plane.spl = point_splits;
  } else {
    const auto& finer = planes_.back().point_spl;
    plane.spl.resize(point_splits.size());
    std::size_t k = 0;
    for (std::size_t j = 0; j < point_splits.size(); ++j) {
      while (finer[k] < point_splits[j]) ++k;
      plane.spl[j] = static_cast<Index>(k);
    }
  }
  plane.point_spl = std::move(point_splits);
  plane.level.resize(nodes);
  plane.center.resize(nodes * d);
  plane.half_extent.resize(nodes * d);
  plane.count.resize(nodes * nt);
  parallel_for(
      nodes,
      [&](Index j) {
        const Index s = plane.point_spl[j];
        const Index e = plane.point_spl[j + 1];
        const Level lvl = e - s == 1 ? kLevelMin : morton_level(pt(s), pt(e - 1));
        plane.level[j] = lvl;
        node_box(points_.positions.data() + s * d, lvl, d, plane.center.data() + j * d,
                 plane.half_extent.data() + j * d);
        for (int t = 0; t < nt; ++t) plane.count[j * nt + t] = prefix_[t][e] - prefix_[t][s];
      },
      512);
  candidates_ = plane.point_spl;
  candidate_n_.assign(candidates_.size(), kStraddles);
  if (static_cast<int>(planes_.size()) + 1 < n_planes_) {
    parallel_for(
        static_cast<Index>(candidates_.size()),
        [&](Index j) {
          const Index i = candidates_[j];
          if (i > 0 && i < n_) candidate_n_[j] = gap_count(i);
        },
        256);
  }
  planes_.push_back(std::move(plane));
}

TreeHierarchy HierarchyBuilder::finish() && {
  while (!done()) {
    const auto hist = propose_plane();
    commit_plane(regularization_level(hist, params_.f_max));
  }
  TreeHierarchy h;
  h.dims = points_.dims;
  h.n_types = points_.n_types;
  h.params = params_;
  h.gap_level = std::move(levels_);
  h.planes = std::move(planes_);
  const auto d = static_cast<std::size_t>(h.dims);
  h.type_positions.assign(h.n_types, {});
  h.type_ids.assign(h.n_types, {});
  for (Index i = 0; i < n_; ++i) {
    const int t = points_.type[i];
    h.type_positions[t].insert(h.type_positions[t].end(), points_.positions.begin() + i * d,
                               points_.positions.begin() + (i + 1) * d);
    h.type_ids[t].push_back(points_.id[i]);
  }
  const auto& leaf_spl = h.planes.front().point_spl;
  h.leaf_splits.assign(h.n_types, std::vector<Index>(leaf_spl.size()));
  for (int t = 0; t < h.n_types; ++t)
    for (std::size_t j = 0; j < leaf_spl.size(); ++j) h.leaf_splits[t][j] = prefix_[t][leaf_spl[j]];
  h.positions = std::move(points_.positions);
  h.type = std::move(points_.type);
  h.id = std::move(points_.id);
  return h;
}

TreeHierarchy build_hierarchy(SortedPoints points, const TreeParams& params, BuildContext context) {
  return HierarchyBuilder(std::move(points), params, std::move(context)).finish();
}

TreeHierarchy build_hierarchy(std::span<const PointSet> types, const TreeParams& params) {
  for (const auto& t : types)
    if (t.empty()) throw ValidationError("every point type must be nonempty");
  return build_hierarchy(sort_jointly(types), params);
}

}  // namespace ztree
