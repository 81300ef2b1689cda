#include "ztree/fof.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ztree/parallel.hpp"

namespace ztree {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Index load(std::span<Index> labels, Index i) {
  return std::atomic_ref<Index>(labels[i]).load(std::memory_order_acquire);
}

Index find_root_atomic(std::span<Index> labels, Index i) {
  Index next = load(labels, i);
  while (next != i) {
    i = next;
    next = load(labels, i);
  }
  return i;
}

void link_any(std::span<Index> labels, Index a, Index b, bool concurrent) {
  if (concurrent)
    link_atomic(labels, a, b);
  else
    link(labels, a, b);
}

Index root_any(std::span<Index> labels, Index i, bool concurrent) {
  return concurrent ? find_root_atomic(labels, i) : find_root(labels, i);
}

template <class Fn>
void for_each(Index n, bool concurrent, Fn&& fn, Index min_chunk) {
  if (concurrent)
    parallel_for(n, fn, min_chunk);
  else
    for (Index i = 0; i < n; ++i) fn(i);
}

}  // namespace

double linking_length(double alpha, double volume, Index n, int dims) {
  if (!(volume > 0) || n < 1 || dims < 1) throw UsageError("linking_length needs volume > 0, n >= 1");
  if (dims == 3) return alpha * std::cbrt(volume / static_cast<double>(n));
  return alpha * std::pow(volume / static_cast<double>(n), 1.0 / dims);
}

Index find_root(std::span<const Index> labels, Index i) {
  while (labels[i] != i) i = labels[i];
  return i;
}

void link(std::span<Index> labels, Index a, Index b) {
  Index ra = find_root(labels, a);
  Index rb = find_root(labels, b);
  if (ra == rb) return;
  if (ra < rb) std::swap(ra, rb);
  labels[ra] = rb;
}

void link_atomic(std::span<Index> labels, Index a, Index b) {
  for (;;) {
    Index ra = find_root_atomic(labels, a);
    Index rb = find_root_atomic(labels, b);
    if (ra == rb) return;
    if (ra < rb) std::swap(ra, rb);
    Index expected = ra;
    // only a root may be redirected; a lost race means ra gained a parent
    if (std::atomic_ref<Index>(labels[ra]).compare_exchange_strong(expected, rb,
                                                                   std::memory_order_acq_rel))
      return;
    a = ra;
    b = rb;
  }
}

void contract(std::span<Index> labels) {
  std::vector<Index> roots(labels.size());
  parallel_for(
      static_cast<Index>(labels.size()),
      [&](Index i) { roots[i] = find_root(labels, i); }, 4096);
  std::copy(roots.begin(), roots.end(), labels.begin());
}

NodeLabels parent_to_node(std::span<const Index> parent_labels, std::span<const char> parent_full,
                          std::span<const Index> parent_spl) {
  NodeLabels out;
  const Index n = parent_spl.empty() ? 0 : parent_spl.back();
  out.labels.resize(n);
  out.full_in.assign(n, 0);
  const Index parents = static_cast<Index>(parent_spl.size()) - 1;
  // first child of the group's lowest member that has children; that is the root
  // itself unless the root's children were never fetched
  std::vector<Index> first(parents, -1);
  for (Index i = 0; i < parents; ++i) {
    if (!parent_full[i] || parent_spl[i] == parent_spl[i + 1]) continue;
    Index& f = first[parent_labels[i]];
    if (f < 0) f = parent_spl[i];
  }
  for (Index i = 0; i < parents; ++i) {
    const bool full = parent_full[i] != 0;
    for (Index c = parent_spl[i]; c < parent_spl[i + 1]; ++c) {
      out.labels[c] = full ? first[parent_labels[i]] : c;
      out.full_in[c] = full ? 1 : 0;
    }
  }
  return out;
}

NodeInteraction fof_node_interaction(Index a, Index b, BoxRef box_a, BoxRef box_b, int dims,
                                     std::span<const Index> labels, double r_link,
                                     const PeriodicDomain& domain) {
  if (find_root(labels, a) == find_root(labels, b)) return NodeInteraction::kDiscard;
  if (d_low(box_a, box_b, dims, domain) > r_link * kBoundSlack) return NodeInteraction::kDiscard;
  if (d_up(box_a, box_b, dims, domain) * kBoundSlack <= r_link) return NodeInteraction::kLink;
  return NodeInteraction::kRefine;
}

InteractionList fof_plane(const InteractionList& parents, std::span<const Index> parent_spl,
                          const PlaneView& nodes, std::span<Index> labels,
                          std::span<const char> full_in, std::vector<char>& full, double r_link,
                          const PeriodicDomain& domain, bool concurrent) {
  const int d = nodes.dims;
  const Index n = static_cast<Index>(labels.size());
  const Index receivers = parents.receivers();
  std::vector<char> self_linked(n, 0);

  for_each(
      receivers, concurrent,
      [&](Index i) {
        for (Index j = parents.ispl[i]; j < parents.ispl[i + 1]; ++j) {
          const Index sp = parents.isrc[j];
          for (Index a = parent_spl[i]; a < parent_spl[i + 1]; ++a) {
            const BoxRef ba = nodes.box(a);
            for (Index b = parent_spl[sp]; b < parent_spl[sp + 1]; ++b) {
              if (a == b) {
                if (!full_in[a] && d_up(ba, ba, d, domain) * kBoundSlack <= r_link)
                  self_linked[a] = 1;
                continue;
              }
              if (root_any(labels, a, concurrent) == root_any(labels, b, concurrent)) continue;
              if (d_up(ba, nodes.box(b), d, domain) * kBoundSlack <= r_link)
                link_any(labels, a, b, concurrent);
            }
          }
        }
      },
      4);
  contract(labels);

  std::vector<char> root_full(n, 0);
  for (Index a = 0; a < n; ++a)
    if (labels[a] != a || self_linked[a] || full_in[a]) root_full[labels[a]] = 1;
  full.resize(n);
  for (Index a = 0; a < n; ++a) full[a] = root_full[labels[a]];

  auto visit = [&](Index i, auto&& emit) {
    for (Index a = parent_spl[i]; a < parent_spl[i + 1]; ++a) {
      const BoxRef ba = nodes.box(a);
      for (Index j = parents.ispl[i]; j < parents.ispl[i + 1]; ++j) {
        const Index sp = parents.isrc[j];
        for (Index b = parent_spl[sp]; b < parent_spl[sp + 1]; ++b) {
          if (a == b) {
            if (!full[a]) emit(a, b, 0.0);
            continue;
          }
          if (labels[a] == labels[b]) continue;
          const double lo = d_low(ba, nodes.box(b), d, domain);
          if (lo <= r_link * kBoundSlack) emit(a, b, lo);
        }
      }
    }
  };
  const Index n_recv = receivers > 0 ? parent_spl[receivers] : 0;
  std::vector<Index> counts(n_recv, 0);
  for_each(
      receivers, concurrent,
      [&](Index i) { visit(i, [&](Index a, Index, double) { ++counts[a]; }); }, 4);
  InteractionList out;
  out.ispl = exclusive_scan_prepend0(counts);
  out.isrc.resize(out.ispl.back());
  out.r_low.resize(out.ispl.back());
  for_each(
      receivers, concurrent,
      [&](Index i) {
        const Index a0 = parent_spl[i];
        std::vector<Index> cursor(out.ispl.begin() + a0, out.ispl.begin() + parent_spl[i + 1]);
        visit(i, [&](Index a, Index b, double lo) {
          Index& at = cursor[a - a0];
          out.isrc[at] = b;
          out.r_low[at] = lo;
          ++at;
        });
      },
      4);
  return out;
}

void fof_leaves(const InteractionList& leaves, const LeafPoints& points, std::span<Index> labels,
                double r_link, const PeriodicDomain& domain, bool concurrent) {
  const int d = points.dims;
  const auto du = static_cast<std::size_t>(d);
  const double r2_hi = r_link * r_link * (1 + 1e-9);
  for_each(
      leaves.receivers(), concurrent,
      [&](Index a) {
        for (Index j = leaves.ispl[a]; j < leaves.ispl[a + 1]; ++j) {
          const Index b = leaves.isrc[j];
          for (Index x = points.spl[a]; x < points.spl[a + 1]; ++x) {
            const double* px = points.pos.data() + x * du;
            const Index y0 = a == b ? x + 1 : points.spl[b];
            for (Index y = y0; y < points.spl[b + 1]; ++y) {
              const double d2 = distance2(px, points.pos.data() + y * du, d, domain);
              if (d2 <= r2_hi && std::sqrt(d2) <= r_link) link_any(labels, x, y, concurrent);
            }
          }
        }
      },
      8);
  contract(labels);
}

std::vector<Index> fof_walk(const TreeHierarchy& h, double r_link, const PeriodicDomain& domain,
                            const FofOptions& opt) {
  const auto super = super_node_splits(h.top().size(), opt.ngr);
  const Index n_super = static_cast<Index>(super.size()) - 1;
  InteractionList parents = dense_init(n_super);
  std::vector<Index> plabels(n_super);
  std::iota(plabels.begin(), plabels.end(), Index{0});
  std::vector<char> pfull(n_super, 0);
  std::span<const Index> pspl = super;
  for (int p = h.n_planes() - 1; p >= 0; --p) {
    const auto& plane = h.planes[p];
    NodeLabels nl = parent_to_node(plabels, pfull, pspl);
    const PlaneView view{h.dims, plane.center.data(), plane.half_extent.data(), {}};
    std::vector<char> full;
    parents = fof_plane(parents, pspl, view, nl.labels, nl.full_in, full, r_link, domain,
                        opt.concurrent);
    plabels = std::move(nl.labels);
    pfull = std::move(full);
    pspl = plane.spl;
  }
  const auto& leaf_spl = h.planes.front().point_spl;
  NodeLabels pts = parent_to_node(plabels, pfull, leaf_spl);
  const LeafPoints points{h.dims, leaf_spl, h.positions, h.id};
  fof_leaves(parents, points, pts.labels, r_link, domain, opt.concurrent);
  return pts.labels;
}

std::vector<Index> FofResult::input_labels() const {
  std::vector<Index> out(order.size());
  for (std::size_t z = 0; z < order.size(); ++z) out[order[z]] = order[igroup[z]];
  return out;
}

Index FofResult::n_groups() const {
  Index n = 0;
  for (std::size_t z = 0; z < igroup.size(); ++z) n += igroup[z] == static_cast<Index>(z);
  return n;
}

FofResult fof(const PointSet& points, double r_link, const PeriodicDomain& domain,
              const FofOptions& opt) {
  const auto start = Clock::now();
  if (!(r_link > 0) || !std::isfinite(r_link)) throw UsageError("linking length must be > 0");
  points.validate();
  if (points.empty()) throw ValidationError("no points");
  domain.validate(points.dims);
  FofResult res;
  res.r_link = r_link;

  auto t0 = Clock::now();
  PointSet wrapped = points;
  domain.wrap(wrapped.positions, wrapped.dims);
  res.order = z_sort(wrapped.positions, wrapped.dims);
  res.sorted = gather(wrapped, res.order);
  res.times.sort_ms = ms_since(t0);

  t0 = Clock::now();
  SortedPoints sp{res.sorted.dims, 1, res.sorted.positions, std::vector<int>(res.order.size(), 0),
                  {}};
  sp.id.resize(res.order.size());
  std::iota(sp.id.begin(), sp.id.end(), Index{0});
  const TreeHierarchy h = build_hierarchy(std::move(sp), opt.tree);
  res.times.tree_ms = ms_since(t0);

  t0 = Clock::now();
  res.igroup = fof_walk(h, r_link, domain, opt);
  res.times.walk_ms = ms_since(t0);
  res.times.total_ms = ms_since(start);
  return res;
}

std::vector<Index> group_order_sort(std::span<const Index> labels) {
  std::vector<Index> perm(labels.size());
  std::iota(perm.begin(), perm.end(), Index{0});
  std::stable_sort(perm.begin(), perm.end(),
                   [&](Index a, Index b) { return labels[a] < labels[b]; });
  return perm;
}

CatalogueEntry group_moments(const PointSet& points, std::span<const Index> rows,
                             const PeriodicDomain& domain) {
  const int d = points.dims;
  CatalogueEntry e;
  e.count = static_cast<Index>(rows.size());
  const auto ref = points.point(rows.front());
  std::vector<double> s(d, 0.0), lo(d, 0.0), hi(d, 0.0), sv;
  if (points.has_velocities()) sv.assign(d, 0.0);
  double q = 0;
  for (const Index r : rows) {
    const double m = points.mass(r);
    const auto x = points.point(r);
    double r2 = 0;
    for (int i = 0; i < d; ++i) {
      const double dx = wrap_component(x[i] - ref[i], domain.period(i));
      s[i] += m * dx;
      r2 += dx * dx;
      lo[i] = std::min(lo[i], dx);
      hi[i] = std::max(hi[i], dx);
      if (!sv.empty()) sv[i] += m * points.velocities[r * d + i];
    }
    q += m * r2;
    e.mass += m;
  }
  e.com.resize(d);
  double mean2 = 0;
  for (int i = 0; i < d; ++i) {
    const double mean = s[i] / e.mass;
    mean2 += mean * mean;
    double c = ref[i] + mean;
    const double period = domain.period(i);
    if (period > 0) {
      c -= period * std::floor(c / period);
      if (c >= period) c = 0;
      if (hi[i] - lo[i] >= 0.5 * period) e.compact = false;
    }
    e.com[i] = c;
  }
  if (!sv.empty()) {
    e.com_velocity.resize(d);
    for (int i = 0; i < d; ++i) e.com_velocity[i] = sv[i] / e.mass;
  }
  e.inertia_radius = std::sqrt(std::max(q / e.mass - mean2, 0.0));
  return e;
}

Catalogue reduce_catalogue(const PointSet& points, std::span<const Index> labels, Index min_count,
                           const PeriodicDomain& domain) {
  Catalogue cat;
  const auto perm = group_order_sort(labels);
  std::size_t i = 0;
  while (i < perm.size()) {
    std::size_t j = i;
    while (j < perm.size() && labels[perm[j]] == labels[perm[i]]) ++j;
    const std::span<const Index> rows(perm.data() + i, j - i);
    if (static_cast<Index>(rows.size()) < min_count) {
      for (const Index r : rows) cat.dropped_mass += points.mass(r);
      ++cat.dropped_groups;
    } else {
      CatalogueEntry e = group_moments(points, rows, domain);
      e.group_id = labels[perm[i]];
      cat.entries.push_back(std::move(e));
    }
    i = j;
  }
  return cat;
}

}  // namespace ztree
