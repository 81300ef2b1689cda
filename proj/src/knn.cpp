#include "ztree/knn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ztree/parallel.hpp"

namespace ztree {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

CountHeap::CountHeap(int cap) : capacity(cap) {
  if (cap < 1 || cap > kMaxCapacity) throw UsageError("count heap capacity must be in [1, 32]");
}

Index CountHeap::total() const {
  Index t = 0;
  for (int i = 0; i < size; ++i) t += entries[i].count;
  return t;
}

double radius_of_count(const CountHeap& h, Index k) {
  Index cum = 0;
  for (int i = 0; i < h.size; ++i) {
    cum += h.entries[i].count;
    if (cum >= k) return h.entries[i].radius;
  }
  return kInf;
}

void countheap_insert(CountHeap& h, double r, Index n, Index k) {
  int pos = 0;
  while (pos < h.size && h.entries[pos].radius <= r) ++pos;
  if (h.size < h.capacity) {
    for (int i = h.size; i > pos; --i) h.entries[i] = h.entries[i - 1];
    h.entries[pos] = {r, n};
    ++h.size;
    return;
  }
  // full: the new entry pushes out the last one unless that loses the k-th count
  const Index remaining = h.total() + n - (pos == h.size ? n : h.entries[h.size - 1].count);
  if (remaining >= k) {
    if (pos == h.size) return;
    for (int i = h.size - 1; i > pos; --i) h.entries[i] = h.entries[i - 1];
    h.entries[pos] = {r, n};
    return;
  }
  if (pos < h.size) {
    h.entries[pos].count += n;
  } else {
    h.entries[h.size - 1].count += n;
    h.entries[h.size - 1].radius = r;
  }
}

NeighborHeap::NeighborHeap(int cap) : capacity(cap) {
  if (cap < 1 || cap > kMaxCapacity) throw UsageError("neighbour heap capacity must be in [1, 32]");
}

void NeighborHeap::insert(double d2, Index id) {
  auto less = [](double a2, Index ai, const Entry& b) {
    return a2 < b.d2 || (a2 == b.d2 && ai < b.id);
  };
  if (full() && !less(d2, id, last())) return;
  int i = full() ? size - 1 : size;
  while (i > 0 && less(d2, id, entries[i - 1])) {
    entries[i] = entries[i - 1];
    --i;
  }
  entries[i] = {d2, id};
  if (!full()) ++size;
}

std::vector<double> find_rmax(const InteractionList& parents, std::span<const Index> recv_parent_spl,
                              const PlaneView& recv, std::span<const Index> src_parent_spl,
                              const PlaneView& src, Index k, const PeriodicDomain& domain,
                              const WalkOptions& opt) {
  std::vector<double> rmax(recv.size(), 0.0);
  const int d = recv.dims;
  const bool early = opt.exit_early();
  parallel_for(
      parents.receivers(),
      [&](Index i) {
        const Index c0 = recv_parent_spl[i];
        const Index c1 = recv_parent_spl[i + 1];
        std::vector<Index> active;
        for (Index c = c0; c < c1; ++c)
          if (recv.count[c] > 0) active.push_back(c);
        if (active.empty()) return;
        std::vector<CountHeap> heaps(active.size(), CountHeap(opt.heap_capacity));
        std::vector<double> est(active.size(), kInf);
        for (Index j = parents.ispl[i]; j < parents.ispl[i + 1]; ++j) {
          if (early) {
            const double worst = *std::max_element(est.begin(), est.end());
            if (parents.r_low[j] > worst * kBoundSlack) break;
          }
          const Index sp = parents.isrc[j];
          for (Index sc = src_parent_spl[sp]; sc < src_parent_spl[sp + 1]; ++sc) {
            const Index n = src.count[sc];
            if (n == 0) continue;
            const BoxRef sb = src.box(sc);
            for (std::size_t a = 0; a < active.size(); ++a) {
              const double r = d_up(recv.box(active[a]), sb, d, domain);
              if (r < est[a]) {
                countheap_insert(heaps[a], r, n, k);
                est[a] = radius_of_count(heaps[a], k);
              }
            }
          }
        }
        for (std::size_t a = 0; a < active.size(); ++a) rmax[active[a]] = est[a];
      },
      4);
  return rmax;
}

InteractionList node_to_node(const InteractionList& parents,
                             std::span<const Index> recv_parent_spl, const PlaneView& recv,
                             std::span<const Index> src_parent_spl, const PlaneView& src,
                             std::span<const double> rmax, const PeriodicDomain& domain,
                             const WalkOptions& opt) {
  const int d = recv.dims;
  const bool early = opt.exit_early();
  // count and insert share one traversal so both passes agree exactly
  auto visit = [&](Index i, auto&& emit) {
    for (Index c = recv_parent_spl[i]; c < recv_parent_spl[i + 1]; ++c) {
      if (recv.count[c] == 0) continue;
      const double limit = rmax[c] * kBoundSlack;
      const BoxRef rb = recv.box(c);
      for (Index j = parents.ispl[i]; j < parents.ispl[i + 1]; ++j) {
        if (early && parents.r_low[j] > limit * kBoundSlack) break;
        const Index sp = parents.isrc[j];
        for (Index sc = src_parent_spl[sp]; sc < src_parent_spl[sp + 1]; ++sc) {
          if (src.count[sc] == 0) continue;
          const double lo = d_low(rb, src.box(sc), d, domain);
          if (lo <= limit) emit(c, sc, lo);
        }
      }
    }
  };
  std::vector<Index> counts(recv.size(), 0);
  parallel_for(
      parents.receivers(),
      [&](Index i) { visit(i, [&](Index c, Index, double) { ++counts[c]; }); }, 4);
  InteractionList out;
  out.ispl = exclusive_scan_prepend0(counts);
  out.isrc.resize(out.ispl.back());
  out.r_low.resize(out.ispl.back());
  parallel_for(
      parents.receivers(),
      [&](Index i) {
        std::vector<Index> cursor;
        const Index c0 = recv_parent_spl[i];
        cursor.assign(out.ispl.begin() + c0, out.ispl.begin() + recv_parent_spl[i + 1]);
        visit(i, [&](Index c, Index sc, double lo) {
          Index& at = cursor[c - c0];
          out.isrc[at] = sc;
          out.r_low[at] = lo;
          ++at;
        });
      },
      4);
  if (opt.sort_segments) sort_segments(out);
  return out;
}

void leaf_to_leaf(const InteractionList& leaves, const LeafPoints& queries,
                  const LeafPoints& sources, int kc, std::span<double> floor_d2,
                  std::span<Index> floor_id, std::span<double> d2_out, std::span<Index> id_out,
                  const PeriodicDomain& domain, const WalkOptions& opt) {
  const int d = queries.dims;
  const auto du = static_cast<std::size_t>(d);
  const bool early = opt.exit_early();
  parallel_for(
      leaves.receivers(),
      [&](Index leaf) {
        for (Index q = queries.spl[leaf]; q < queries.spl[leaf + 1]; ++q) {
          const double* xq = queries.pos.data() + q * du;
          const double f2 = floor_d2[q];
          const Index fid = floor_id[q];
          NeighborHeap heap(kc);
          for (Index j = leaves.ispl[leaf]; j < leaves.ispl[leaf + 1]; ++j) {
            if (early && heap.full() &&
                leaves.r_low[j] > std::sqrt(heap.last().d2) * kBoundSlack)
              break;
            const Index s = leaves.isrc[j];
            for (Index p = sources.spl[s]; p < sources.spl[s + 1]; ++p) {
              const double d2 = distance2(xq, sources.pos.data() + p * du, d, domain);
              const Index id = sources.id[p];
              if (d2 < f2 || (d2 == f2 && id <= fid)) continue;
              heap.insert(d2, id);
            }
          }
          if (!heap.full()) throw Error("leaf stage found fewer neighbours than requested");
          for (int a = 0; a < kc; ++a) {
            d2_out[q * kc + a] = heap.entries[a].d2;
            id_out[q * kc + a] = heap.entries[a].id;
          }
          floor_d2[q] = heap.last().d2;
          floor_id[q] = heap.last().id;
        }
      },
      8);
}

void leaf_chunks(const InteractionList& leaves, const LeafPoints& queries,
                 const LeafPoints& sources, Index k, int k_max, const PeriodicDomain& domain,
                 const WalkOptions& opt, std::vector<Index>& indices,
                 std::vector<double>& distances) {
  if (k_max < 1 || k_max > NeighborHeap::kMaxCapacity)
    throw UsageError("k_max must be in [1, 32]");
  const Index nq = queries.spl.empty() ? 0 : queries.spl.back();
  indices.assign(nq * k, 0);
  distances.assign(nq * k, 0.0);
  std::vector<double> floor_d2(nq, -1.0);
  std::vector<Index> floor_id(nq, -1);
  std::vector<double> d2;
  std::vector<Index> id;
  for (Index off = 0; off < k; off += k_max) {
    const int kc = static_cast<int>(std::min<Index>(k_max, k - off));
    d2.assign(nq * kc, 0.0);
    id.assign(nq * kc, 0);
    leaf_to_leaf(leaves, queries, sources, kc, floor_d2, floor_id, d2, id, domain, opt);
    for (Index q = 0; q < nq; ++q)
      for (int a = 0; a < kc; ++a) {
        indices[q * k + off + a] = id[q * kc + a];
        distances[q * k + off + a] = std::sqrt(d2[q * kc + a]);
      }
  }
}

std::vector<Index> type_counts(const TreeHierarchy& h, int plane, int type) {
  const auto& pl = h.planes[plane];
  std::vector<Index> out(pl.size());
  for (Index i = 0; i < pl.size(); ++i) out[i] = pl.count[i * h.n_types + type];
  return out;
}

KnnResult knn_walk(const TreeHierarchy& h, int source_type, int query_type, Index k,
                   const PeriodicDomain& domain, const KnnOptions& opt) {
  KnnResult res;
  res.k = k;
  res.order = RowOrder::kZ;
  const int n_planes = h.n_planes();
  auto t0 = Clock::now();
  std::vector<std::vector<Index>> src_counts(n_planes), qry_counts(n_planes);
  for (int p = 0; p < n_planes; ++p) {
    src_counts[p] = type_counts(h, p, source_type);
    qry_counts[p] = query_type == source_type ? src_counts[p] : type_counts(h, p, query_type);
  }
  auto view = [&](int p, const std::vector<Index>& counts) {
    return PlaneView{h.dims, h.planes[p].center.data(), h.planes[p].half_extent.data(), counts};
  };
  const auto super = super_node_splits(h.top().size(), opt.ngr);
  InteractionList il = dense_init(static_cast<Index>(super.size()) - 1);
  std::span<const Index> parent_spl = super;
  std::vector<double> rmax;
  for (int p = n_planes - 1; p >= 0; --p) {
    const PlaneView recv = view(p, qry_counts[p]);
    const PlaneView src = view(p, src_counts[p]);
    rmax = find_rmax(il, parent_spl, recv, parent_spl, src, k, domain, opt.walk);
    il = node_to_node(il, parent_spl, recv, parent_spl, src, rmax, domain, opt.walk);
    parent_spl = h.planes[p].spl;
  }
  res.times.walk_ms = ms_since(t0);
  res.leaf_rmax = rmax;
  res.leaf_query_spl = h.leaf_splits[query_type];

  t0 = Clock::now();
  const LeafPoints queries{h.dims, h.leaf_splits[query_type], h.type_positions[query_type],
                           h.type_ids[query_type]};
  const LeafPoints sources{h.dims, h.leaf_splits[source_type], h.type_positions[source_type],
                           h.type_ids[source_type]};
  leaf_chunks(il, queries, sources, k, opt.k_max, domain, opt.walk, res.indices, res.distances);
  res.query_index = h.type_ids[query_type];
  res.n_query = static_cast<Index>(res.query_index.size());
  res.times.leaf_ms = ms_since(t0);
  return res;
}

void to_input_order(KnnResult& r) {
  if (r.order == RowOrder::kInput) return;
  const Index k = r.k;
  std::vector<Index> idx(r.indices.size());
  std::vector<double> dist(r.distances.size());
  for (Index row = 0; row < r.n_query; ++row) {
    const Index dst = r.query_index[row];
    std::copy_n(r.indices.begin() + row * k, k, idx.begin() + dst * k);
    std::copy_n(r.distances.begin() + row * k, k, dist.begin() + dst * k);
  }
  r.indices = std::move(idx);
  r.distances = std::move(dist);
  for (Index row = 0; row < r.n_query; ++row) r.query_index[row] = row;
  r.order = RowOrder::kInput;
}

namespace {

KnnResult run_knn(const PointSet& sources, const PointSet* queries, Index k,
                  const PeriodicDomain& domain, const KnnOptions& opt) {
  const auto start = Clock::now();
  if (k < 1) throw UsageError("k must be >= 1");
  sources.validate();
  if (sources.empty()) throw ValidationError("no source points");
  if (k > sources.size())
    throw ValidationError("k = " + std::to_string(k) + " exceeds the number of sources (" +
                          std::to_string(sources.size()) + ")");
  if (queries) {
    queries->validate();
    if (queries->empty()) throw ValidationError("no query points");
    if (queries->dims != sources.dims) throw ValidationError("query and source dimensions differ");
  }
  domain.validate(sources.dims);

  auto t0 = Clock::now();
  std::vector<PointSet> types;
  types.emplace_back(sources.dims, sources.positions);
  if (queries) types.emplace_back(queries->dims, queries->positions);
  for (auto& t : types) domain.wrap(t.positions, t.dims);
  if (queries && opt.queries_first) std::swap(types[0], types[1]);
  SortedPoints sorted = sort_jointly(types);
  const double sort_ms = ms_since(t0);

  t0 = Clock::now();
  TreeHierarchy h = build_hierarchy(std::move(sorted), opt.tree);
  const double tree_ms = ms_since(t0);

  int src_type = 0;
  int qry_type = 0;
  if (queries) {
    src_type = opt.queries_first ? 1 : 0;
    qry_type = 1 - src_type;
  }
  KnnResult res = knn_walk(h, src_type, qry_type, k, domain, opt);
  res.times.sort_ms = sort_ms;
  res.times.tree_ms = tree_ms;
  t0 = Clock::now();
  if (opt.order == RowOrder::kInput) to_input_order(res);
  res.times.reorder_ms = ms_since(t0);
  res.times.total_ms = ms_since(start);
  return res;
}

}  // namespace

KnnResult knn_query(const PointSet& sources, const PointSet& queries, Index k,
                    const PeriodicDomain& domain, const KnnOptions& opt) {
  return run_knn(sources, &queries, k, domain, opt);
}

KnnResult knn_self(const PointSet& points, Index k, const PeriodicDomain& domain,
                   const KnnOptions& opt) {
  return run_knn(points, nullptr, k, domain, opt);
}

}  // namespace ztree
