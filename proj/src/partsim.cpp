#include "ztree/partsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "ztree/zorder.hpp"

namespace ztree::partsim {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class T>
using Mail = std::vector<std::vector<std::vector<T>>>;

template <class T>
Mail<T> empty_mail(int n) {
  return Mail<T>(n, std::vector<std::vector<T>>(n));
}

struct PointRec {
  std::vector<double> x;
  int type = 0;
  Index id = 0;
  double mass = 0;
  std::vector<double> v;
};

PointRec take(const RankPoints& rp, Index i) {
  PointRec rec;
  const auto p = rp.point(i);
  rec.x.assign(p.begin(), p.end());
  rec.type = rp.type[i];
  rec.id = rp.id[i];
  if (!rp.mass.empty()) rec.mass = rp.mass[i];
  if (!rp.vel.empty())
    rec.v.assign(rp.vel.begin() + i * rp.dims, rp.vel.begin() + (i + 1) * rp.dims);
  return rec;
}

void put(RankPoints& rp, const PointRec& rec, bool masses, bool velocities) {
  rp.pos.insert(rp.pos.end(), rec.x.begin(), rec.x.end());
  rp.type.push_back(rec.type);
  rp.id.push_back(rec.id);
  if (masses) rp.mass.push_back(rec.mass);
  if (velocities) rp.vel.insert(rp.vel.end(), rec.v.begin(), rec.v.end());
}

/// z-order, then (type, id): the order of a stable joint sort.
void sort_rank(RankPoints& rp) {
  const auto d = static_cast<std::size_t>(rp.dims);
  std::vector<Index> order(rp.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const auto pa = rp.point(a);
    const auto pb = rp.point(b);
    if (z_less(pa, pb)) return true;
    if (z_less(pb, pa)) return false;
    return std::pair(rp.type[a], rp.id[a]) < std::pair(rp.type[b], rp.id[b]);
  });
  RankPoints out;
  out.dims = rp.dims;
  out.pos.reserve(rp.pos.size());
  for (const Index i : order) {
    out.pos.insert(out.pos.end(), rp.pos.begin() + i * d, rp.pos.begin() + (i + 1) * d);
    out.type.push_back(rp.type[i]);
    out.id.push_back(rp.id[i]);
    if (!rp.mass.empty()) out.mass.push_back(rp.mass[i]);
    if (!rp.vel.empty())
      out.vel.insert(out.vel.end(), rp.vel.begin() + i * d, rp.vel.begin() + (i + 1) * d);
  }
  rp = std::move(out);
}

/// Sends every point to the rank chosen by dest(rank, local index).
template <class Dest>
void redistribute(Partition& part, Transport& net, Dest&& dest, const std::string& tag) {
  const int n = net.size();
  auto out = empty_mail<PointRec>(n);
  bool masses = false;
  bool velocities = false;
  int dims = 0;
  for (int r = 0; r < n; ++r) {
    const RankPoints& rp = part.ranks[r];
    dims = std::max(dims, rp.dims);
    masses = masses || !rp.mass.empty();
    velocities = velocities || !rp.vel.empty();
    for (Index i = 0; i < rp.size(); ++i) out[r][dest(r, i)].push_back(take(rp, i));
  }
  auto in = net.exchange(std::move(out), tag);
  for (int r = 0; r < n; ++r) {
    RankPoints rp;
    rp.dims = dims;
    for (int src = 0; src < n; ++src)
      for (const auto& rec : in[r][src]) put(rp, rec, masses, velocities);
    part.ranks[r] = std::move(rp);
  }
}

int global_types(const Partition& part) {
  int t = 0;
  for (const auto& rp : part.ranks)
    for (const int ty : rp.type) t = std::max(t, ty + 1);
  return std::max(t, 1);
}

/// Nodes of one plane visible to a rank: local nodes first, then remote copies.
struct SourceSpace {
  int dims = 0;
  Index n_local = 0;
  std::vector<double> center;
  std::vector<double> half;
  std::vector<Index> count;
  std::vector<int> origin_rank;
  std::vector<Index> origin_index;
  std::vector<Index> first_point;  // on the origin rank

  [[nodiscard]] Index size() const { return static_cast<Index>(count.size()); }
  [[nodiscard]] PlaneView view() const { return {dims, center.data(), half.data(), count}; }

  void append(int rank, Index index, Index first, Index n, std::span<const double> c,
              std::span<const double> h) {
    center.insert(center.end(), c.begin(), c.end());
    half.insert(half.end(), h.begin(), h.end());
    count.push_back(n);
    origin_rank.push_back(rank);
    origin_index.push_back(index);
    first_point.push_back(first);
  }
};

struct NodeRec {
  Index parent = 0;  // requested node on the owner
  Index index = 0;   // child node on the owner
  Index first_point = 0;
  Index count = 0;
  std::vector<double> box;  // center then half extent
};

Index node_count(const TreeHierarchy& h, int plane, Index node, int type) {
  if (type >= 0) return h.count(plane, node, type);
  Index n = 0;
  for (int t = 0; t < h.n_types; ++t) n += h.count(plane, node, t);
  return n;
}

void append_local(SourceSpace& s, const TreeHierarchy& h, int plane, int rank, int type) {
  const auto& pl = h.planes[plane];
  const auto d = static_cast<std::size_t>(h.dims);
  for (Index i = 0; i < pl.size(); ++i)
    s.append(rank, i, pl.point_spl[i], node_count(h, plane, i, type),
             std::span<const double>(pl.center.data() + i * d, d),
             std::span<const double>(pl.half_extent.data() + i * d, d));
  s.n_local = pl.size();
}

/// Top plane of every rank, with super node splits combined in the same order.
std::vector<SourceSpace> top_spaces(const std::vector<TreeHierarchy>& trees, Index ngr, int type,
                                    std::vector<std::vector<Index>>& local_super,
                                    std::vector<std::vector<Index>>& combined_super,
                                    Transport& net) {
  const int n = net.size();
  const int top = trees[0].n_planes() - 1;
  std::vector<std::vector<Index>> supers(n);
  for (int r = 0; r < n; ++r) supers[r] = super_node_splits(trees[r].planes[top].size(), ngr);
  supers = net.allgather(std::move(supers), "top_nodes");
  std::vector<SourceSpace> spaces(n);
  local_super.assign(n, {});
  combined_super.assign(n, {});
  for (int r = 0; r < n; ++r) {
    SourceSpace& s = spaces[r];
    s.dims = trees[r].dims;
    append_local(s, trees[r], top, r, type);
    local_super[r] = supers[r];
    combined_super[r] = supers[r];
    for (int q = 0; q < n; ++q) {
      if (q == r) continue;
      const Index base = s.size();
      const auto& pl = trees[q].planes[top];
      const auto d = static_cast<std::size_t>(trees[q].dims);
      for (Index i = 0; i < pl.size(); ++i)
        s.append(q, i, pl.point_spl[i], node_count(trees[q], top, i, type),
                 std::span<const double>(pl.center.data() + i * d, d),
                 std::span<const double>(pl.half_extent.data() + i * d, d));
      for (std::size_t j = 1; j < supers[q].size(); ++j)
        combined_super[r].push_back(base + supers[q][j]);
    }
  }
  return spaces;
}

std::vector<std::vector<char>> referenced(const std::vector<InteractionList>& lists,
                                          const std::vector<SourceSpace>& spaces) {
  std::vector<std::vector<char>> out(lists.size());
  for (std::size_t r = 0; r < lists.size(); ++r) {
    out[r].assign(spaces[r].size(), 0);
    for (const Index s : lists[r].isrc) out[r][s] = 1;
  }
  return out;
}

/// Children (at `plane`) of every local node and of every referenced remote node.
/// combined_spl[r] indexes the returned spaces from the parents' space.
std::vector<SourceSpace> descend(const std::vector<TreeHierarchy>& trees, int plane,
                                 const std::vector<SourceSpace>& parents,
                                 const std::vector<std::vector<char>>& refs, int type,
                                 std::vector<std::vector<Index>>& combined_spl,
                                 RequestStats& stats, Transport& net) {
  const int n = net.size();
  auto req = empty_mail<Index>(n);
  for (int r = 0; r < n; ++r) {
    const SourceSpace& s = parents[r];
    std::set<std::pair<int, Index>> seen;
    for (Index e = s.n_local; e < s.size(); ++e) {
      if (!refs[r][e]) continue;
      req[r][s.origin_rank[e]].push_back(s.origin_index[e]);
      seen.emplace(s.origin_rank[e], s.origin_index[e]);
      ++stats.node_requests;
    }
    stats.unique_node_requests += static_cast<Index>(seen.size());
  }
  auto in = net.exchange(std::move(req), "node_request");
  auto reply = empty_mail<NodeRec>(n);
  for (int q = 0; q < n; ++q) {
    const TreeHierarchy& h = trees[q];
    const auto& parent_plane = h.planes[plane + 1];
    const auto& pl = h.planes[plane];
    const auto d = static_cast<std::size_t>(h.dims);
    for (int r = 0; r < n; ++r)
      for (const Index node : in[q][r]) {
        if (node < 0 || node >= parent_plane.size())
          throw ProtocolError("request for node " + std::to_string(node) + " on rank " +
                              std::to_string(q) + " cannot be served");
        for (Index c = parent_plane.spl[node]; c < parent_plane.spl[node + 1]; ++c) {
          NodeRec rec{node, c, pl.point_spl[c], node_count(h, plane, c, type), {}};
          rec.box.assign(pl.center.begin() + c * d, pl.center.begin() + (c + 1) * d);
          rec.box.insert(rec.box.end(), pl.half_extent.begin() + c * d,
                         pl.half_extent.begin() + (c + 1) * d);
          reply[q][r].push_back(std::move(rec));
        }
      }
  }
  auto got = net.exchange(std::move(reply), "node_reply");
  std::vector<SourceSpace> out(n);
  combined_spl.assign(n, {});
  for (int r = 0; r < n; ++r) {
    const SourceSpace& s = parents[r];
    SourceSpace& c = out[r];
    c.dims = trees[r].dims;
    append_local(c, trees[r], plane, r, type);
    const auto d = static_cast<std::size_t>(c.dims);
    auto& spl = combined_spl[r];
    const auto& local_spl = trees[r].planes[plane + 1].spl;
    spl.assign(local_spl.begin(), local_spl.end());
    // replies arrive per owner in request order; walk them with one cursor per owner
    std::vector<std::size_t> cursor(n, 0);
    for (Index e = s.n_local; e < s.size(); ++e) {
      if (refs[r][e]) {
        const int q = s.origin_rank[e];
        auto& recs = got[r][q];
        while (cursor[q] < recs.size() && recs[cursor[q]].parent == s.origin_index[e]) {
          const NodeRec& rec = recs[cursor[q]++];
          c.append(q, rec.index, rec.first_point, rec.count,
                   std::span<const double>(rec.box.data(), d),
                   std::span<const double>(rec.box.data() + d, d));
        }
      }
      spl.push_back(c.size());
    }
    stats.remote_nodes_held += c.size() - c.n_local;
  }
  return out;
}

struct LeafRec {
  Index leaf = 0;
  std::vector<double> pos;
  std::vector<Index> id;  // type input id, or point index on the owner
};

/// Points of every local leaf and of every referenced remote leaf. `type` < 0 takes
/// all points and labels them by their index on the owner.
struct LeafSpace {
  std::vector<Index> spl;
  std::vector<double> pos;
  std::vector<Index> id;
  std::vector<int> origin_rank;  // per point
  std::vector<Index> origin_point;
};

std::vector<LeafSpace> fetch_leaves(const std::vector<TreeHierarchy>& trees,
                                    const std::vector<SourceSpace>& leaves,
                                    const std::vector<std::vector<char>>& refs, int type,
                                    RequestStats& stats, Transport& net) {
  const int n = net.size();
  auto req = empty_mail<Index>(n);
  for (int r = 0; r < n; ++r) {
    const SourceSpace& s = leaves[r];
    for (Index e = s.n_local; e < s.size(); ++e)
      if (refs[r][e]) {
        req[r][s.origin_rank[e]].push_back(s.origin_index[e]);
        ++stats.leaf_requests;
      }
  }
  auto in = net.exchange(std::move(req), "leaf_request");
  auto reply = empty_mail<LeafRec>(n);
  auto local_points = [&](const TreeHierarchy& h, Index leaf, LeafRec& rec) {
    const auto d = static_cast<std::size_t>(h.dims);
    if (type >= 0) {
      const auto& spl = h.leaf_splits[type];
      for (Index p = spl[leaf]; p < spl[leaf + 1]; ++p) {
        rec.pos.insert(rec.pos.end(), h.type_positions[type].begin() + p * d,
                       h.type_positions[type].begin() + (p + 1) * d);
        rec.id.push_back(h.type_ids[type][p]);
      }
    } else {
      const auto& spl = h.planes.front().point_spl;
      for (Index p = spl[leaf]; p < spl[leaf + 1]; ++p) {
        rec.pos.insert(rec.pos.end(), h.positions.begin() + p * d,
                       h.positions.begin() + (p + 1) * d);
        rec.id.push_back(p);
      }
    }
  };
  for (int q = 0; q < n; ++q)
    for (int r = 0; r < n; ++r)
      for (const Index leaf : in[q][r]) {
        if (leaf < 0 || leaf >= trees[q].planes.front().size())
          throw ProtocolError("request for leaf " + std::to_string(leaf) + " on rank " +
                              std::to_string(q) + " cannot be served");
        LeafRec rec;
        rec.leaf = leaf;
        local_points(trees[q], leaf, rec);
        reply[q][r].push_back(std::move(rec));
      }
  auto got = net.exchange(std::move(reply), "leaf_reply");
  std::vector<LeafSpace> out(n);
  for (int r = 0; r < n; ++r) {
    const TreeHierarchy& h = trees[r];
    const SourceSpace& s = leaves[r];
    LeafSpace& ls = out[r];
    LeafRec mine;
    const auto& local_spl = type >= 0 ? h.leaf_splits[type] : h.planes.front().point_spl;
    ls.spl.assign(local_spl.begin(), local_spl.end());
    if (type >= 0) {
      ls.pos = h.type_positions[type];
      ls.id = h.type_ids[type];
    } else {
      ls.pos = h.positions;
      ls.id.resize(h.size());
      std::iota(ls.id.begin(), ls.id.end(), Index{0});
    }
    ls.origin_rank.assign(ls.id.size(), r);
    ls.origin_point = ls.id;
    std::vector<std::size_t> cursor(n, 0);
    for (Index e = s.n_local; e < s.size(); ++e) {
      if (refs[r][e]) {
        const int q = s.origin_rank[e];
        const LeafRec& rec = got[r][q][cursor[q]++];
        ls.pos.insert(ls.pos.end(), rec.pos.begin(), rec.pos.end());
        ls.id.insert(ls.id.end(), rec.id.begin(), rec.id.end());
        ls.origin_rank.insert(ls.origin_rank.end(), rec.id.size(), q);
        ls.origin_point.insert(ls.origin_point.end(), rec.id.begin(), rec.id.end());
      }
      ls.spl.push_back(static_cast<Index>(ls.id.size()));
    }
  }
  return out;
}

Partition partition_and_adjust(std::span<const PointSet> types, const TreeParams& tree,
                               const DistOptions& dist, Transport& net) {
  Partition part = partitioned_zsort(types, dist.n_ranks, dist.n_samp, dist.seed, net);
  if (dist.adjust) adjust_domains(part, coarsest_n_max(part.total(), tree), net);
  return part;
}

}  // namespace

Transport::Transport(int n_ranks) : n_ranks_(n_ranks) {
  if (n_ranks < 1) throw UsageError("n_ranks must be >= 1");
}

void Transport::check_shape(std::size_t n, const std::string& tag) const {
  if (n != static_cast<std::size_t>(n_ranks_))
    throw ProtocolError("malformed exchange '" + tag + "'");
}

void Transport::account(const std::string& tag, std::size_t items) {
  ++counters_.messages;
  counters_.items += static_cast<Index>(items);
  ++counters_.by_tag[tag];
}

Index Partition::total() const {
  Index n = 0;
  for (const auto& r : ranks) n += r.size();
  return n;
}

std::vector<Index> Partition::offsets() const {
  std::vector<Index> out{0};
  for (const auto& r : ranks) out.push_back(out.back() + r.size());
  return out;
}

Partition partitioned_zsort(std::span<const PointSet> types, int n_ranks, Index n_samp,
                            std::uint64_t seed, Transport& net) {
  if (n_ranks < 1) throw UsageError("n_ranks must be >= 1");
  if (n_samp < 1) throw UsageError("n_samp must be >= 1");
  if (types.empty()) throw UsageError("no point types");
  if (net.size() != n_ranks) throw UsageError("transport size differs from n_ranks");
  const int dims = types.front().dims;
  bool masses = true;
  bool velocities = true;
  for (const auto& t : types) {
    t.validate();
    if (t.dims != dims) throw ValidationError("point types differ in dimension");
    masses = masses && t.has_masses();
    velocities = velocities && t.has_velocities();
  }
  // initial contiguous chunks of the concatenated input
  RankPoints all;
  all.dims = dims;
  for (int t = 0; t < static_cast<int>(types.size()); ++t) {
    const PointSet& ps = types[t];
    all.pos.insert(all.pos.end(), ps.positions.begin(), ps.positions.end());
    for (Index i = 0; i < ps.size(); ++i) {
      all.type.push_back(t);
      all.id.push_back(i);
    }
    if (masses) all.mass.insert(all.mass.end(), ps.masses.begin(), ps.masses.end());
    if (velocities) all.vel.insert(all.vel.end(), ps.velocities.begin(), ps.velocities.end());
  }
  const Index n = all.size();
  Partition part;
  part.ranks.resize(n_ranks);
  for (int r = 0; r < n_ranks; ++r) {
    RankPoints& rp = part.ranks[r];
    rp.dims = dims;
    const Index lo = n * r / n_ranks;
    const Index hi = n * (r + 1) / n_ranks;
    for (Index i = lo; i < hi; ++i) put(rp, take(all, i), masses, velocities);
  }
  // per-rank samples, gathered everywhere
  std::vector<std::vector<double>> samples(n_ranks);
  for (int r = 0; r < n_ranks; ++r) {
    const RankPoints& rp = part.ranks[r];
    if (rp.size() == 0) continue;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<Index> pick(0, rp.size() - 1);
    for (Index s = 0; s < n_samp; ++s) {
      const auto p = rp.point(pick(rng));
      samples[r].insert(samples[r].end(), p.begin(), p.end());
    }
  }
  samples = net.allgather(std::move(samples), "samples");
  std::vector<double> joint;
  for (const auto& s : samples) joint.insert(joint.end(), s.begin(), s.end());
  const auto order = z_sort(joint, dims);
  std::vector<double> sorted(joint.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy_n(joint.begin() + order[i] * dims, dims, sorted.begin() + i * dims);
  part.splitters = splitters_from_sorted_sample(sorted, dims, n_ranks);

  redistribute(
      part, net, [&](int r, Index i) { return rank_of(part.ranks[r].point(i), part.splitters); },
      "partition");
  for (auto& rp : part.ranks) sort_rank(rp);
  Index biggest = 0;
  for (const auto& rp : part.ranks) biggest = std::max(biggest, rp.size());
  part.imbalance = n > 0 ? static_cast<double>(biggest) * n_ranks / static_cast<double>(n) : 1.0;
  return part;
}

Index coarsest_n_max(Index global_n, const TreeParams& params) {
  const int planes = planned_planes(global_n, params);
  Index n_max = params.n_max0;
  for (int p = 1; p < planes; ++p) n_max *= params.coarsen;
  return n_max;
}

std::vector<Index> adjust_domains(Partition& part, Index n_max_last, Transport& net) {
  const int n_ranks = net.size();
  auto counts = std::vector<Index>(n_ranks);
  for (int r = 0; r < n_ranks; ++r) counts[r] = part.ranks[r].size();
  counts = net.allgather(std::move(counts), "counts");
  std::vector<Index> off{0};
  for (const Index c : counts) off.push_back(off.back() + c);
  const Index n = off.back();
  const int n_types = global_types(part);
  const Index window = n_types * n_max_last + 1;
  auto owner = [&](Index g) {
    return static_cast<int>(std::upper_bound(off.begin(), off.end(), g) - off.begin()) - 1;
  };

  // rank r fetches the window around its lower boundary
  auto req = empty_mail<Index>(n_ranks);
  std::vector<std::pair<Index, Index>> range(n_ranks, {0, 0});
  for (int r = 1; r < n_ranks; ++r) {
    const Index b = off[r];
    if (b == 0 || b == n) continue;
    range[r] = {std::max<Index>(0, b - window), std::min(n, b + window)};
    for (Index g = range[r].first; g < range[r].second; ++g) req[r][owner(g)].push_back(g);
  }
  auto in = net.exchange(std::move(req), "window_request");
  auto reply = empty_mail<PointRec>(n_ranks);
  for (int q = 0; q < n_ranks; ++q)
    for (int r = 0; r < n_ranks; ++r)
      for (const Index g : in[q][r]) reply[q][r].push_back(take(part.ranks[q], g - off[q]));
  auto got = net.exchange(std::move(reply), "window_reply");

  std::vector<Index> moved(n_ranks + 1, 0);
  moved[n_ranks] = n;
  for (int r = 1; r < n_ranks; ++r) {
    const Index b = off[r];
    moved[r] = b;
    if (b == 0 || b == n) continue;
    const auto [lo, hi] = range[r];
    std::vector<PointRec> win;
    for (int q = 0; q < n_ranks; ++q)
      for (auto& rec : got[r][q]) win.push_back(std::move(rec));
    const int dims = part.ranks[r].dims;
    const Level sentinel = pair_level_sentinel(dims);
    // gap level between global points g-1 and g, for lo < g < hi
    auto gap = [&](Index g) -> Level {
      if (g <= 0 || g >= n) return sentinel;
      return morton_level(win[g - 1 - lo].x, win[g - lo].x);
    };
    std::optional<std::pair<Index, Index>> best;
    Level lvl = gap(b);
    for (;;) {
      Index l = b - 1;
      while (l > lo && gap(l) <= lvl) --l;
      Index u = b + 1;
      while (u < hi && gap(u) <= lvl) ++u;
      // reaching the window edge means more than n_types * n_max_last points
      if ((l == lo && lo > 0) || (u == hi && hi < n)) break;
      std::vector<Index> per_type(n_types, 0);
      for (Index g = l; g < u; ++g) ++per_type[win[g - lo].type];
      if (*std::max_element(per_type.begin(), per_type.end()) > n_max_last) break;
      best = std::pair(l, u);
      if (l == 0 && u == n) break;
      lvl = std::min(l > 0 ? gap(l) : sentinel, u < n ? gap(u) : sentinel);
    }
    if (best) moved[r] = b - best->first <= best->second - b ? best->first : best->second;
  }
  std::vector<Index> lower(moved.begin(), moved.end() - 1);
  lower = net.allgather(std::move(lower), "boundaries");
  std::copy(lower.begin(), lower.end(), moved.begin());
  for (int r = 1; r <= n_ranks; ++r) moved[r] = std::max(moved[r], moved[r - 1]);

  redistribute(
      part, net,
      [&](int r, Index i) {
        const Index g = off[r] + i;
        return static_cast<int>(std::upper_bound(moved.begin(), moved.end(), g) - moved.begin()) -
               1;
      },
      "adjust");
  return moved;
}

std::vector<TreeHierarchy> build_rank_trees(const Partition& part, const TreeParams& params,
                                            Transport& net) {
  const int n_ranks = net.size();
  const Index total = part.total();
  const int n_types = global_types(part);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> ends(n_ranks);
  for (int r = 0; r < n_ranks; ++r) {
    const RankPoints& rp = part.ranks[r];
    if (rp.size() == 0) continue;
    const auto a = rp.point(0);
    const auto b = rp.point(rp.size() - 1);
    ends[r] = {{a.begin(), a.end()}, {b.begin(), b.end()}};
  }
  ends = net.allgather(std::move(ends), "ghosts");
  std::vector<HierarchyBuilder> builders;
  builders.reserve(n_ranks);
  for (int r = 0; r < n_ranks; ++r) {
    const RankPoints& rp = part.ranks[r];
    BuildContext ctx;
    ctx.global_n = total;
    for (int q = r - 1; q >= 0; --q)
      if (part.ranks[q].size() > 0) {
        ctx.ghost_prev = ends[q].second;
        break;
      }
    for (int q = r + 1; q < n_ranks; ++q)
      if (part.ranks[q].size() > 0) {
        ctx.ghost_next = ends[q].first;
        break;
      }
    SortedPoints sp{rp.dims, n_types, rp.pos, rp.type, rp.id};
    builders.emplace_back(std::move(sp), params, std::move(ctx));
  }
  while (!builders.front().done()) {
    std::vector<LevelHistogram> hists(n_ranks);
    for (int r = 0; r < n_ranks; ++r) hists[r] = builders[r].propose_plane();
    hists = net.allgather(std::move(hists), "histogram");
    LevelHistogram sum;
    for (const auto& h : hists)
      for (const auto& [lvl, c] : h) sum[lvl] += c;
    const Level lvl_max = regularization_level(sum, params.f_max);
    for (auto& b : builders) b.commit_plane(lvl_max);
  }
  std::vector<TreeHierarchy> trees;
  trees.reserve(n_ranks);
  for (auto& b : builders) trees.push_back(std::move(b).finish());
  return trees;
}

DistKnnResult distributed_knn(const PointSet& sources, const PointSet* queries, Index k,
                              const PeriodicDomain& domain, const KnnOptions& opt,
                              const DistOptions& dist) {
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

  std::vector<PointSet> types;
  types.emplace_back(sources.dims, sources.positions);
  if (queries) types.emplace_back(queries->dims, queries->positions);
  for (auto& t : types) domain.wrap(t.positions, t.dims);

  const auto start = Clock::now();
  Transport net(dist.n_ranks);
  const int n = dist.n_ranks;
  auto t0 = Clock::now();
  Partition part = partition_and_adjust(types, opt.tree, dist, net);
  const double sort_ms = ms_since(t0);
  t0 = Clock::now();
  const auto trees = build_rank_trees(part, opt.tree, net);
  const double tree_ms = ms_since(t0);
  t0 = Clock::now();
  const int st = 0;
  const int qt = queries ? 1 : 0;

  DistKnnResult res;
  res.offsets = part.offsets();
  res.imbalance = part.imbalance;
  std::vector<std::vector<Index>> recv_spl, src_spl;
  auto spaces = top_spaces(trees, opt.ngr, st, recv_spl, src_spl, net);
  std::vector<InteractionList> lists(n);
  for (int r = 0; r < n; ++r)
    lists[r] = dense_init(static_cast<Index>(recv_spl[r].size()) - 1,
                          static_cast<Index>(src_spl[r].size()) - 1);

  for (int p = trees[0].n_planes() - 1; p >= 0; --p) {
    for (int r = 0; r < n; ++r) {
      const auto qcounts = type_counts(trees[r], p, qt);
      const auto& pl = trees[r].planes[p];
      const PlaneView recv{trees[r].dims, pl.center.data(), pl.half_extent.data(), qcounts};
      const PlaneView src = spaces[r].view();
      const auto rmax =
          find_rmax(lists[r], recv_spl[r], recv, src_spl[r], src, k, domain, opt.walk);
      lists[r] = node_to_node(lists[r], recv_spl[r], recv, src_spl[r], src, rmax, domain, opt.walk);
    }
    if (p == 0) break;
    auto next = descend(trees, p - 1, spaces, referenced(lists, spaces), st, src_spl, res.requests,
                        net);
    for (int r = 0; r < n; ++r) recv_spl[r] = trees[r].planes[p].spl;
    spaces = std::move(next);
  }

  res.times.walk_ms = ms_since(t0);
  t0 = Clock::now();
  const auto leaves = fetch_leaves(trees, spaces, referenced(lists, spaces), st, res.requests, net);
  res.per_rank.resize(n);
  for (int r = 0; r < n; ++r) {
    const TreeHierarchy& h = trees[r];
    KnnResult& kr = res.per_rank[r];
    kr.k = k;
    kr.order = RowOrder::kZ;
    const LeafPoints q{h.dims, h.leaf_splits[qt], h.type_positions[qt], h.type_ids[qt]};
    const LeafPoints s{h.dims, leaves[r].spl, leaves[r].pos, leaves[r].id};
    leaf_chunks(lists[r], q, s, k, opt.k_max, domain, opt.walk, kr.indices, kr.distances);
    kr.query_index = h.type_ids[qt];
    kr.n_query = static_cast<Index>(kr.query_index.size());
  }

  KnnResult& m = res.merged;
  m.k = k;
  m.order = RowOrder::kZ;
  for (const auto& kr : res.per_rank) {
    m.query_index.insert(m.query_index.end(), kr.query_index.begin(), kr.query_index.end());
    m.indices.insert(m.indices.end(), kr.indices.begin(), kr.indices.end());
    m.distances.insert(m.distances.end(), kr.distances.begin(), kr.distances.end());
  }
  m.n_query = static_cast<Index>(m.query_index.size());
  res.times.leaf_ms = ms_since(t0);
  t0 = Clock::now();
  if (opt.order == RowOrder::kInput) to_input_order(m);
  res.times.reorder_ms = ms_since(t0);
  res.times.sort_ms = sort_ms;
  res.times.tree_ms = tree_ms;
  res.times.total_ms = ms_since(start);
  m.times = res.times;
  res.counters = net.counters();
  return res;
}

std::pair<Index, Index> resolve_edges(std::vector<std::vector<GlobalLabel>>& labels,
                                      std::vector<std::vector<PendingEdge>> edges,
                                      Transport& net) {
  const int n = net.size();
  Index total = 0;
  for (const auto& e : edges) total += static_cast<Index>(e.size());
  const Index guard = 4 * total + 4;
  Index rounds = 0;
  for (;;) {
    Index pending = 0;
    for (const auto& e : edges) pending += static_cast<Index>(e.size());
    if (pending == 0) break;
    if (++rounds > guard) throw ProtocolError("edge resolution did not converge");
    auto out = empty_mail<PendingEdge>(n);
    for (int r = 0; r < n; ++r)
      for (const PendingEdge& e : edges[r]) {
        const GlobalLabel hi = std::max(e.a, e.b);
        const GlobalLabel lo = std::min(e.a, e.b);
        if (hi == lo) continue;
        out[r][hi.rank].push_back({hi, lo});
      }
    auto in = net.exchange(std::move(out), "edge");
    for (int q = 0; q < n; ++q) {
      std::map<Index, std::vector<GlobalLabel>> proposals;
      for (int r = 0; r < n; ++r)
        for (const PendingEdge& e : in[q][r]) {
          if (e.a.index < 0 || e.a.index >= static_cast<Index>(labels[q].size()))
            throw ProtocolError("edge targets a point rank " + std::to_string(q) + " lacks");
          proposals[e.a.index].push_back(e.b);
        }
      std::vector<PendingEdge> next;
      for (auto& [h, props] : proposals) {
        std::sort(props.begin(), props.end());
        props.erase(std::unique(props.begin(), props.end()), props.end());
        GlobalLabel& lh = labels[q][h];
        const GlobalLabel self{q, h};
        if (lh == self) {
          // keep the lowest proposal, re-queue the rest against it
          lh = props.front();
          for (std::size_t i = 1; i < props.size(); ++i) next.push_back({props[i], props.front()});
        } else {
          for (const GlobalLabel& p : props)
            if (p != lh) next.push_back({lh, p});
        }
      }
      edges[q] = std::move(next);
    }
  }

  Index contraction = 0;
  for (;;) {
    ++contraction;
    if (contraction > 200) throw ProtocolError("label contraction did not converge");
    auto req = empty_mail<Index>(n);
    for (int r = 0; r < n; ++r) {
      std::set<GlobalLabel> targets;
      for (const GlobalLabel& l : labels[r])
        if (l.rank != r) targets.insert(l);
      for (const GlobalLabel& t : targets) req[r][t.rank].push_back(t.index);
    }
    auto in = net.exchange(std::move(req), "label_request");
    auto reply = empty_mail<GlobalLabel>(n);
    for (int q = 0; q < n; ++q)
      for (int r = 0; r < n; ++r)
        for (const Index i : in[q][r]) reply[q][r].push_back(labels[q][i]);
    auto asked = empty_mail<Index>(n);
    for (int r = 0; r < n; ++r) {
      std::set<GlobalLabel> targets;
      for (const GlobalLabel& l : labels[r])
        if (l.rank != r) targets.insert(l);
      for (const GlobalLabel& t : targets) asked[r][t.rank].push_back(t.index);
    }
    auto got = net.exchange(std::move(reply), "label_reply");
    std::vector<char> changed(n, 0);
    for (int r = 0; r < n; ++r) {
      std::map<GlobalLabel, GlobalLabel> remote;
      for (int q = 0; q < n; ++q)
        for (std::size_t i = 0; i < asked[r][q].size(); ++i)
          remote[{q, asked[r][q][i]}] = got[r][q][i];
      std::vector<GlobalLabel> next(labels[r].size());
      for (std::size_t i = 0; i < labels[r].size(); ++i) {
        const GlobalLabel t = labels[r][i];
        next[i] = t.rank == r ? labels[r][t.index] : remote.at(t);
        if (next[i] != t) changed[r] = 1;
      }
      labels[r] = std::move(next);
    }
    changed = net.allgather(std::move(changed), "converged");
    if (std::none_of(changed.begin(), changed.end(), [](char c) { return c != 0; })) break;
  }
  return {rounds, contraction};
}

std::vector<Index> DistFofResult::input_labels() const {
  std::vector<Index> out(order.size());
  for (std::size_t z = 0; z < order.size(); ++z) out[order[z]] = order[igroup[z]];
  return out;
}

DistFofResult distributed_fof(const PointSet& points, double r_link, const PeriodicDomain& domain,
                              const FofOptions& opt, const DistOptions& dist, Index min_count) {
  if (!(r_link > 0) || !std::isfinite(r_link)) throw UsageError("linking length must be > 0");
  points.validate();
  if (points.empty()) throw ValidationError("no points");
  domain.validate(points.dims);
  const auto start = Clock::now();
  PointSet wrapped = points;
  domain.wrap(wrapped.positions, wrapped.dims);

  Transport net(dist.n_ranks);
  const int n = dist.n_ranks;
  DistFofResult res;
  auto t0 = Clock::now();
  Partition part =
      partition_and_adjust(std::span<const PointSet>(&wrapped, 1), opt.tree, dist, net);
  res.times.sort_ms = ms_since(t0);
  t0 = Clock::now();
  const auto trees = build_rank_trees(part, opt.tree, net);
  res.times.tree_ms = ms_since(t0);
  t0 = Clock::now();

  res.offsets = part.offsets();
  std::vector<std::vector<Index>> local_super, pspl;
  auto spaces = top_spaces(trees, opt.ngr, -1, local_super, pspl, net);
  std::vector<InteractionList> lists(n);
  std::vector<std::vector<Index>> plabels(n);
  std::vector<std::vector<char>> pfull(n);
  for (int r = 0; r < n; ++r) {
    const Index n_super = static_cast<Index>(pspl[r].size()) - 1;
    lists[r] = dense_init(static_cast<Index>(local_super[r].size()) - 1, n_super);
    plabels[r].resize(n_super);
    std::iota(plabels[r].begin(), plabels[r].end(), Index{0});
    pfull[r].assign(n_super, 0);
  }
  std::vector<std::set<PendingEdge>> edges(n);
  auto first_of = [](const SourceSpace& s, Index e) {
    return GlobalLabel{s.origin_rank[e], s.first_point[e]};
  };

  for (int p = trees[0].n_planes() - 1; p >= 0; --p) {
    for (int r = 0; r < n; ++r) {
      NodeLabels nl = parent_to_node(plabels[r], pfull[r], pspl[r]);
      std::vector<char> full;
      lists[r] = fof_plane(lists[r], pspl[r], spaces[r].view(), nl.labels, nl.full_in, full,
                           r_link, domain, opt.concurrent);
      const SourceSpace& s = spaces[r];
      for (Index x = s.n_local; x < s.size(); ++x)
        if (nl.labels[x] != x) edges[r].insert({first_of(s, x), first_of(s, nl.labels[x])});
      plabels[r] = std::move(nl.labels);
      pfull[r] = std::move(full);
    }
    if (p == 0) break;
    auto next = descend(trees, p - 1, spaces, referenced(lists, spaces), -1, pspl, res.requests,
                        net);
    spaces = std::move(next);
  }

  res.times.walk_ms = ms_since(t0);
  t0 = Clock::now();
  const auto leaves = fetch_leaves(trees, spaces, referenced(lists, spaces), -1, res.requests, net);
  res.labels.resize(n);
  std::vector<std::vector<PendingEdge>> edge_lists(n);
  for (int r = 0; r < n; ++r) {
    const TreeHierarchy& h = trees[r];
    const LeafSpace& ls = leaves[r];
    NodeLabels pts = parent_to_node(plabels[r], pfull[r], ls.spl);
    const LeafPoints lp{h.dims, ls.spl, ls.pos, ls.id};
    fof_leaves(lists[r], lp, pts.labels, r_link, domain, opt.concurrent);
    const Index n_local = h.size();
    auto global = [&](Index x) { return GlobalLabel{ls.origin_rank[x], ls.origin_point[x]}; };
    for (Index x = n_local; x < static_cast<Index>(pts.labels.size()); ++x)
      if (pts.labels[x] != x) edges[r].insert({global(x), global(pts.labels[x])});
    res.labels[r].resize(n_local);
    for (Index i = 0; i < n_local; ++i) res.labels[r][i] = global(pts.labels[i]);
    edge_lists[r].assign(edges[r].begin(), edges[r].end());
    res.pending_edges += static_cast<Index>(edge_lists[r].size());
  }
  std::tie(res.resolve_rounds, res.contraction_rounds) =
      resolve_edges(res.labels, std::move(edge_lists), net);

  const Index total = part.total();
  res.igroup.resize(total);
  res.order.resize(total);
  for (int r = 0; r < n; ++r)
    for (Index i = 0; i < part.ranks[r].size(); ++i) {
      const GlobalLabel l = res.labels[r][i];
      res.igroup[res.offsets[r] + i] = res.offsets[l.rank] + l.index;
      res.order[res.offsets[r] + i] = part.ranks[r].id[i];
    }

  res.times.leaf_ms = ms_since(t0);
  t0 = Clock::now();
  // members of groups rooted elsewhere travel to the root's rank
  auto out = empty_mail<std::pair<Index, PointRec>>(n);
  for (int r = 0; r < n; ++r)
    for (Index i = 0; i < part.ranks[r].size(); ++i) {
      const int owner = res.labels[r][i].rank;
      if (owner != r) out[r][owner].push_back({res.offsets[r] + i, take(part.ranks[r], i)});
    }
  auto in = net.exchange(std::move(out), "catalogue");
  std::vector<Catalogue> partial(n);
  for (int r = 0; r < n; ++r) {
    std::vector<std::pair<Index, PointRec>> members;
    for (Index i = 0; i < part.ranks[r].size(); ++i)
      if (res.labels[r][i].rank == r) members.push_back({res.offsets[r] + i, take(part.ranks[r], i)});
    for (int q = 0; q < n; ++q)
      for (auto& m : in[r][q]) members.push_back(std::move(m));
    std::sort(members.begin(), members.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    PointSet ps;
    ps.dims = points.dims;
    std::vector<Index> labels;
    for (const auto& [g, rec] : members) {
      ps.positions.insert(ps.positions.end(), rec.x.begin(), rec.x.end());
      if (points.has_masses()) ps.masses.push_back(rec.mass);
      if (points.has_velocities()) ps.velocities.insert(ps.velocities.end(), rec.v.begin(), rec.v.end());
      labels.push_back(res.igroup[g]);
    }
    partial[r] = reduce_catalogue(ps, labels, min_count, domain);
  }
  for (const auto& c : partial) {
    res.catalogue.entries.insert(res.catalogue.entries.end(), c.entries.begin(), c.entries.end());
    res.catalogue.dropped_mass += c.dropped_mass;
    res.catalogue.dropped_groups += c.dropped_groups;
  }
  res.times.reorder_ms = ms_since(t0);
  res.times.total_ms = ms_since(start);
  res.counters = net.counters();
  return res;
}

}  // namespace ztree::partsim
