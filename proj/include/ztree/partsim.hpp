#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ztree/bounds.hpp"
#include "ztree/common.hpp"
#include "ztree/fof.hpp"
#include "ztree/knn.hpp"
#include "ztree/treebuild.hpp"

namespace ztree::partsim {

/// A point on a rank: (rank, local z index). Ordered like the global z-order.
struct GlobalLabel {
  int rank = 0;
  Index index = 0;
  auto operator<=>(const GlobalLabel&) const = default;
};

struct PendingEdge {
  GlobalLabel a;
  GlobalLabel b;
  auto operator<=>(const PendingEdge&) const = default;
};

struct Counters {
  Index supersteps = 0;
  Index messages = 0;  // nonempty off-rank messages
  Index items = 0;     // records carried by those messages
  std::map<std::string, Index> by_tag;
};

/// In-process round-based transport. out[src][dst] is delivered as in[dst][src].
class Transport {
 public:
  explicit Transport(int n_ranks);

  [[nodiscard]] int size() const { return n_ranks_; }
  [[nodiscard]] const Counters& counters() const { return counters_; }

  template <class T>
  std::vector<std::vector<std::vector<T>>> exchange(std::vector<std::vector<std::vector<T>>> out,
                                                    const std::string& tag) {
    check_shape(out.size(), tag);
    std::vector<std::vector<std::vector<T>>> in(n_ranks_, std::vector<std::vector<T>>(n_ranks_));
    for (int src = 0; src < n_ranks_; ++src) {
      check_shape(out[src].size(), tag);
      for (int dst = 0; dst < n_ranks_; ++dst) {
        if (src != dst && !out[src][dst].empty()) account(tag, out[src][dst].size());
        in[dst][src] = std::move(out[src][dst]);
      }
    }
    ++counters_.supersteps;
    return in;
  }

  /// Every rank receives every rank's value.
  template <class T>
  std::vector<T> allgather(std::vector<T> values, const std::string& tag) {
    check_shape(values.size(), tag);
    for (int i = 0; i < n_ranks_ * (n_ranks_ - 1); ++i) account(tag, 1);
    ++counters_.supersteps;
    return values;
  }

 private:
  void check_shape(std::size_t n, const std::string& tag) const;
  void account(const std::string& tag, std::size_t items);

  int n_ranks_;
  Counters counters_;
};

/// Points held by one rank, in z-order. Types and ids refer to the input sets.
struct RankPoints {
  int dims = 0;
  std::vector<double> pos;
  std::vector<int> type;
  std::vector<Index> id;
  std::vector<double> mass;  // empty or per point
  std::vector<double> vel;   // empty or per point x dims

  [[nodiscard]] Index size() const { return static_cast<Index>(type.size()); }
  [[nodiscard]] std::span<const double> point(Index i) const {
    return {pos.data() + i * dims, static_cast<std::size_t>(dims)};
  }
};

struct Partition {
  std::vector<RankPoints> ranks;
  std::vector<std::vector<double>> splitters;
  double imbalance = 1;  // largest rank count / mean

  [[nodiscard]] Index total() const;
  [[nodiscard]] std::vector<Index> offsets() const;  // n_ranks + 1
};

/// Samples, selects splitters, redistributes and sorts locally. `types` are the
/// point sets sorted jointly; each rank starts with a contiguous chunk of the input.
Partition partitioned_zsort(std::span<const PointSet> types, int n_ranks, Index n_samp,
                            std::uint64_t seed, Transport& net);

/// Moves every rank boundary to an edge of the largest node with at most n_max_last
/// points per type that straddles it, then redistributes. Returns the new offsets.
std::vector<Index> adjust_domains(Partition& part, Index n_max_last, Transport& net);

/// N_max of the coarsest plane for `global_n` points.
Index coarsest_n_max(Index global_n, const TreeParams& params);

/// Builds every rank's hierarchy with globally reduced regularization.
std::vector<TreeHierarchy> build_rank_trees(const Partition& part, const TreeParams& params,
                                            Transport& net);

struct DistOptions {
  int n_ranks = 1;
  Index n_samp = 256;  // samples per rank
  std::uint64_t seed = 0;
  bool adjust = true;
};

struct RequestStats {
  Index node_requests = 0;  // requested (rank, node) records, summed over planes
  Index unique_node_requests = 0;
  Index leaf_requests = 0;
  Index remote_nodes_held = 0;
};

struct DistKnnResult {
  std::vector<KnnResult> per_rank;  // z-order rows
  KnnResult merged;                 // concatenation, z-order unless options ask for input order
  Counters counters;
  RequestStats requests;
  std::vector<Index> offsets;
  double imbalance = 1;
  PhaseTimes times;
};

DistKnnResult distributed_knn(const PointSet& sources, const PointSet* queries, Index k,
                              const PeriodicDomain& domain, const KnnOptions& opt,
                              const DistOptions& dist);

struct DistFofResult {
  std::vector<std::vector<GlobalLabel>> labels;  // per rank, per local point: root
  std::vector<Index> igroup;                     // global z index -> root global z index
  std::vector<Index> order;                      // global z index -> input row
  Catalogue catalogue;
  Counters counters;
  RequestStats requests;
  Index pending_edges = 0;
  Index resolve_rounds = 0;
  Index contraction_rounds = 0;
  std::vector<Index> offsets;
  PhaseTimes times;

  [[nodiscard]] std::vector<Index> input_labels() const;
};

DistFofResult distributed_fof(const PointSet& points, double r_link, const PeriodicDomain& domain,
                              const FofOptions& opt, const DistOptions& dist,
                              Index min_count = 20);

/// Resolves cross-rank edges into per-rank union-find labels, then contracts
/// globally. Returns (resolve rounds, contraction rounds).
std::pair<Index, Index> resolve_edges(std::vector<std::vector<GlobalLabel>>& labels,
                                      std::vector<std::vector<PendingEdge>> edges, Transport& net);

}  // namespace ztree::partsim
