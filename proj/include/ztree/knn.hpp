#pragma once

#include <array>
#include <span>
#include <vector>

#include "ztree/bounds.hpp"
#include "ztree/common.hpp"
#include "ztree/ilist.hpp"
#include "ztree/treebuild.hpp"

namespace ztree {

/// Up to `capacity` (radius, count) pairs in nondecreasing radius order.
struct CountHeap {
  static constexpr int kMaxCapacity = 32;
  struct Entry {
    double radius = 0;
    Index count = 0;
  };
  std::array<Entry, kMaxCapacity> entries{};
  int size = 0;
  int capacity = 8;

  CountHeap() = default;
  explicit CountHeap(int cap);
  [[nodiscard]] Index total() const;
};

/// Smallest radius whose cumulative count reaches k; +inf if the total is below k.
double radius_of_count(const CountHeap& h, Index k);

/// Inserts (r, n). On overflow the last entry is dropped if the remaining total
/// still reaches k; otherwise n is merged into the first entry with radius > r,
/// or into the last entry (whose radius is raised to r) if there is none.
void countheap_insert(CountHeap& h, double r, Index n, Index k);

/// Up to `capacity` <= 32 (squared distance, id) pairs in lexicographic order.
struct NeighborHeap {
  static constexpr int kMaxCapacity = 32;
  struct Entry {
    double d2 = 0;
    Index id = 0;
  };
  std::array<Entry, kMaxCapacity> entries{};
  int size = 0;
  int capacity = kMaxCapacity;

  explicit NeighborHeap(int cap);
  [[nodiscard]] bool full() const { return size == capacity; }
  [[nodiscard]] const Entry& last() const { return entries[size - 1]; }
  void insert(double d2, Index id);
};

/// One plane of nodes seen from one point type.
struct PlaneView {
  int dims = 0;
  const double* center = nullptr;
  const double* half_extent = nullptr;
  std::span<const Index> count;

  [[nodiscard]] Index size() const { return static_cast<Index>(count.size()); }
  [[nodiscard]] BoxRef box(Index i) const {
    return {center + i * dims, half_extent + i * dims};
  }
};

/// Leaf point ranges of one type. spl has n_leaves + 1 entries into pos/id rows.
struct LeafPoints {
  int dims = 0;
  std::span<const Index> spl;
  std::span<const double> pos;
  std::span<const Index> id;
};

struct WalkOptions {
  int heap_capacity = 8;
  bool sort_segments = true;
  bool early_exit = true;  // only honoured when segments are sorted

  [[nodiscard]] bool exit_early() const { return early_exit && sort_segments; }
};

/// R_max for every receiving child. `parents` is segmented by receiving parent;
/// children of parent i are [recv_parent_spl[i], recv_parent_spl[i+1]) in `recv`,
/// and children of source parent j are [src_parent_spl[j], src_parent_spl[j+1]) in `src`.
std::vector<double> find_rmax(const InteractionList& parents, std::span<const Index> recv_parent_spl,
                              const PlaneView& recv, std::span<const Index> src_parent_spl,
                              const PlaneView& src, Index k, const PeriodicDomain& domain,
                              const WalkOptions& opt = {});

/// Child-level list: source children with d_low <= R_max of the receiving child.
InteractionList node_to_node(const InteractionList& parents,
                             std::span<const Index> recv_parent_spl, const PlaneView& recv,
                             std::span<const Index> src_parent_spl, const PlaneView& src,
                             std::span<const double> rmax, const PeriodicDomain& domain,
                             const WalkOptions& opt = {});

/// One chunk of the leaf stage. Candidates must exceed (floor_d2[q], floor_id[q])
/// lexicographically; a negative floor disables the filter. Writes `kc` entries per
/// query row (sorted query order) into d2_out/id_out and updates the floors.
void leaf_to_leaf(const InteractionList& leaves, const LeafPoints& queries,
                  const LeafPoints& sources, int kc, std::span<double> floor_d2,
                  std::span<Index> floor_id, std::span<double> d2_out, std::span<Index> id_out,
                  const PeriodicDomain& domain, const WalkOptions& opt = {});

enum class RowOrder { kZ, kInput };

struct KnnOptions {
  Index ngr = 32;
  int k_max = 32;
  WalkOptions walk;
  RowOrder order = RowOrder::kInput;
  TreeParams tree;
  bool queries_first = false;  // concatenation order of the two types
};

struct PhaseTimes {
  double sort_ms = 0;
  double tree_ms = 0;
  double walk_ms = 0;
  double leaf_ms = 0;
  double reorder_ms = 0;
  double total_ms = 0;
};

/// indices/distances are n_query x k, row-major. Neighbour indices are rows of the
/// source input; row r answers query input row query_index[r].
struct KnnResult {
  Index k = 0;
  Index n_query = 0;
  RowOrder order = RowOrder::kInput;
  std::vector<Index> query_index;
  std::vector<Index> indices;
  std::vector<double> distances;
  PhaseTimes times;
  std::vector<double> leaf_rmax;        // per leaf
  std::vector<Index> leaf_query_spl;    // query rows (z-order) of each leaf
};

KnnResult knn_query(const PointSet& sources, const PointSet& queries, Index k,
                    const PeriodicDomain& domain = {}, const KnnOptions& opt = {});
KnnResult knn_self(const PointSet& points, Index k, const PeriodicDomain& domain = {},
                   const KnnOptions& opt = {});

/// Per-type node counts of one plane as a contiguous array.
std::vector<Index> type_counts(const TreeHierarchy& h, int plane, int type);

/// Runs the plane loop and leaf chunks on a built hierarchy. Rows of the result are
/// in sorted query order.
KnnResult knn_walk(const TreeHierarchy& h, int source_type, int query_type, Index k,
                   const PeriodicDomain& domain, const KnnOptions& opt);

/// Leaf stage in chunks of k_max over a finished interaction list.
void leaf_chunks(const InteractionList& leaves, const LeafPoints& queries,
                 const LeafPoints& sources, Index k, int k_max, const PeriodicDomain& domain,
                 const WalkOptions& opt, std::vector<Index>& indices,
                 std::vector<double>& distances);

/// Reorders result rows from sorted query order into input order.
void to_input_order(KnnResult& r);

}  // namespace ztree
