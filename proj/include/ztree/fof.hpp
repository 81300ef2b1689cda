#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ztree/bounds.hpp"
#include "ztree/common.hpp"
#include "ztree/ilist.hpp"
#include "ztree/knn.hpp"
#include "ztree/treebuild.hpp"

namespace ztree {

/// alpha * (V / N)^(1/dims).
double linking_length(double alpha, double volume, Index n, int dims = 3);

Index find_root(std::span<const Index> labels, Index i);
/// Points the higher of the two roots at the lower one.
void link(std::span<Index> labels, Index a, Index b);
/// Same as link, safe against concurrent link calls on the same array.
void link_atomic(std::span<Index> labels, Index a, Index b);
void contract(std::span<Index> labels);

struct NodeLabels {
  std::vector<Index> labels;
  std::vector<char> full_in;  // inherited from a fully linked parent
};

/// Children of fully linked parents point at the first child of their parent's
/// root; all other children point at themselves.
NodeLabels parent_to_node(std::span<const Index> parent_labels, std::span<const char> parent_full,
                          std::span<const Index> parent_spl);

enum class NodeInteraction { kDiscard, kLink, kRefine };

NodeInteraction fof_node_interaction(Index a, Index b, BoxRef box_a, BoxRef box_b, int dims,
                                     std::span<const Index> labels, double r_link,
                                     const PeriodicDomain& domain);

/// Node stage of one plane. Labels index the children; receivers are the
/// children of the first parents.receivers() parents. Returns the refined list and
/// writes per-child full flags.
InteractionList fof_plane(const InteractionList& parents, std::span<const Index> parent_spl,
                          const PlaneView& nodes, std::span<Index> labels,
                          std::span<const char> full_in, std::vector<char>& full, double r_link,
                          const PeriodicDomain& domain, bool concurrent);

/// Links point pairs of the remaining leaf pairs. `labels` indexes points.
void fof_leaves(const InteractionList& leaves, const LeafPoints& points, std::span<Index> labels,
                double r_link, const PeriodicDomain& domain, bool concurrent);

struct FofOptions {
  Index ngr = 32;
  TreeParams tree;
  bool concurrent = true;
};

struct FofResult {
  double r_link = 0;
  std::vector<Index> igroup;  // per z-ordered point: root z index
  std::vector<Index> order;   // z index -> input row
  PointSet sorted;            // z-ordered points (wrapped), with masses/velocities
  PhaseTimes times;

  /// Per input row: input row of its group root.
  [[nodiscard]] std::vector<Index> input_labels() const;
  [[nodiscard]] Index n_groups() const;
};

FofResult fof(const PointSet& points, double r_link, const PeriodicDomain& domain = {},
              const FofOptions& opt = {});

/// Labels over the points of a built single-type hierarchy, in z-order.
std::vector<Index> fof_walk(const TreeHierarchy& h, double r_link, const PeriodicDomain& domain,
                            const FofOptions& opt);

/// Stable permutation sorting points by label.
std::vector<Index> group_order_sort(std::span<const Index> labels);

struct CatalogueEntry {
  Index group_id = 0;
  Index count = 0;
  double mass = 0;
  std::vector<double> com;
  std::vector<double> com_velocity;  // empty without velocities
  double inertia_radius = 0;
  bool compact = true;  // false if the group spans half a period or more
};

struct Catalogue {
  std::vector<CatalogueEntry> entries;
  double dropped_mass = 0;
  Index dropped_groups = 0;
};

/// Moments of every group with at least min_count points. Positions of a group are
/// taken relative to its first point (in the given order) with minimal image.
Catalogue reduce_catalogue(const PointSet& points, std::span<const Index> labels,
                           Index min_count = 20, const PeriodicDomain& domain = {});

/// Moments of one group given its rows in order.
CatalogueEntry group_moments(const PointSet& points, std::span<const Index> rows,
                             const PeriodicDomain& domain);

}  // namespace ztree
