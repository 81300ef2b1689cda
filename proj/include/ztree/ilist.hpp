#pragma once

#include <span>
#include <vector>

#include "ztree/common.hpp"

namespace ztree {

/// Segmented receiver -> source list. Segment i of `isrc` is [ispl[i], ispl[i+1]).
struct InteractionList {
  std::vector<Index> isrc;
  std::vector<Index> ispl{0};
  std::vector<double> r_low;

  [[nodiscard]] Index receivers() const { return static_cast<Index>(ispl.size()) - 1; }
  [[nodiscard]] Index size() const { return static_cast<Index>(isrc.size()); }
  [[nodiscard]] bool valid() const;
};

/// Every receiver against every one of n_nodes sources.
InteractionList dense_init(Index n_nodes);
/// n_receivers segments, each listing sources 0..n_sources-1.
InteractionList dense_init(Index n_receivers, Index n_sources);

std::vector<Index> exclusive_scan_prepend0(std::span<const Index> counts);

/// [0, ngr, 2 ngr, ..., n_topnodes].
std::vector<Index> super_node_splits(Index n_topnodes, Index ngr = 32);

/// Orders each segment by (r_low, isrc).
void sort_segments(InteractionList& list);

}  // namespace ztree
