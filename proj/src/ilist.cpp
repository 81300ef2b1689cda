#include "ztree/ilist.hpp"

#include <algorithm>
#include <numeric>

#include "ztree/parallel.hpp"

namespace ztree {

bool InteractionList::valid() const {
  if (ispl.empty() || ispl.front() != 0 || ispl.back() != size()) return false;
  if (r_low.size() != isrc.size()) return false;
  return std::is_sorted(ispl.begin(), ispl.end());
}

InteractionList dense_init(Index n_nodes) { return dense_init(n_nodes, n_nodes); }

InteractionList dense_init(Index n_receivers, Index n_sources) {
  if (n_receivers < 0 || n_sources < 0) throw UsageError("dense_init: negative node count");
  InteractionList out;
  out.ispl.resize(n_receivers + 1);
  for (Index i = 0; i <= n_receivers; ++i) out.ispl[i] = n_sources * i;
  out.isrc.resize(n_receivers * n_sources);
  for (Index j = 0; j < out.size(); ++j) out.isrc[j] = j % n_sources;
  out.r_low.assign(out.isrc.size(), 0.0);
  return out;
}

std::vector<Index> exclusive_scan_prepend0(std::span<const Index> counts) {
  std::vector<Index> out(counts.size() + 1, 0);
  std::partial_sum(counts.begin(), counts.end(), out.begin() + 1);
  return out;
}

std::vector<Index> super_node_splits(Index n_topnodes, Index ngr) {
  if (ngr < 1) throw UsageError("super_node_splits: ngr must be >= 1");
  std::vector<Index> out;
  for (Index s = 0; s < n_topnodes; s += ngr) out.push_back(s);
  out.push_back(n_topnodes);
  return out;
}

void sort_segments(InteractionList& list) {
  parallel_for(
      list.receivers(),
      [&](Index i) {
        const Index lo = list.ispl[i];
        const Index hi = list.ispl[i + 1];
        if (hi - lo < 2) return;
        bool sorted = true;
        for (Index j = lo + 1; j < hi && sorted; ++j)
          sorted = list.r_low[j - 1] < list.r_low[j] ||
                   (list.r_low[j - 1] == list.r_low[j] && list.isrc[j - 1] <= list.isrc[j]);
        if (sorted) return;
        std::vector<std::pair<double, Index>> seg(hi - lo);
        for (Index j = lo; j < hi; ++j) seg[j - lo] = {list.r_low[j], list.isrc[j]};
        std::sort(seg.begin(), seg.end());
        for (Index j = lo; j < hi; ++j) std::tie(list.r_low[j], list.isrc[j]) = seg[j - lo];
      },
      64);
}

}  // namespace ztree
