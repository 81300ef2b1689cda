#pragma once

#include <map>
#include <vector>

namespace checks {

/// Relabels a partition so every element carries the smallest member of its group.
template <class T>
std::vector<long long> canonical_partition(const std::vector<T>& labels) {
  std::map<T, long long> first;
  std::vector<long long> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = first.emplace(labels[i], static_cast<long long>(i)).first;
    out[i] = it->second;
  }
  return out;
}

template <class T>
long long group_count(const std::vector<T>& labels) {
  std::map<T, int> seen;
  for (const auto& l : labels) seen[l];
  return static_cast<long long>(seen.size());
}

}  // namespace checks
