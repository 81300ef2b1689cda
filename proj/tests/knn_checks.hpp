#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

#include "oracle/oracle.hpp"
#include "ztree/knn.hpp"

namespace checks {

inline std::int64_t ulp_distance(double a, double b) {
  const auto ia = std::bit_cast<std::int64_t>(a);
  const auto ib = std::bit_cast<std::int64_t>(b);
  return ia > ib ? ia - ib : ib - ia;
}

/// Compares an input-ordered result with the brute-force table. Returns an empty
/// string on agreement. `ref` must hold k + 1 columns when more sources exist, so
/// ties at the cut are detected.
inline std::string compare_knn(const ztree::KnnResult& r, const oracle::KnnTable& ref,
                               long long ref_k, int max_ulp = 4) {
  const auto k = r.k;
  for (ztree::Index q = 0; q < r.n_query; ++q) {
    const ztree::Index row = r.query_index[q];
    const double* rd = ref.distances.data() + row * ref_k;
    const long long* ri = ref.indices.data() + row * ref_k;
    for (ztree::Index j = 0; j < k; ++j) {
      const double d = r.distances[q * k + j];
      if (ulp_distance(d, rd[j]) > max_ulp)
        return "query " + std::to_string(row) + " rank " + std::to_string(j) + ": distance " +
               std::to_string(d) + " vs " + std::to_string(rd[j]);
      auto tied = [&](ztree::Index o) {
        return o >= 0 && o < ref_k && ulp_distance(rd[o], rd[j]) <= max_ulp;
      };
      if (!tied(j - 1) && !tied(j + 1) && r.indices[q * k + j] != ri[j])
        return "query " + std::to_string(row) + " rank " + std::to_string(j) + ": index " +
               std::to_string(r.indices[q * k + j]) + " vs " + std::to_string(ri[j]);
    }
  }
  return {};
}

inline bool bit_equal(const ztree::KnnResult& a, const ztree::KnnResult& b) {
  if (a.indices != b.indices || a.query_index != b.query_index) return false;
  if (a.distances.size() != b.distances.size()) return false;
  for (std::size_t i = 0; i < a.distances.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a.distances[i]) != std::bit_cast<std::uint64_t>(b.distances[i]))
      return false;
  return true;
}

}  // namespace checks
