#pragma once

// Brute-force references. Self-contained: nothing here depends on the ztree library.

#include <cstdint>
#include <utility>
#include <vector>

namespace oracle {

/// Periods per dimension; 0 (or a missing entry) means open.
struct Domain {
  std::vector<double> periods;
};

double distance2(const double* a, const double* b, int dims, const Domain& domain);

struct KnnTable {
  long long k = 0;
  std::vector<long long> indices;  // queries x k, source rows
  std::vector<double> distances;
};

/// All source-query distances; per query sorted by (distance, source row).
KnnTable brute_knn(const std::vector<double>& sources, const std::vector<double>& queries, int dims,
                   long long k, const Domain& domain = {});

/// Union-find over all pairs with distance <= r_link. Each label is the smallest
/// row of its component.
std::vector<long long> brute_fof(const std::vector<double>& points, int dims, double r_link,
                                 const Domain& domain = {});

/// Permutation sorting integer grid points by their interleaved bit key, earlier
/// dimensions more significant. Requires dims * bits <= 64.
std::vector<long long> morton_key_sort(const std::vector<std::uint64_t>& grid_points, int dims,
                                       int bits);

/// (min, max) distance over sampled point pairs drawn uniformly from two closed boxes.
std::pair<double, double> sample_bound_check(const std::vector<double>& center1,
                                             const std::vector<double>& half1,
                                             const std::vector<double>& center2,
                                             const std::vector<double>& half2,
                                             const Domain& domain, long long n_samples,
                                             std::uint64_t seed);

}  // namespace oracle
