#include "oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace oracle {

namespace {

double period_of(const Domain& d, int i) {
  return static_cast<std::size_t>(i) < d.periods.size() ? d.periods[i] : 0.0;
}

long long root(std::vector<long long>& up, long long i) {
  while (up[i] != i) i = up[i];
  return i;
}

}  // namespace

double distance2(const double* a, const double* b, int dims, const Domain& domain) {
  double s = 0;
  for (int i = 0; i < dims; ++i) {
    double t = a[i] - b[i];
    const double p = period_of(domain, i);
    if (p > 0) {
      while (t >= 0.5 * p) t -= p;
      while (t < -0.5 * p) t += p;
    }
    s += t * t;
  }
  return s;
}

KnnTable brute_knn(const std::vector<double>& sources, const std::vector<double>& queries, int dims,
                   long long k, const Domain& domain) {
  const auto ns = static_cast<long long>(sources.size()) / dims;
  const auto nq = static_cast<long long>(queries.size()) / dims;
  if (k < 1 || k > ns) throw std::invalid_argument("brute_knn: k out of range");
  KnnTable t;
  t.k = k;
  t.indices.resize(nq * k);
  t.distances.resize(nq * k);
  std::vector<std::pair<double, long long>> all(ns);
  for (long long q = 0; q < nq; ++q) {
    for (long long s = 0; s < ns; ++s)
      all[s] = {distance2(&queries[q * dims], &sources[s * dims], dims, domain), s};
    std::partial_sort(all.begin(), all.begin() + k, all.end());
    for (long long j = 0; j < k; ++j) {
      t.indices[q * k + j] = all[j].second;
      t.distances[q * k + j] = std::sqrt(all[j].first);
    }
  }
  return t;
}

std::vector<long long> brute_fof(const std::vector<double>& points, int dims, double r_link,
                                 const Domain& domain) {
  const auto n = static_cast<long long>(points.size()) / dims;
  std::vector<long long> up(n);
  std::iota(up.begin(), up.end(), 0LL);
  for (long long i = 0; i < n; ++i)
    for (long long j = i + 1; j < n; ++j) {
      if (std::sqrt(distance2(&points[i * dims], &points[j * dims], dims, domain)) > r_link)
        continue;
      long long a = root(up, i);
      long long b = root(up, j);
      if (a == b) continue;
      if (a < b) std::swap(a, b);
      up[a] = b;
    }
  for (long long i = 0; i < n; ++i) up[i] = root(up, i);
  return up;
}

std::vector<long long> morton_key_sort(const std::vector<std::uint64_t>& grid_points, int dims,
                                       int bits) {
  if (dims < 1 || bits < 1 || dims * bits > 64)
    throw std::invalid_argument("morton_key_sort: dims * bits must be in [1, 64]");
  const auto n = static_cast<long long>(grid_points.size()) / dims;
  std::vector<std::uint64_t> key(n, 0);
  for (long long i = 0; i < n; ++i)
    for (int b = bits - 1; b >= 0; --b)
      for (int j = 0; j < dims; ++j) {
        const std::uint64_t v = grid_points[i * dims + j];
        if (v >> bits) throw std::invalid_argument("morton_key_sort: coordinate out of range");
        key[i] = (key[i] << 1) | ((v >> b) & 1u);
      }
  std::vector<long long> perm(n);
  std::iota(perm.begin(), perm.end(), 0LL);
  std::stable_sort(perm.begin(), perm.end(), [&](long long a, long long b) { return key[a] < key[b]; });
  return perm;
}

std::pair<double, double> sample_bound_check(const std::vector<double>& center1,
                                             const std::vector<double>& half1,
                                             const std::vector<double>& center2,
                                             const std::vector<double>& half2,
                                             const Domain& domain, long long n_samples,
                                             std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("sample_bound_check: n_samples must be >= 1");
  const int dims = static_cast<int>(center1.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> a(dims), b(dims);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0;
  for (long long s = 0; s < n_samples; ++s) {
    for (int i = 0; i < dims; ++i) {
      // corners are drawn explicitly now and then; they carry the extremes
      const int mode = static_cast<int>(rng() % 8);
      const double ua = mode == 0 ? -1.0 : mode == 1 ? 1.0 : u(rng);
      const double ub = mode == 2 ? -1.0 : mode == 3 ? 1.0 : u(rng);
      a[i] = center1[i] + ua * half1[i];
      b[i] = center2[i] + ub * half2[i];
    }
    const double d = std::sqrt(distance2(a.data(), b.data(), dims, domain));
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return {lo, hi};
}

}  // namespace oracle
