#include "ztree/zorder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ztree {

std::vector<Index> z_sort(std::span<const double> positions, int dims) {
  for (double v : positions)
    if (!std::isfinite(v)) throw ValidationError("z_sort: non-finite coordinate");
  const auto d = static_cast<std::size_t>(dims);
  const Index n = static_cast<Index>(positions.size() / d);
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return z_less(positions.subspan(a * d, d), positions.subspan(b * d, d));
  });
  return order;
}

std::vector<Index> z_sort(const PointSet& points) {
  points.validate();
  return z_sort(points.positions, points.dims);
}

std::vector<std::vector<double>> splitters_from_sorted_sample(std::span<const double> sorted_sample,
                                                              int dims, int n_ranks) {
  const auto d = static_cast<std::size_t>(dims);
  const Index s = static_cast<Index>(sorted_sample.size() / d);
  std::vector<std::vector<double>> out;
  if (n_ranks <= 1 || s == 0) return out;
  out.reserve(n_ranks - 1);
  for (int r = 1; r < n_ranks; ++r) {
    const Index pos = std::min<Index>(s - 1, (static_cast<Index>(r) * s) / n_ranks);
    const auto row = sorted_sample.subspan(pos * d, d);
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

std::vector<std::vector<double>> sample_splitters(const PointSet& points, int n_ranks, Index n_samp,
                                                  std::uint64_t seed) {
  if (n_ranks < 1) throw UsageError("sample_splitters: n_ranks must be >= 1");
  if (n_samp < n_ranks) throw UsageError("sample_splitters: n_samp must be >= n_ranks");
  if (points.size() < n_ranks)
    throw ValidationError("sample_splitters: fewer points than ranks");
  if (n_ranks == 1) return {};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, points.size() - 1);
  const auto d = static_cast<std::size_t>(points.dims);
  std::vector<double> sample(static_cast<std::size_t>(n_samp) * d);
  for (Index i = 0; i < n_samp; ++i) {
    const auto row = points.point(pick(rng));
    std::copy(row.begin(), row.end(), sample.begin() + i * d);
  }
  const auto order = z_sort(sample, points.dims);
  std::vector<double> sorted(sample.size());
  for (Index i = 0; i < n_samp; ++i)
    std::copy_n(sample.begin() + order[i] * d, d, sorted.begin() + i * d);
  return splitters_from_sorted_sample(sorted, points.dims, n_ranks);
}

int rank_of(std::span<const double> p, const std::vector<std::vector<double>>& splitters) {
  // splitters are z-sorted; first splitter strictly greater than p
  const auto it = std::upper_bound(
      splitters.begin(), splitters.end(), p,
      [](std::span<const double> a, const std::vector<double>& s) { return z_less(a, s); });
  return static_cast<int>(it - splitters.begin());
}

}  // namespace ztree
