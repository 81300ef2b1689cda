#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ztree/treebuild.hpp"

namespace checks {

/// Structural invariants of a hierarchy; returns a description per violation.
inline std::vector<std::string> tree_violations(const ztree::TreeHierarchy& h) {
  using ztree::Index;
  std::vector<std::string> bad;
  const int d = h.dims;
  const Index n = h.size();
  Index finer = n;
  for (int p = 0; p < h.n_planes(); ++p) {
    const auto& pl = h.planes[p];
    const std::string tag = "plane " + std::to_string(p) + ": ";
    if (pl.spl.empty() || pl.spl.front() != 0 || pl.spl.back() != finer)
      bad.push_back(tag + "splits do not tile the finer plane");
    for (std::size_t j = 1; j < pl.spl.size(); ++j)
      if (pl.spl[j] <= pl.spl[j - 1]) bad.push_back(tag + "splits not strictly increasing");
    if (pl.point_spl.front() != 0 || pl.point_spl.back() != n)
      bad.push_back(tag + "point splits do not cover all points");
    if (p > 0)
      for (std::size_t j = 0; j < pl.spl.size(); ++j)
        if (h.planes[p - 1].point_spl[pl.spl[j]] != pl.point_spl[j])
          bad.push_back(tag + "split does not coincide with a finer split");
    for (Index j = 0; j < pl.size(); ++j) {
      const auto box = h.box(p, j);
      for (Index i = pl.point_spl[j]; i < pl.point_spl[j + 1]; ++i)
        for (int k = 0; k < d; ++k) {
          const double x = h.positions[i * d + k];
          const double c = box.center[k];
          const double e = box.half_extent[k];
          if (!(std::abs(x - c) <= e || (e == 0 && x == c)))
            bad.push_back(tag + "point outside its node box");
        }
      for (int t = 0; t < h.n_types; ++t)
        if (h.count(p, j, t) > pl.n_max) bad.push_back(tag + "count above n_max");
      double lo = ztree::kInf, hi = 0;
      for (int k = 0; k < d; ++k) {
        lo = std::min(lo, box.half_extent[k]);
        hi = std::max(hi, box.half_extent[k]);
      }
      if (lo > 0 && std::isfinite(hi) && hi > 2 * lo) bad.push_back(tag + "extent ratio above 2");
      if (pl.level[j] != ztree::kLevelMin) {
        const auto ls = ztree::extent_levels(pl.level[j], d);
        ztree::Level s = 0;
        for (auto l : ls) s += l;
        if (s != pl.level[j]) bad.push_back(tag + "extent levels do not sum to the level");
      }
    }
    finer = pl.size();
  }
  for (int t = 0; t < h.n_types; ++t) {
    const auto& ls = h.leaf_splits[t];
    if (ls.back() != static_cast<Index>(h.type_ids[t].size()))
      bad.push_back("leaf splits of a type do not cover it");
    for (std::size_t j = 1; j < ls.size(); ++j)
      if (ls[j] < ls[j - 1]) bad.push_back("type leaf splits decrease");
  }
  return bad;
}

/// Random point set in d dimensions: uniform, clustered or mixed-sign.
inline ztree::PointSet random_points(std::mt19937_64& rng, ztree::Index n, int d) {
  ztree::PointSet p;
  p.dims = d;
  p.positions.resize(n * d);
  const int kind = static_cast<int>(rng() % 3);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> g(0, 1);
  for (ztree::Index i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) {
      double& x = p.positions[i * d + k];
      if (kind == 0) x = u(rng);
      else if (kind == 1) x = (i % 5) * 10.0 + 0.01 * g(rng);
      else x = g(rng) * 100;
    }
  return p;
}

}  // namespace checks
