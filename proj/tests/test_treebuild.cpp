#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "tree_checks.hpp"
#include "ztree/treebuild.hpp"

using namespace ztree;

namespace {
const std::vector<double> kLine8{1.6, 3.1, 3.3, 4.6, 5.6, 6.8, 9.4, 9.7};
}

TEST_CASE("morton_level") {
  CHECK(morton_level(std::vector{1.6}, std::vector{3.1}) == 2);
  CHECK(morton_level(std::vector{6.8}, std::vector{9.4}) == 4);
  CHECK(morton_level(std::vector{0.5, 0.5}, std::vector{0.5, 1.5}) == 1);
  CHECK(morton_level(std::vector{1.0, 2.0}, std::vector{1.0, 2.0}) == kLevelMin);
}

TEST_CASE("extent_levels") {
  CHECK(extent_levels(2, 1) == std::vector<Level>{2});
  CHECK(extent_levels(5, 3) == std::vector<Level>{1, 2, 2});
  CHECK(extent_levels(0, 3) == std::vector<Level>{0, 0, 0});
  CHECK(extent_levels(-4, 3) == std::vector<Level>{-2, -1, -1});
  for (int d = 1; d <= 6; ++d)
    for (Level l = -200; l <= 200; ++l) {
      const auto e = extent_levels(l, d);
      Level s = 0;
      for (auto x : e) s += x;
      CHECK(s == l);
      CHECK(*std::max_element(e.begin(), e.end()) - *std::min_element(e.begin(), e.end()) <= 1);
    }
}

TEST_CASE("pair_levels") {
  const auto lv = pair_levels(kLine8, 1);
  REQUIRE(lv.size() == 9);
  CHECK(std::vector<Level>(lv.begin() + 1, lv.end() - 1) == std::vector<Level>{2, -1, 3, 1, 2, 4, 0});
  CHECK(lv.front() == pair_level_sentinel(1));
  CHECK(lv.back() == pair_level_sentinel(1));
  const auto one = pair_levels(std::vector{2.0}, 1);
  CHECK(one == std::vector<Level>{pair_level_sentinel(1), pair_level_sentinel(1)});
  const auto dup = pair_levels(std::vector{1.0, 1.0, 2.0}, 1);
  CHECK(dup[1] == kLevelMin);
  // sentinels beat any pair of finite doubles
  const double big = std::numeric_limits<double>::max();
  CHECK(morton_level(std::vector{-big, -big}, std::vector{big, big}) < pair_level_sentinel(2));
}

TEST_CASE("node_range") {
  const auto lv = pair_levels(kLine8, 1);
  const std::vector<Index> expect{3, 2, 6, 2, 3, 8, 2};
  for (Index i = 1; i < 8; ++i) CHECK(node_range(lv, kLine8, 1, i).n == expect[i - 1]);
  const auto r = node_range(lv, kLine8, 1, 3);
  CHECK(r.l_b == 0);
  CHECK(r.r_b == 6);
  const std::vector<double> two{1.0, 5.0};
  CHECK(node_range(pair_levels(two, 1), two, 1, 1).n == 2);
}

TEST_CASE("select_splits") {
  const auto lv = pair_levels(kLine8, 1);
  std::vector<Index> cand, n;
  std::vector<Level> lvl;
  for (Index i = 0; i <= 8; ++i) {
    cand.push_back(i);
    n.push_back(i == 0 || i == 8 ? kStraddles : node_range(lv, kLine8, 1, i).n);
    lvl.push_back(lv[i]);
  }
  const auto leaf = select_splits(cand, n, lvl, 2, std::nullopt);
  CHECK(leaf == std::vector<Index>{0, 1, 3, 5, 6, 8});
  std::vector<Index> n1;
  std::vector<Level> l1;
  for (Index s : leaf) {
    n1.push_back(n[s]);
    l1.push_back(lvl[s]);
  }
  const auto coarse = select_splits(leaf, n1, l1, 4, std::nullopt);
  std::vector<Index> positions;
  for (Index s : coarse)
    positions.push_back(std::find(leaf.begin(), leaf.end(), s) - leaf.begin());
  CHECK(positions == std::vector<Index>{0, 2, 4, 5});
  CHECK(select_splits(cand, n, lvl, 100, std::nullopt) == std::vector<Index>{0, 8});
  CHECK(select_splits(cand, n, lvl, 100, 3) == std::vector<Index>{0, 6, 8});
}

TEST_CASE("eight-point hierarchy") {
  TreeParams p;
  p.n_max0 = 2;
  p.coarsen = 2;
  p.n_target = 1;
  p.f_max = kInf;
  const std::vector<PointSet> types{PointSet(1, kLine8)};
  const auto h = build_hierarchy(types, p);
  REQUIRE(h.n_planes() >= 2);
  CHECK(h.planes[0].spl == std::vector<Index>{0, 1, 3, 5, 6, 8});
  CHECK(h.planes[1].spl == std::vector<Index>{0, 2, 4, 5});
  CHECK(checks::tree_violations(h).empty());
}

TEST_CASE("windowed and binary leaf splits agree") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    const int d = 1 + t % 4;
    std::vector<PointSet> types{checks::random_points(rng, 300 + t * 7, d)};
    if (t % 3 == 0) types.push_back(checks::random_points(rng, 100, d));
    const HierarchyBuilder b(sort_jointly(types), {});
    for (Index n_max : {1, 2, 5, 48})
      CHECK(b.leaf_splits_windowed(n_max) == b.leaf_splits_binary(n_max));
  }
}

TEST_CASE("node_box") {
  auto b = node_box(std::vector{1.6}, 2);
  CHECK(b.center[0] == 2.0);
  CHECK(b.half_extent[0] == 2.0);
  b = node_box(std::vector{3.1}, -1);
  CHECK(b.center[0] == 3.25);
  CHECK(b.half_extent[0] == 0.25);
  b = node_box(std::vector{3.1, 7.0}, kLevelMin);
  CHECK(b.center == std::vector{3.1, 7.0});
  CHECK(b.half_extent == std::vector{0.0, 0.0});
  b = node_box(std::vector{-1.6}, 2);
  CHECK(b.center[0] == -2.0);
  b = node_box(std::vector{-1.0}, kEmax<double> + 1);
  CHECK(b.center[0] == 0.0);
  CHECK(std::isinf(b.half_extent[0]));
}

TEST_CASE("build_hierarchy small inputs") {
  const std::vector<PointSet> one{PointSet(2, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6})};
  const auto h = build_hierarchy(one);
  CHECK(h.n_planes() == 1);
  CHECK(h.planes[0].size() == 1);
  CHECK(h.count(0, 0, 0) == 3);
  const std::vector<PointSet> empty{PointSet(2, {})};
  CHECK_THROWS_AS(build_hierarchy(empty), ValidationError);
  TreeParams bad;
  bad.coarsen = 1;
  CHECK_THROWS_AS(build_hierarchy(one, bad), UsageError);
}

TEST_CASE("two types sharing coordinates") {
  std::mt19937_64 rng(9);
  const PointSet a = checks::random_points(rng, 2000, 3);
  const std::vector<PointSet> types{a, a};
  TreeParams p;
  p.n_target = 10;
  const auto h2 = build_hierarchy(types, p);
  CHECK(checks::tree_violations(h2).empty());
  for (int q = 0; q < h2.n_planes(); ++q)
    for (Index j = 0; j < h2.planes[q].size(); ++j) CHECK(h2.count(q, j, 0) == h2.count(q, j, 1));
  CHECK(h2.leaf_splits[0] == h2.leaf_splits[1]);
}

TEST_CASE("regularization") {
  LevelHistogram flat{{4, 1000}};
  const Level lm = regularization_level(flat, 50);
  CHECK(lm == static_cast<Level>(std::floor(std::log2(50.0) + 4)));
  CHECK(regularization_level(flat, kInf) == kNoRegularization);

  // bulk far from two small clusters that share one cell
  std::vector<double> pos;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(2048, 3072);
  for (int i = 0; i < 10000; ++i) {
    pos.push_back(u(rng));
    pos.push_back(u(rng));
  }
  for (int i = 0; i < 24; ++i) {
    pos.push_back(1.0 + i * 0.01);
    pos.push_back(1.0);
    pos.push_back(1000.0 + i * 0.01);
    pos.push_back(1000.0);
  }
  const std::vector<PointSet> types{PointSet(2, pos)};
  auto leaf_count_of = [&](double f_max) {
    TreeParams p;
    p.f_max = f_max;
    const auto h = build_hierarchy(types, p);
    CHECK(checks::tree_violations(h).empty());
    for (Index j = 0; j < h.planes[0].size(); ++j) {
      const Index s = h.planes[0].point_spl[j];
      if (h.positions[s * 2] < 2.0 && h.positions[s * 2 + 1] < 2.0) return h.count(0, j, 0);
    }
    return Index{-1};
  };
  CHECK(leaf_count_of(kInf) == 48);
  CHECK(leaf_count_of(50) == 24);
}

TEST_CASE("randomized invariants and idempotence") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 40; ++t) {
    const int d = 1 + static_cast<int>(rng() % 4);
    TreeParams p;
    p.n_max0 = 1 + static_cast<Index>(rng() % 64);
    p.coarsen = 2 + static_cast<Index>(rng() % 8);
    p.n_target = 1 + static_cast<Index>(rng() % 40);
    p.f_max = t % 4 == 0 ? kInf : 2.0 + static_cast<double>(rng() % 100);
    std::vector<PointSet> types;
    const int nt = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < nt; ++k) types.push_back(checks::random_points(rng, 50 + rng() % 2000, d));
    const auto h = build_hierarchy(types, p);
    const auto bad = checks::tree_violations(h);
    CHECK_MESSAGE(bad.empty(), (bad.empty() ? "" : bad.front()));
    if (nt == 1) {
      const std::vector<PointSet> again{PointSet(d, h.positions)};
      const auto h2 = build_hierarchy(again, p);
      REQUIRE(h2.n_planes() == h.n_planes());
      for (int q = 0; q < h.n_planes(); ++q) CHECK(h2.planes[q].spl == h.planes[q].spl);
    }
  }
}
