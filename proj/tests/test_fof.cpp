#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <random>

#include "fof_checks.hpp"
#include "oracle/oracle.hpp"
#include "ztree/fof.hpp"
#include "ztree/pointfile.hpp"

using namespace ztree;

namespace {

std::vector<long long> oracle_partition(const PointSet& p, double r, const PeriodicDomain& dom) {
  PointSet w = p;
  dom.wrap(w.positions, w.dims);
  return checks::canonical_partition(oracle::brute_fof(w.positions, w.dims, r, {dom.periods}));
}

std::vector<long long> fof_partition(const PointSet& p, double r, const PeriodicDomain& dom,
                                     const FofOptions& opt = {}) {
  return checks::canonical_partition(fof(p, r, dom, opt).input_labels());
}

}  // namespace

TEST_CASE("linking_length") {
  CHECK(linking_length(0.2, 1000, 1000) == doctest::Approx(0.2));
  CHECK(linking_length(0.2, 8, 1) == doctest::Approx(0.4));
  CHECK(linking_length(1.0, 27, 27) == doctest::Approx(1.0));
  CHECK(linking_length(0.5, 100, 4, 2) == doctest::Approx(2.5));
  CHECK_THROWS_AS(linking_length(0.2, 0, 10), UsageError);
}

TEST_CASE("find_root, link, contract") {
  std::vector<Index> l{0, 0, 1};
  CHECK(find_root(l, 2) == 0);
  CHECK(find_root(l, 0) == 0);
  std::vector<Index> chain{0, 0, 1, 2, 3};
  CHECK(find_root(chain, 4) == 0);

  std::vector<Index> a{0, 1, 2};
  link(a, 1, 2);
  CHECK(a == std::vector<Index>{0, 1, 1});
  std::vector<Index> b{0, 1, 2};
  link(b, 2, 0);
  CHECK(b == std::vector<Index>{0, 1, 0});
  std::vector<Index> c{0, 0, 2};
  link(c, 1, 0);
  CHECK(c == std::vector<Index>{0, 0, 2});

  std::vector<Index> x{0, 0, 1, 2};
  contract(x);
  CHECK(x == std::vector<Index>{0, 0, 0, 0});
  std::vector<Index> roots{0, 1, 2};
  contract(roots);
  CHECK(roots == std::vector<Index>{0, 1, 2});
  std::vector<Index> rev(50);
  for (Index i = 0; i < 50; ++i) rev[i] = i == 0 ? 0 : i - 1;
  contract(rev);
  CHECK(std::all_of(rev.begin(), rev.end(), [](Index v) { return v == 0; }));
}

TEST_CASE("link_atomic agrees with link") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<Index> a(100), b(100);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    for (int e = 0; e < 80; ++e) {
      const Index u = static_cast<Index>(rng() % 100), v = static_cast<Index>(rng() % 100);
      link(a, u, v);
      link_atomic(b, u, v);
    }
    contract(a);
    contract(b);
    CHECK(a == b);
  }
}

TEST_CASE("parent_to_node") {
  const std::vector<Index> spl{0, 2, 4};
  auto none = parent_to_node(std::vector<Index>{0, 1}, std::vector<char>{0, 0}, spl);
  CHECK(none.labels == std::vector<Index>{0, 1, 2, 3});
  auto both = parent_to_node(std::vector<Index>{0, 0}, std::vector<char>{1, 1}, spl);
  CHECK(both.labels == std::vector<Index>{0, 0, 0, 0});
  CHECK(both.full_in == std::vector<char>{1, 1, 1, 1});
  auto self = parent_to_node(std::vector<Index>{0, 1}, std::vector<char>{0, 1}, spl);
  CHECK(self.labels == std::vector<Index>{0, 1, 2, 2});
}

TEST_CASE("fof_node_interaction") {
  const std::vector<double> c0{0.0}, c1{2.0}, h0{0.0};
  const std::vector<Index> labels{0, 1};
  CHECK(fof_node_interaction(0, 0, {c0.data(), h0.data()}, {c0.data(), h0.data()}, 1, labels, 1.0,
                             {}) == NodeInteraction::kDiscard);
  CHECK(fof_node_interaction(0, 1, {c0.data(), h0.data()}, {c1.data(), h0.data()}, 1, labels, 1.0,
                             {}) == NodeInteraction::kDiscard);
  const std::vector<double> big{1.0};
  CHECK(fof_node_interaction(0, 1, {c0.data(), big.data()}, {c1.data(), big.data()}, 1, labels, 1.0,
                             {}) == NodeInteraction::kRefine);
  const std::vector<double> near{0.5};
  CHECK(fof_node_interaction(0, 1, {c0.data(), h0.data()}, {near.data(), h0.data()}, 1, labels, 1.0,
                             {}) == NodeInteraction::kLink);
}

TEST_CASE("fof examples") {
  const PointSet line(1, {0.0, 0.5, 1.0, 5.0});
  const auto r = fof(line, 0.6);
  CHECK(r.input_labels() == std::vector<Index>{0, 0, 0, 3});
  CHECK(r.n_groups() == 2);
  CHECK(fof(line, 0.1).n_groups() == 4);
  const PointSet wrap(1, {0.2, 9.9});
  CHECK(fof(wrap, 0.5, PeriodicDomain::cube(1, 10)).n_groups() == 1);
  CHECK(fof(wrap, 0.5).n_groups() == 2);
  CHECK_THROWS_AS(fof(line, 0.0), UsageError);
}

TEST_CASE("igroup roots are component minima in z order") {
  const PointSet p = generate_points(Distribution::kUniform, 2000, 3, 2);
  const auto r = fof(p, 0.06);
  for (std::size_t i = 0; i < r.igroup.size(); ++i) {
    CHECK(r.igroup[i] <= static_cast<Index>(i));
    CHECK(r.igroup[r.igroup[i]] == r.igroup[i]);
  }
}

TEST_CASE("partitions equal brute force") {
  for (int d : {2, 3})
    for (bool periodic : {false, true}) {
      const PointSet p = generate_points(Distribution::kUniform, 2500, d, 40 + d);
      const PeriodicDomain dom = periodic ? PeriodicDomain::cube(d, 1.0) : PeriodicDomain{};
      const double sep = std::pow(1.0 / 2500, 1.0 / d);
      for (double alpha : {0.1, 0.4, 0.7, 0.9, 1.5}) {
        INFO("d=" << d << " periodic=" << periodic << " alpha=" << alpha);
        CHECK(fof_partition(p, alpha * sep, dom) == oracle_partition(p, alpha * sep, dom));
      }
    }
  const PointSet g = generate_points(Distribution::kGaussian, 2000, 3, 7, 0.0);
  CHECK(fof_partition(g, 0.1, {}) == oracle_partition(g, 0.1, {}));
}

TEST_CASE("sequential and concurrent linking agree") {
  const PointSet p = generate_points(Distribution::kGaussian, 4000, 3, 11);
  FofOptions seq;
  seq.concurrent = false;
  for (double r : {0.01, 0.03}) {
    const auto a = fof(p, r, PeriodicDomain::cube(3, 1.0));
    const auto b = fof(p, r, PeriodicDomain::cube(3, 1.0), seq);
    CHECK(a.igroup == b.igroup);
  }
}

TEST_CASE("monotone in the linking length") {
  const PointSet p = generate_points(Distribution::kUniform, 3000, 3, 12);
  Index prev = p.size() + 1;
  std::vector<Index> prev_labels;
  for (double r : {0.01, 0.03, 0.05, 0.07, 0.1}) {
    const auto res = fof(p, r);
    CHECK(res.n_groups() <= prev);
    if (!prev_labels.empty())
      for (std::size_t i = 0; i < prev_labels.size(); ++i)
        CHECK(res.igroup[i] <= prev_labels[i]);
    prev = res.n_groups();
    prev_labels = res.igroup;
  }
}

TEST_CASE("group_order_sort") {
  CHECK(group_order_sort(std::vector<Index>{0, 1, 2}) == std::vector<Index>{0, 1, 2});
  CHECK(group_order_sort(std::vector<Index>{0, 0, 2, 0, 2}) == std::vector<Index>{0, 1, 3, 2, 4});
  CHECK(group_order_sort(std::vector<Index>{0, 0, 0}) == std::vector<Index>{0, 1, 2});
}

TEST_CASE("catalogue") {
  const PointSet two(1, {0.0, 2.0});
  auto c = reduce_catalogue(two, std::vector<Index>{0, 0}, 1);
  REQUIRE(c.entries.size() == 1);
  CHECK(c.entries[0].mass == 2.0);
  CHECK(c.entries[0].com[0] == 1.0);
  CHECK(c.entries[0].inertia_radius == doctest::Approx(1.0));

  PointSet nineteen(1, std::vector<double>(19, 0.5));
  c = reduce_catalogue(nineteen, std::vector<Index>(19, 0), 20);
  CHECK(c.entries.empty());
  CHECK(c.dropped_groups == 1);
  CHECK(c.dropped_mass == 19.0);

  c = reduce_catalogue(PointSet(2, {3.0, 4.0}), std::vector<Index>{0}, 1);
  CHECK(c.entries[0].inertia_radius == 0.0);

  // periodic group across the boundary
  PointSet w(1, {9.8, 0.2});
  w.masses = {1.0, 3.0};
  w.velocities = {1.0, -1.0};
  c = reduce_catalogue(w, std::vector<Index>{0, 0}, 1, PeriodicDomain::cube(1, 10));
  CHECK(c.entries[0].com[0] == doctest::Approx(0.1));
  CHECK(c.entries[0].com_velocity[0] == doctest::Approx(-0.5));
  CHECK(c.entries[0].compact);
}

TEST_CASE("mass conservation") {
  PointSet p = generate_points(Distribution::kGaussian, 3000, 3, 5);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int i = 0; i < 3000; ++i) p.masses.push_back(u(rng));
  const auto r = fof(p, 0.02, PeriodicDomain::cube(3, 1.0));
  const auto c = reduce_catalogue(r.sorted, r.igroup, 20, PeriodicDomain::cube(3, 1.0));
  double total = c.dropped_mass;
  for (const auto& e : c.entries) {
    total += e.mass;
    CHECK(e.count >= 20);
  }
  CHECK(total == doctest::Approx(std::accumulate(p.masses.begin(), p.masses.end(), 0.0)));
  CHECK(!c.entries.empty());
}
