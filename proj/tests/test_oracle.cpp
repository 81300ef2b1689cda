#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracle/oracle.hpp"

TEST_CASE("brute_knn") {
  const std::vector<double> one{2.0};
  const std::vector<double> q{0.0, 5.0, -1.0};
  const auto t = oracle::brute_knn(one, q, 1, 1);
  CHECK(t.indices == std::vector<long long>{0, 0, 0});
  CHECK(t.distances == std::vector<double>{2.0, 3.0, 3.0});

  const std::vector<double> s{0.0, 1.0, 3.0};
  const auto self = oracle::brute_knn(s, s, 1, 1);
  CHECK(self.indices == std::vector<long long>{0, 1, 2});
  CHECK(self.distances == std::vector<double>{0, 0, 0});
  const auto two = oracle::brute_knn(s, s, 1, 2);
  CHECK(two.indices == std::vector<long long>{0, 1, 1, 0, 2, 1});
  CHECK(two.distances == std::vector<double>{0, 1, 0, 1, 0, 2});

  // ties to the lower row
  const std::vector<double> sym{-1.0, 1.0};
  const std::vector<double> origin{0.0};
  CHECK(oracle::brute_knn(sym, origin, 1, 1).indices[0] == 0);
  CHECK_THROWS(oracle::brute_knn(s, s, 1, 4));
}

TEST_CASE("brute_fof") {
  const std::vector<double> far{0.0, 10.0, 20.0};
  CHECK(oracle::brute_fof(far, 1, 1.0) == std::vector<long long>{0, 1, 2});
  const std::vector<double> dense{0.0, 0.1, 0.2, 0.15};
  CHECK(oracle::brute_fof(dense, 1, 1.0) == std::vector<long long>{0, 0, 0, 0});
  const std::vector<double> line{0.0, 0.5, 1.0, 5.0};
  CHECK(oracle::brute_fof(line, 1, 0.6) == std::vector<long long>{0, 0, 0, 3});
  const std::vector<double> wrap{0.2, 9.9};
  CHECK(oracle::brute_fof(wrap, 1, 0.5, {{10.0}}) == std::vector<long long>{0, 0});
  // the linking test is inclusive
  CHECK(oracle::brute_fof(std::vector<double>{0.0, 0.5}, 1, 0.5) == std::vector<long long>{0, 0});
}

TEST_CASE("morton_key_sort") {
  const std::vector<std::uint64_t> g{1, 1, 0, 1, 1, 0, 0, 0};
  const auto perm = oracle::morton_key_sort(g, 2, 1);
  CHECK(perm == std::vector<long long>{3, 1, 2, 0});
  const std::vector<std::uint64_t> line{5, 2, 7, 0};
  CHECK(oracle::morton_key_sort(line, 1, 3) == std::vector<long long>{3, 1, 0, 2});
  std::vector<std::uint64_t> a{3, 1, 2, 0, 1, 3, 0, 2};
  std::vector<std::uint64_t> b{0, 2, 1, 3, 3, 1, 2, 0};
  auto sorted = [](const std::vector<std::uint64_t>& pts) {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
    for (long long i : oracle::morton_key_sort(pts, 2, 2)) out.emplace_back(pts[2 * i], pts[2 * i + 1]);
    return out;
  };
  CHECK(sorted(a) == sorted(b));
}

TEST_CASE("sample_bound_check") {
  const auto [mn, mx] = oracle::sample_bound_check({0.0}, {0.0}, {0.0}, {0.0}, {}, 10, 1);
  CHECK(mn == 0.0);
  CHECK(mx == 0.0);
  const auto [lo, hi] = oracle::sample_bound_check({0, 0}, {1, 1}, {3, 0}, {1, 1}, {}, 1000, 2);
  CHECK(lo >= 1.0);
  CHECK(hi <= std::sqrt(29.0));
  CHECK(hi > lo);
  const auto [wl, wh] = oracle::sample_bound_check({0.5}, {0.5}, {9.5}, {0.5}, {{10.0}}, 1000, 3);
  CHECK(wl >= 0.0);
  CHECK(wh <= 2.0);
}

TEST_CASE("distance2 minimal image") {
  const double a[2] = {0.5, 0.0};
  const double b[2] = {9.5, 3.0};
  CHECK(oracle::distance2(a, b, 2, {{10.0, 0.0}}) == doctest::Approx(1.0 + 9.0));
  CHECK(oracle::distance2(a, b, 2, {}) == doctest::Approx(81.0 + 9.0));
}
