// Acceptance checks. Prints one PASS/FAIL line per criterion; exits nonzero on any
// hard failure.

#include <chrono>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>

#include "fof_checks.hpp"
#include "knn_checks.hpp"
#include "oracle/oracle.hpp"
#include "tree_checks.hpp"
#include "ztree/fof.hpp"
#include "ztree/knn.hpp"
#include "ztree/partsim.hpp"
#include "ztree/pointfile.hpp"

using namespace ztree;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

enum class Verdict { kPass, kWarn, kFail };

struct Outcome {
  Verdict verdict = Verdict::kPass;
  std::string detail;
};

oracle::Domain od(const PeriodicDomain& d) { return {d.periods}; }

const char* dist_name(Distribution d) {
  switch (d) {
    case Distribution::kGrid: return "grid";
    case Distribution::kUniform: return "uniform";
    case Distribution::kGaussian: return "gaussian";
  }
  return "?";
}

// ---- 1 ----

Outcome line8_splits() {
  const auto t0 = Clock::now();
  const std::vector<double> x{1.6, 3.1, 3.3, 4.6, 5.6, 6.8, 9.4, 9.7};
  const auto lv = pair_levels(x, 1);
  const std::vector<Level> interior(lv.begin() + 1, lv.end() - 1);
  std::vector<Index> n;
  for (Index i = 1; i < 8; ++i) n.push_back(node_range(lv, x, 1, i).n);
  TreeParams p;
  p.n_max0 = 2;
  p.coarsen = 2;
  p.n_target = 1;
  p.f_max = kInf;
  const std::vector<PointSet> types{PointSet(1, x)};
  const auto h = build_hierarchy(types, p);
  const bool ok = interior == std::vector<Level>{2, -1, 3, 1, 2, 4, 0} &&
                  n == std::vector<Index>{3, 2, 6, 2, 3, 8, 2} && h.n_planes() >= 2 &&
                  h.planes[0].spl == std::vector<Index>{0, 1, 3, 5, 6, 8} &&
                  h.planes[1].spl == std::vector<Index>{0, 2, 4, 5};
  const double s = seconds_since(t0);
  std::ostringstream d;
  d << "levels, counts and both split planes " << (ok ? "match" : "differ") << "; " << s << " s";
  return {ok && s < 1.0 ? Verdict::kPass : Verdict::kFail, d.str()};
}

// ---- 2, 7, 8 ----

struct KnnSuite {
  Index mismatches = 0;
  Index cases = 0;
  std::string first_error;
  double seconds = 0;
  Index pruning_diffs = 0;
};

PointSet dataset(Distribution dist, Index n, int dims, std::uint64_t seed, bool periodic) {
  // periodic sets live in [0, 1); the open gaussian is unbounded
  const double box = dist == Distribution::kGaussian && !periodic ? 0.0 : 1.0;
  return generate_points(dist, n, dims, seed, box);
}

KnnSuite knn_suite(bool with_pruning_check) {
  KnnSuite s;
  const auto t0 = Clock::now();
  KnnOptions off;
  off.walk.sort_segments = false;
  off.walk.early_exit = false;
  for (int dims : {2, 3})
    for (Distribution dist : {Distribution::kGrid, Distribution::kUniform, Distribution::kGaussian})
      for (bool periodic : {false, true}) {
        const Index n = 4096;
        const PointSet src = dataset(dist, n, dims, 100 + dims, periodic);
        const PointSet qry = dist == Distribution::kGrid ? src : dataset(dist, n, dims, 200 + dims, periodic);
        const PeriodicDomain dom = periodic ? PeriodicDomain::cube(dims, 1.0) : PeriodicDomain{};
        const auto ref = oracle::brute_knn(src.positions, qry.positions, dims, 65, od(dom));
        // trim the 65-column table to k + 1 columns per query
        for (Index k : {1, 16, 30, 64}) {
          ++s.cases;
          oracle::KnnTable t;
          t.k = k + 1;
          for (Index q = 0; q < qry.size(); ++q)
            for (Index j = 0; j <= k; ++j) {
              t.indices.push_back(ref.indices[q * 65 + j]);
              t.distances.push_back(ref.distances[q * 65 + j]);
            }
          const auto r = knn_query(src, qry, k, dom);
          const std::string err = checks::compare_knn(r, t, k + 1);
          if (!err.empty()) {
            ++s.mismatches;
            if (s.first_error.empty()) {
              std::ostringstream m;
              m << dist_name(dist) << " d=" << dims << " k=" << k << (periodic ? " periodic" : "")
                << ": " << err;
              s.first_error = m.str();
            }
          }
          if (with_pruning_check) {
            // pruning runs are excluded from the timing bound
            const auto t1 = Clock::now();
            if (!checks::bit_equal(r, knn_query(src, qry, k, dom, off))) ++s.pruning_diffs;
            s.seconds -= seconds_since(t1);
          }
        }
      }
  s.seconds += seconds_since(t0);
  return s;
}

Outcome chunking() {
  const PointSet src = generate_points(Distribution::kUniform, 4096, 3, 77);
  KnnOptions opt;
  opt.k_max = 32;
  const auto r = knn_self(src, 64, {}, opt);
  const auto ref = oracle::brute_knn(src.positions, src.positions, 3, 65);
  const std::string err = checks::compare_knn(r, ref, 65);
  return {err.empty() ? Verdict::kPass : Verdict::kFail,
          err.empty() ? "k = 64 in two chunks of 32 equals brute force on 4096 points" : err};
}

// ---- 3 ----

Outcome fof_suite() {
  const auto t0 = Clock::now();
  const Index n = 3000;
  const PointSet p = generate_points(Distribution::kUniform, n, 3, 303);
  const double sep = std::cbrt(1.0 / static_cast<double>(n));
  Index bad = 0, cases = 0;
  std::string first;
  for (bool periodic : {false, true}) {
    const PeriodicDomain dom = periodic ? PeriodicDomain::cube(3, 1.0) : PeriodicDomain{};
    for (double alpha : {0.2, 0.5, 0.8, 0.9, 1.2}) {
      ++cases;
      const double r = alpha * sep;
      const auto ours = checks::canonical_partition(fof(p, r, dom).input_labels());
      const auto ref = checks::canonical_partition(oracle::brute_fof(p.positions, 3, r, od(dom)));
      if (ours != ref) {
        ++bad;
        if (first.empty())
          first = "alpha " + std::to_string(alpha) + (periodic ? " periodic" : " open");
      }
    }
  }
  const double s = seconds_since(t0);
  std::ostringstream d;
  d << cases - bad << "/" << cases << " partitions equal brute force; " << s << " s";
  if (!first.empty()) d << "; first mismatch " << first;
  return {bad == 0 && s < 60 ? Verdict::kPass : Verdict::kFail, d.str()};
}

// ---- 4 ----

Outcome bound_soundness() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> c(-2, 2);
  std::uniform_real_distribution<double> h(0, 0.6);
  Index violations = 0;
  const int pairs = 1000;
  for (int t = 0; t < pairs; ++t) {
    const int d = 1 + t % 3;
    const bool periodic = t % 2 == 1;
    std::vector<double> periods(d, periodic ? 3.0 : 0.0);
    const PeriodicDomain dom(periods);
    Box a, b;
    for (int i = 0; i < d; ++i) {
      a.center.push_back(c(rng));
      b.center.push_back(c(rng));
      a.half_extent.push_back(t % 10 == 0 ? 0.0 : h(rng));
      b.half_extent.push_back(h(rng));
    }
    const double lo = d_low(a, b, dom);
    const double up = d_up(a, b, dom);
    const auto [mn, mx] = oracle::sample_bound_check(a.center, a.half_extent, b.center,
                                                     b.half_extent, {periods}, 100, t);
    if (lo > mn * kBoundSlack || mx > up * kBoundSlack) ++violations;
  }
  std::ostringstream d;
  d << violations << " violations over " << pairs << " box pairs x 100 samples";
  return {violations == 0 ? Verdict::kPass : Verdict::kFail, d.str()};
}

// ---- 5 ----

Outcome rank_transparency() {
  Index diffs = 0;
  std::ostringstream d;
  KnnOptions z;
  z.order = RowOrder::kZ;
  const PointSet u = generate_points(Distribution::kUniform, 10000, 3, 505);
  const PointSet g = generate_points(Distribution::kGaussian, 10000, 3, 506);
  const PeriodicDomain box = PeriodicDomain::cube(3, 1.0);
  const auto ku = knn_self(u, 16, {}, z);
  const auto kg = knn_self(g, 16, box, z);
  const double r = linking_length(0.8, 1.0, 10000);
  const auto fu = checks::canonical_partition(fof(u, r, box).input_labels());
  const auto fg = checks::canonical_partition(fof(g, 0.3 * r).input_labels());
  for (int ranks : {2, 4, 8}) {
    partsim::DistOptions opt;
    opt.n_ranks = ranks;
    if (!checks::bit_equal(partsim::distributed_knn(u, nullptr, 16, {}, z, opt).merged, ku)) ++diffs;
    if (!checks::bit_equal(partsim::distributed_knn(g, nullptr, 16, box, z, opt).merged, kg)) ++diffs;
    if (checks::canonical_partition(partsim::distributed_fof(u, r, box, {}, opt).input_labels()) != fu)
      ++diffs;
    if (checks::canonical_partition(partsim::distributed_fof(g, 0.3 * r, {}, {}, opt).input_labels()) !=
        fg)
      ++diffs;
  }
  d << diffs << " differing outputs over ranks 2/4/8 (kNN and FoF, uniform and gaussian)";
  return {diffs == 0 ? Verdict::kPass : Verdict::kFail, d.str()};
}

// ---- 6 ----

Outcome tree_invariants() {
  std::mt19937_64 rng(606);
  Index bad = 0;
  std::string first;
  for (int t = 0; t < 200; ++t) {
    const int d = 1 + static_cast<int>(rng() % 4);
    TreeParams p;
    p.n_max0 = 1 + static_cast<Index>(rng() % 64);
    p.coarsen = 2 + static_cast<Index>(rng() % 8);
    p.n_target = 1 + static_cast<Index>(rng() % 50);
    p.f_max = t % 5 == 0 ? kInf : 1.0 + static_cast<double>(rng() % 200);
    std::vector<PointSet> types;
    const int nt = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < nt; ++k)
      types.push_back(checks::random_points(rng, 20 + static_cast<Index>(rng() % 3000), d));
    const auto v = checks::tree_violations(build_hierarchy(types, p));
    if (!v.empty()) {
      ++bad;
      if (first.empty()) first = v.front();
    }
  }
  std::ostringstream d;
  d << bad << " of 200 hierarchies violate an invariant";
  if (!first.empty()) d << " (" << first << ")";
  return {bad == 0 ? Verdict::kPass : Verdict::kFail, d.str()};
}

// ---- 9 ----

double time_knn(Index n) {
  const PointSet p = generate_points(Distribution::kUniform, n, 3, 909);
  const auto t0 = Clock::now();
  const auto r = knn_self(p, 16);
  const double s = seconds_since(t0);
  return r.indices.empty() ? -1 : s;
}

double time_fof(Index n) {
  const PointSet p = generate_points(Distribution::kUniform, n, 3, 910);
  const auto t0 = Clock::now();
  const auto r = fof(p, linking_length(0.2, 1.0, n), PeriodicDomain::cube(3, 1.0));
  const double s = seconds_since(t0);
  return r.igroup.empty() ? -1 : s;
}

Outcome scaling() {
  std::ostringstream d;
  Verdict v = Verdict::kPass;
  auto judge = [&](const char* what, double ratio, double bound) {
    d << what << " " << ratio << " (bound " << bound << ") ";
    if (ratio > 2 * bound) v = Verdict::kFail;
    else if (ratio > bound && v == Verdict::kPass) v = Verdict::kWarn;
  };
  const double k1 = time_knn(100000), k4 = time_knn(400000), k10 = time_knn(1000000);
  const double f1 = time_fof(100000), f4 = time_fof(400000), f10 = time_fof(1000000);
  d << "knn " << k1 << "/" << k4 << "/" << k10 << " s, fof " << f1 << "/" << f4 << "/" << f10
    << " s; ";
  judge("knn 4e5:1e5", k4 / k1, 8);
  judge("knn 1e6:1e5", k10 / k1, 15);
  judge("fof 4e5:1e5", f4 / f1, 8);
  judge("fof 1e6:1e5", f10 / f1, 15);
  return {v, d.str()};
}

// ---- 10 ----

Outcome monotonicity() {
  const Index n = 10000;
  const PointSet p = generate_points(Distribution::kUniform, n, 3, 1010);
  const PeriodicDomain box = PeriodicDomain::cube(3, 1.0);
  Index prev = n + 1;
  bool ok = true;
  std::ostringstream d;
  d << "groups:";
  for (double alpha : {0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 1.0, 1.2, 1.5}) {
    const Index g = fof(p, linking_length(alpha, 1.0, n), box).n_groups();
    d << " " << g;
    if (g > prev) ok = false;
    prev = g;
  }
  return {ok ? Verdict::kPass : Verdict::kFail, d.str()};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* title, const Outcome& o) {
    const char* tag = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kWarn ? "WARN" : "FAIL";
    std::printf("[%s] %2d %s: %s\n", tag, id, title, o.detail.c_str());
    std::fflush(stdout);
    if (o.verdict == Verdict::kFail) ++failures;
  };

  report(1, "eight-point split example", line8_splits());

  const KnnSuite suite = knn_suite(true);
  {
    std::ostringstream d;
    d << suite.cases - suite.mismatches << "/" << suite.cases << " configurations equal brute force; "
      << suite.seconds << " s";
    if (!suite.first_error.empty()) d << "; first mismatch " << suite.first_error;
    report(2, "kNN oracle equivalence", {suite.mismatches == 0 && suite.seconds < 60 ? Verdict::kPass : Verdict::kFail, d.str()});
  }
  report(3, "FoF oracle equivalence", fof_suite());
  report(4, "bound soundness", bound_soundness());
  report(5, "rank transparency", rank_transparency());
  report(6, "tree invariants", tree_invariants());
  {
    std::ostringstream d;
    d << suite.pruning_diffs << " of " << suite.cases
      << " kNN outputs change with segment sorting and early exit disabled";
    report(7, "pruning safety", {suite.pruning_diffs == 0 ? Verdict::kPass : Verdict::kFail, d.str()});
  }
  report(8, "k chunking", chunking());
  report(9, "scaling sanity", scaling());
  report(10, "FoF monotonicity", monotonicity());
  std::printf("%s\n", failures == 0 ? "all criteria met" : "some criteria failed");
  return failures == 0 ? 0 : 1;
}
