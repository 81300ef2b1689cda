#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <random>

#include "oracle/oracle.hpp"
#include "ztree/fof.hpp"
#include "ztree/knn.hpp"
#include "ztree/partsim.hpp"
#include "ztree/pointfile.hpp"

namespace ztree::cli {

namespace {

constexpr Index kOracleCap = 20000;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path);
  return f;
}

class Hash {
 public:
  void add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xff;
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(double v) { add(std::bit_cast<std::uint64_t>(v)); }
  [[nodiscard]] std::string hex() const {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

PeriodicDomain domain_of(const PointFile& f, bool periodic) {
  if (!periodic) return {};
  if (!f.periodic()) throw UsageError("--periodic needs a point file with box lengths");
  return PeriodicDomain(f.box);
}

void check_oracle_size(Index n) {
  if (n > kOracleCap)
    throw UsageError("--oracle is limited to " + std::to_string(kOracleCap) + " points");
}

oracle::Domain oracle_domain(const PeriodicDomain& d) { return {d.periods}; }

// ---- gen ----

struct GenArgs {
  std::string dist = "uniform";
  Index n = 0;
  int dims = 3;
  std::uint64_t seed = 0;
  double box = 1.0;
  bool periodic = false;
  bool mass = false;
  bool velocity = false;
  std::string out;
};

void cmd_gen(const GenArgs& a, std::ostream& out) {
  PointFile f;
  f.points = generate_points(parse_distribution(a.dist), a.n, a.dims, a.seed, a.box);
  if (a.periodic) {
    if (!(a.box > 0)) throw UsageError("--periodic needs --box > 0");
    f.box.assign(a.dims, a.box);
  }
  // extra columns draw from a stream separate from the positions
  std::mt19937_64 rng(a.seed ^ 0x9e3779b97f4a7c15ULL);
  if (a.mass) {
    std::uniform_real_distribution<double> u(0.5, 1.5);
    f.points.masses.resize(a.n);
    for (auto& m : f.points.masses) m = u(rng);
  }
  if (a.velocity) {
    std::normal_distribution<double> g(0.0, 1.0);
    f.points.velocities.resize(a.n * a.dims);
    for (auto& v : f.points.velocities) v = g(rng);
  }
  write_point_file(a.out, f);
  out << "# gen " << a.dist << " n=" << a.n << " dims=" << a.dims << " seed=" << a.seed << " -> "
      << a.out << "\n";
}

// ---- knn ----

struct KnnArgs {
  std::string input;
  std::string queries;
  Index k = 16;
  bool periodic = false;
  int ranks = 1;
  std::string order = "input";
  bool oracle = false;
  std::string out;
};

KnnResult oracle_knn(const PointSet& src, const PointSet& qry, Index k, const PeriodicDomain& dom,
                     RowOrder order) {
  PointSet s = src;
  PointSet q = qry;
  dom.wrap(s.positions, s.dims);
  dom.wrap(q.positions, q.dims);
  const auto t = oracle::brute_knn(s.positions, q.positions, s.dims, k, oracle_domain(dom));
  KnnResult r;
  r.k = k;
  r.n_query = q.size();
  r.order = RowOrder::kInput;
  r.indices.assign(t.indices.begin(), t.indices.end());
  r.distances = t.distances;
  r.query_index.resize(r.n_query);
  for (Index i = 0; i < r.n_query; ++i) r.query_index[i] = i;
  if (order == RowOrder::kZ) {
    const auto z = z_sort(q.positions, q.dims);
    KnnResult zr = r;
    zr.order = RowOrder::kZ;
    for (Index row = 0; row < r.n_query; ++row) {
      zr.query_index[row] = z[row];
      std::copy_n(r.indices.begin() + z[row] * k, k, zr.indices.begin() + row * k);
      std::copy_n(r.distances.begin() + z[row] * k, k, zr.distances.begin() + row * k);
    }
    return zr;
  }
  return r;
}

RowOrder parse_order(const std::string& s) {
  if (s == "z") return RowOrder::kZ;
  if (s == "input") return RowOrder::kInput;
  throw UsageError("--order must be z or input");
}

void write_knn_csv(const std::string& path, const KnnResult& r) {
  auto f = open_out(path);
  f << "query_index,rank,neighbour_index,distance\n";
  for (Index row = 0; row < r.n_query; ++row)
    for (Index j = 0; j < r.k; ++j)
      f << r.query_index[row] << ',' << j + 1 << ',' << r.indices[row * r.k + j] << ','
        << fmt(r.distances[row * r.k + j]) << '\n';
}

void cmd_knn(const KnnArgs& a, std::ostream& out) {
  if (a.ranks < 1) throw UsageError("--ranks must be >= 1");
  const PointFile src = read_point_file(a.input);
  std::optional<PointFile> qry;
  if (!a.queries.empty()) {
    qry = read_point_file(a.queries);
    if (qry->points.dims != src.points.dims)
      throw ValidationError("query and source files differ in dimension");
  }
  const PeriodicDomain dom = domain_of(src, a.periodic);
  KnnOptions opt;
  opt.order = parse_order(a.order);
  KnnResult r;
  if (a.oracle) {
    check_oracle_size(src.points.size());
    if (qry) check_oracle_size(qry->points.size());
    if (a.k < 1) throw UsageError("k must be >= 1");
    if (a.k > src.points.size()) throw ValidationError("k exceeds the number of sources");
    r = oracle_knn(src.points, qry ? qry->points : src.points, a.k, dom, opt.order);
  } else if (a.ranks == 1) {
    r = qry ? knn_query(src.points, qry->points, a.k, dom, opt) : knn_self(src.points, a.k, dom, opt);
  } else {
    partsim::DistOptions d;
    d.n_ranks = a.ranks;
    r = partsim::distributed_knn(src.points, qry ? &qry->points : nullptr, a.k, dom, opt, d).merged;
  }
  write_knn_csv(a.out, r);
  out << "# knn n_sources=" << src.points.size() << " n_queries=" << r.n_query << " k=" << a.k
      << " ranks=" << a.ranks << " order=" << a.order << (a.oracle ? " oracle" : "") << "\n";
}

// ---- fof ----

struct FofArgs {
  std::string input;
  std::optional<double> alpha;
  std::optional<double> rlink;
  bool periodic = false;
  int ranks = 1;
  Index min_count = 20;
  bool oracle = false;
  std::string labels;
  std::string catalogue;
};

/// Partition in input order plus catalogue, independent of the path taken.
struct FofRun {
  double r_link = 0;
  std::vector<Index> labels;  // per input row: smallest input row of its group
  Catalogue catalogue;        // group_id = smallest input row of the group
  Index groups = 0;
  PhaseTimes times;
};

std::vector<Index> canonical(std::span<const Index> any_labels) {
  std::map<Index, Index> smallest;
  for (std::size_t i = 0; i < any_labels.size(); ++i) smallest.emplace(any_labels[i], static_cast<Index>(i));
  std::vector<Index> out(any_labels.size());
  for (std::size_t i = 0; i < any_labels.size(); ++i) out[i] = smallest.at(any_labels[i]);
  return out;
}

Index count_groups(std::span<const Index> canon) {
  Index g = 0;
  for (std::size_t i = 0; i < canon.size(); ++i) g += canon[i] == static_cast<Index>(i);
  return g;
}

/// Catalogue from input-order labels: points in z-order, labels = group's first z index.
Catalogue catalogue_of(const PointSet& points, std::span<const Index> canon,
                       const PeriodicDomain& dom, Index min_count) {
  PointSet wrapped = points;
  dom.wrap(wrapped.positions, wrapped.dims);
  const auto order = z_sort(wrapped.positions, wrapped.dims);
  const PointSet sorted = gather(wrapped, order);
  std::map<Index, Index> first_z;
  for (std::size_t z = 0; z < order.size(); ++z) first_z.emplace(canon[order[z]], static_cast<Index>(z));
  std::vector<Index> zl(order.size());
  for (std::size_t z = 0; z < order.size(); ++z) zl[z] = first_z.at(canon[order[z]]);
  Catalogue c = reduce_catalogue(sorted, zl, min_count, dom);
  for (auto& e : c.entries) e.group_id = canon[order[e.group_id]];
  return c;
}

FofRun run_fof(const PointSet& points, double r_link, const PeriodicDomain& dom, int ranks,
               Index min_count, bool use_oracle, Index ngr = 32) {
  FofRun run;
  run.r_link = r_link;
  if (use_oracle) {
    check_oracle_size(points.size());
    PointSet w = points;
    dom.wrap(w.positions, w.dims);
    const auto l = oracle::brute_fof(w.positions, w.dims, r_link, oracle_domain(dom));
    run.labels = canonical(std::vector<Index>(l.begin(), l.end()));
    run.catalogue = catalogue_of(points, run.labels, dom, min_count);
  } else if (ranks == 1) {
    FofOptions opt;
    opt.ngr = ngr;
    const FofResult r = fof(points, r_link, dom, opt);
    run.times = r.times;
    run.labels = canonical(r.input_labels());
    Catalogue c = reduce_catalogue(r.sorted, r.igroup, min_count, dom);
    for (auto& e : c.entries) e.group_id = run.labels[r.order[e.group_id]];
    run.catalogue = std::move(c);
  } else {
    partsim::DistOptions d;
    d.n_ranks = ranks;
    const auto r = partsim::distributed_fof(points, r_link, dom, {}, d, min_count);
    run.times = r.times;
    run.labels = canonical(r.input_labels());
    run.catalogue = r.catalogue;
    for (auto& e : run.catalogue.entries) e.group_id = run.labels[r.order[e.group_id]];
  }
  run.groups = count_groups(run.labels);
  return run;
}

void write_catalogue(const std::string& path, const Catalogue& c, int dims, bool vel) {
  auto f = open_out(path);
  f << "group_id,count,mass";
  for (int i = 0; i < dims; ++i) f << ",com_" << i;
  if (vel)
    for (int i = 0; i < dims; ++i) f << ",vel_" << i;
  f << ",inertia_radius\n";
  for (const auto& e : c.entries) {
    f << e.group_id << ',' << e.count << ',' << fmt(e.mass);
    for (double x : e.com) f << ',' << fmt(x);
    for (double v : e.com_velocity) f << ',' << fmt(v);
    f << ',' << fmt(e.inertia_radius) << '\n';
  }
}

void cmd_fof(const FofArgs& a, std::ostream& out, std::ostream& err) {
  if (a.alpha.has_value() == a.rlink.has_value())
    throw UsageError("give exactly one of --alpha and --rlink");
  if (a.ranks < 1) throw UsageError("--ranks must be >= 1");
  if (a.min_count < 1) throw UsageError("--min-count must be >= 1");
  const PointFile in = read_point_file(a.input);
  const PeriodicDomain dom = domain_of(in, a.periodic);
  double r_link = 0;
  if (a.alpha) {
    if (!in.periodic()) throw UsageError("--alpha needs a box volume in the point file");
    r_link = linking_length(*a.alpha, in.volume(), in.points.size(), in.points.dims);
  } else {
    r_link = *a.rlink;
  }
  const FofRun run = run_fof(in.points, r_link, dom, a.ranks, a.min_count, a.oracle);
  if (!a.labels.empty()) {
    auto f = open_out(a.labels);
    f << "index,group\n";
    for (std::size_t i = 0; i < run.labels.size(); ++i) f << i << ',' << run.labels[i] << '\n';
  }
  if (!a.catalogue.empty()) write_catalogue(a.catalogue, run.catalogue, in.points.dims, in.points.has_velocities());
  for (const auto& e : run.catalogue.entries)
    if (!e.compact) {
      err << "warning: group " << e.group_id
          << " spans half the box or more; its centre of mass is unreliable\n";
      break;
    }
  out << "# fof n=" << in.points.size() << " dims=" << in.points.dims << " r_link=" << fmt(r_link)
      << " groups=" << run.groups << " catalogue=" << run.catalogue.entries.size()
      << " dropped_groups=" << run.catalogue.dropped_groups << " ranks=" << a.ranks
      << (a.oracle ? " oracle" : "") << "\n";
}

// ---- bench ----

struct BenchArgs {
  std::string op = "knn";
  std::vector<Index> sizes;
  int dims = 3;
  Index k = 16;
  std::vector<double> alphas{0.2};
  int ranks = 1;
  std::uint64_t seed = 0;
  std::string dist = "uniform";
  std::string out;
};

void cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.sizes.empty()) throw UsageError("--sizes is required");
  if (!std::is_sorted(a.sizes.begin(), a.sizes.end())) throw UsageError("--sizes must ascend");
  if (a.op != "knn" && a.op != "fof") throw UsageError("--op must be knn or fof");
  if (a.ranks < 1) throw UsageError("--ranks must be >= 1");
  auto f = open_out(a.out);
  f << "op,dist,n,d,k,alpha,n_ranks,seed,sort_ms,tree_ms,walk_ms,leaf_ms,reorder_ms,total_ms,"
       "groups,result_hash\n";
  const Distribution dist = parse_distribution(a.dist);
  for (const Index n : a.sizes) {
    const PointSet pts = generate_points(dist, n, a.dims, a.seed, 1.0);
    const PeriodicDomain dom =
        dist == Distribution::kGaussian ? PeriodicDomain{} : PeriodicDomain::cube(a.dims, 1.0);
    auto record = [&](double alpha, const PhaseTimes& t, Index groups, const Hash& h) {
      f << a.op << ',' << a.dist << ',' << n << ',' << a.dims << ',' << (a.op == "knn" ? a.k : 0)
        << ',' << (a.op == "fof" ? fmt(alpha) : std::string("0")) << ',' << a.ranks << ','
        << a.seed << ',' << fmt(t.sort_ms) << ',' << fmt(t.tree_ms) << ',' << fmt(t.walk_ms)
        << ',' << fmt(t.leaf_ms) << ',' << fmt(t.reorder_ms) << ',' << fmt(t.total_ms) << ','
        << groups << ',' << h.hex() << '\n';
      out << "# " << a.op << " n=" << n << " total_ms=" << fmt(t.total_ms) << "\n";
    };
    if (a.op == "knn") {
      KnnOptions opt;
      opt.order = RowOrder::kInput;
      KnnResult r;
      if (a.ranks == 1) {
        r = knn_self(pts, a.k, dom, opt);
      } else {
        partsim::DistOptions d;
        d.n_ranks = a.ranks;
        d.seed = a.seed;
        r = partsim::distributed_knn(pts, nullptr, a.k, dom, opt, d).merged;
      }
      Hash h;
      for (const Index i : r.indices) h.add(static_cast<std::uint64_t>(i));
      for (const double x : r.distances) h.add(x);
      record(0, r.times, 0, h);
    } else {
      for (const double alpha : a.alphas) {
        const double r_link = linking_length(alpha, 1.0, n, a.dims);
        const FofRun run = run_fof(pts, r_link, dom, a.ranks, 20, false);
        Hash h;
        for (const Index l : run.labels) h.add(static_cast<std::uint64_t>(l));
        record(alpha, run.times, run.groups, h);
      }
    }
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"z-order plane tree: kNN and friends-of-friends"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a point file");
  g->add_option("--dist", gen.dist, "grid | uniform | gaussian")->capture_default_str();
  g->add_option("--n", gen.n, "number of points")->required();
  g->add_option("--dims", gen.dims, "dimension")->capture_default_str();
  g->add_option("--seed", gen.seed, "random seed")->capture_default_str();
  g->add_option("--box", gen.box, "box length")->capture_default_str();
  g->add_flag("--periodic", gen.periodic, "store the box as periodic");
  g->add_flag("--mass", gen.mass, "attach random masses");
  g->add_flag("--velocity", gen.velocity, "attach random velocities");
  g->add_option("--out", gen.out, "output file")->required();

  KnnArgs knn;
  auto* k = app.add_subcommand("knn", "k nearest neighbours");
  k->add_option("--input", knn.input, "source point file")->required();
  k->add_option("--queries", knn.queries, "query point file (default: self query)");
  k->add_option("--k", knn.k, "neighbours per query")->capture_default_str();
  k->add_flag("--periodic", knn.periodic, "use the file's box as periodic domain");
  k->add_option("--ranks", knn.ranks, "simulated ranks")->capture_default_str();
  k->add_option("--order", knn.order, "row order: z | input")->capture_default_str();
  k->add_flag("--oracle", knn.oracle, "brute force (small inputs only)");
  k->add_option("--out", knn.out, "output CSV")->required();

  FofArgs fofa;
  auto* fo = app.add_subcommand("fof", "friends-of-friends groups");
  fo->add_option("--input", fofa.input, "point file")->required();
  fo->add_option("--alpha", fofa.alpha, "linking length in mean separations");
  fo->add_option("--rlink", fofa.rlink, "absolute linking length");
  fo->add_flag("--periodic", fofa.periodic, "use the file's box as periodic domain");
  fo->add_option("--ranks", fofa.ranks, "simulated ranks")->capture_default_str();
  fo->add_option("--min-count", fofa.min_count, "smallest catalogued group")->capture_default_str();
  fo->add_flag("--oracle", fofa.oracle, "brute force (small inputs only)");
  fo->add_option("--labels", fofa.labels, "label CSV");
  fo->add_option("--catalogue", fofa.catalogue, "catalogue CSV");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "timing table");
  b->add_option("--op", bench.op, "knn | fof")->capture_default_str();
  b->add_option("--sizes", bench.sizes, "ascending sizes")->delimiter(',')->required();
  b->add_option("--dims", bench.dims, "dimension")->capture_default_str();
  b->add_option("--k", bench.k, "neighbours (knn)")->capture_default_str();
  b->add_option("--alphas", bench.alphas, "alpha grid (fof)")->delimiter(',');
  b->add_option("--ranks", bench.ranks, "simulated ranks")->capture_default_str();
  b->add_option("--seed", bench.seed, "random seed")->capture_default_str();
  b->add_option("--dist", bench.dist, "grid | uniform | gaussian")->capture_default_str();
  b->add_option("--out", bench.out, "output CSV")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (g->parsed()) cmd_gen(gen, out);
    if (k->parsed()) cmd_knn(knn, out);
    if (fo->parsed()) cmd_fof(fofa, out, err);
    if (b->parsed()) cmd_bench(bench, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ProtocolError& e) {
    err << "protocol error: " << e.what() << "\n";
    return kProtocol;
  } catch (const std::bad_alloc&) {
    err << "capacity error: out of memory\n";
    return kProtocol;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}

}  // namespace ztree::cli
