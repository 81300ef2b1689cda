#include "ztree/pointfile.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

namespace ztree {

namespace {

constexpr char kMagic[4] = {'J', 'Z', 'P', 'T'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  std::vector<unsigned char> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : bytes(b) {}
  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw ValidationError("point file is truncated");
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[pos + i]) << (8 * i);
    pos += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;
};

}  // namespace

double PointFile::volume() const {
  double v = 1;
  for (double b : box) v *= b;
  return v;
}

std::vector<unsigned char> encode_point_file(const PointFile& file) {
  const PointSet& ps = file.points;
  ps.validate();
  if (!file.box.empty() && static_cast<int>(file.box.size()) != ps.dims)
    throw ValidationError("box has the wrong number of lengths");
  Writer w;
  w.raw(kMagic, 4);
  w.uint<std::uint32_t>(PointFile::kVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ps.dims));
  w.uint<std::uint64_t>(static_cast<std::uint64_t>(ps.size()));
  std::uint32_t flags = 0;
  if (ps.has_masses()) flags |= PointFile::kHasMass;
  if (ps.has_velocities()) flags |= PointFile::kHasVelocity;
  if (file.periodic()) flags |= PointFile::kPeriodic;
  w.uint(flags);
  for (double b : file.box) w.f64(b);
  for (double x : ps.positions) w.f64(x);
  for (double m : ps.masses) w.f64(m);
  for (double v : ps.velocities) w.f64(v);
  return std::move(w.out);
}

PointFile decode_point_file(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ValidationError("not a point file (bad magic)");
  r.pos = 4;
  const auto version = r.uint<std::uint32_t>();
  if (version != PointFile::kVersion)
    throw ValidationError("unsupported point file version " + std::to_string(version));
  const auto dims = r.uint<std::uint32_t>();
  const auto count = r.uint<std::uint64_t>();
  const auto flags = r.uint<std::uint32_t>();
  if (dims == 0 || dims > 64) throw ValidationError("point file has invalid dimension");
  if ((flags & ~7u) != 0) throw ValidationError("point file has unknown flags");
  if (count > (std::uint64_t{1} << 40)) throw ValidationError("point file count is implausible");
  std::uint64_t doubles = count * dims;
  if (flags & PointFile::kHasMass) doubles += count;
  if (flags & PointFile::kHasVelocity) doubles += count * dims;
  if (flags & PointFile::kPeriodic) doubles += dims;
  if ((bytes.size() - r.pos) != doubles * 8)
    throw ValidationError("point file payload does not match its header");
  PointFile f;
  f.points.dims = static_cast<int>(dims);
  if (flags & PointFile::kPeriodic) {
    f.box.resize(dims);
    for (auto& b : f.box) b = r.f64();
    for (double b : f.box)
      if (!(b > 0) || !std::isfinite(b)) throw ValidationError("point file box must be positive");
  }
  f.points.positions.resize(count * dims);
  for (auto& x : f.points.positions) x = r.f64();
  if (flags & PointFile::kHasMass) {
    f.points.masses.resize(count);
    for (auto& m : f.points.masses) m = r.f64();
  }
  if (flags & PointFile::kHasVelocity) {
    f.points.velocities.resize(count * dims);
    for (auto& v : f.points.velocities) v = r.f64();
  }
  f.points.validate();
  return f;
}

PointFile read_point_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_point_file(bytes);
}

void write_point_file(const std::string& path, const PointFile& file) {
  const auto bytes = encode_point_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path);
}

Distribution parse_distribution(const std::string& name) {
  if (name == "grid") return Distribution::kGrid;
  if (name == "uniform") return Distribution::kUniform;
  if (name == "gaussian") return Distribution::kGaussian;
  throw UsageError("unknown distribution '" + name + "' (grid, uniform, gaussian)");
}

PointSet generate_points(Distribution dist, Index n, int dims, std::uint64_t seed, double box) {
  if (n < 1) throw UsageError("n must be >= 1");
  if (dims < 1) throw UsageError("dims must be >= 1");
  if (!(box >= 0) || !std::isfinite(box)) throw UsageError("box must be finite and >= 0");
  const auto d = static_cast<std::size_t>(dims);
  PointSet ps;
  ps.dims = dims;
  ps.positions.resize(static_cast<std::size_t>(n) * d);
  std::mt19937_64 rng(seed);
  switch (dist) {
    case Distribution::kGrid: {
      if (!(box > 0)) throw UsageError("grid needs box > 0");
      const auto side = static_cast<Index>(std::llround(std::pow(static_cast<double>(n), 1.0 / dims)));
      Index total = 1;
      for (int i = 0; i < dims; ++i) total *= side;
      if (total != n)
        throw UsageError("grid needs n = side^dims (n = " + std::to_string(n) + ")");
      const double h = box / static_cast<double>(side);
      for (Index i = 0; i < n; ++i) {
        Index rest = i;
        for (int j = dims - 1; j >= 0; --j) {
          ps.positions[i * d + j] = static_cast<double>(rest % side) * h;
          rest /= side;
        }
      }
      break;
    }
    case Distribution::kUniform: {
      const double len = box > 0 ? box : 1.0;
      std::uniform_real_distribution<double> u(0.0, len);
      for (auto& x : ps.positions) {
        x = u(rng);
        if (x >= len) x = 0;
      }
      break;
    }
    case Distribution::kGaussian: {
      std::normal_distribution<double> g(0.0, 1.0);
      for (auto& x : ps.positions) {
        x = g(rng);
        if (box > 0) {
          x = 0.5 * box + x * (box / 8);
          x -= box * std::floor(x / box);
          if (x >= box) x = 0;
        }
      }
      break;
    }
  }
  return ps;
}

}  // namespace ztree
