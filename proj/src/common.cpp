#include "ztree/common.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>

#include "ztree/parallel.hpp"

namespace ztree {

void PointSet::validate() const {
  if (dims < 1) throw ValidationError("point set must have at least one dimension");
  if (positions.size() % static_cast<std::size_t>(dims) != 0)
    throw ValidationError("position array length is not a multiple of dims");
  const auto n = static_cast<std::size_t>(size());
  if (!masses.empty() && masses.size() != n)
    throw ValidationError("mass array length does not match point count");
  if (!velocities.empty() && velocities.size() != n * dims)
    throw ValidationError("velocity array length does not match point count");
  for (double v : positions)
    if (!std::isfinite(v)) throw ValidationError("non-finite coordinate in point set");
  for (double m : masses)
    if (!std::isfinite(m)) throw ValidationError("non-finite mass in point set");
  for (double v : velocities)
    if (!std::isfinite(v)) throw ValidationError("non-finite velocity in point set");
}

PointSet gather(const PointSet& src, std::span<const Index> order) {
  PointSet out;
  out.dims = src.dims;
  const auto d = static_cast<std::size_t>(src.dims);
  out.positions.resize(order.size() * d);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.positions[i * d + j] = src.positions[order[i] * d + j];
  if (src.has_masses()) {
    out.masses.resize(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) out.masses[i] = src.masses[order[i]];
  }
  if (src.has_velocities()) {
    out.velocities.resize(order.size() * d);
    for (std::size_t i = 0; i < order.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        out.velocities[i * d + j] = src.velocities[order[i] * d + j];
  }
  return out;
}

namespace {
std::atomic<int> g_worker_override{0};
}

int worker_count() {
  if (int o = g_worker_override.load(); o > 0) return o;
  static const int from_env = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* s = std::getenv("ZTREE_THREADS")) {
      const int v = std::atoi(s);
      if (v >= 1) return std::min(v, hw);
    }
    return hw;
  }();
  return from_env;
}

void set_worker_count(int n) { g_worker_override.store(n > 0 ? n : 0); }

}  // namespace ztree
