#include "ztree/bounds.hpp"

#include <string>

namespace ztree {

void PeriodicDomain::validate(int dims) const {
  if (periods.empty()) return;
  if (static_cast<int>(periods.size()) != dims)
    throw UsageError("periodic domain has " + std::to_string(periods.size()) +
                     " periods for " + std::to_string(dims) + " dimensions");
  for (double p : periods)
    if (!(p >= 0) || !std::isfinite(p)) throw UsageError("periods must be finite and >= 0");
}

void PeriodicDomain::wrap(std::span<double> pos, int dims) const {
  if (!any()) return;
  const std::size_t n = pos.size() / dims;
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < dims; ++j) {
      const double p = period(j);
      if (p <= 0) continue;
      double& x = pos[i * dims + j];
      if (x >= 0 && x < p) continue;
      x -= p * std::floor(x / p);
      if (x >= p) x = 0;  // rounding on tiny negative inputs
    }
}

std::vector<double> displacement(std::span<const double> a, std::span<const double> b,
                                 const PeriodicDomain& domain) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = wrap_component(a[i] - b[i], domain.period(static_cast<int>(i)));
  return out;
}

}  // namespace ztree
