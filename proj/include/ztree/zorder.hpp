#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "ztree/common.hpp"

namespace ztree {

template <class T>
struct FloatTraits;

template <>
struct FloatTraits<float> {
  using Bits = std::uint32_t;
  static constexpr int kMantissaBits = 23;
  static constexpr int kExponentBias = 127;
  static constexpr Level kEmax = 128;
};

template <>
struct FloatTraits<double> {
  using Bits = std::uint64_t;
  static constexpr int kMantissaBits = 52;
  static constexpr int kExponentBias = 1023;
  static constexpr Level kEmax = 1024;
};

/// One larger than the largest binary exponent of T.
template <class T>
inline constexpr Level kEmax = FloatTraits<T>::kEmax;

/// x = sign * 2^exponent * mantissa / 2^kMantissaBits, with the leading mantissa
/// bit set for every nonzero x (subnormals are renormalized). Zero has sign +1,
/// exponent kLevelMin and mantissa 0.
template <class T>
struct FloatDecomposition {
  int sign = 1;
  Level exponent = kLevelMin;
  typename FloatTraits<T>::Bits mantissa = 0;
};

template <class T>
constexpr FloatDecomposition<T> decompose(T x) {
  using Tr = FloatTraits<T>;
  using Bits = typename Tr::Bits;
  const Bits bits = std::bit_cast<Bits>(x);
  constexpr int kWidth = sizeof(Bits) * 8;
  constexpr Bits kFracMask = (Bits{1} << Tr::kMantissaBits) - 1;
  FloatDecomposition<T> out;
  const Bits frac = bits & kFracMask;
  const int biased = static_cast<int>((bits << 1) >> (Tr::kMantissaBits + 1));
  if (biased == 0 && frac == 0) return out;  // +0 and -0
  out.sign = (bits >> (kWidth - 1)) ? -1 : 1;
  if (biased == 0) {
    // subnormal: shift the highest set bit up to the implicit-one position
    const int shift = Tr::kMantissaBits + 1 - std::bit_width(frac);
    out.mantissa = frac << shift;
    out.exponent = 1 - Tr::kExponentBias - shift;
  } else {
    out.mantissa = frac | (Bits{1} << Tr::kMantissaBits);
    out.exponent = biased - Tr::kExponentBias;
  }
  return out;
}

/// Bit position (as a power of two) of the most significant differing bit of two
/// unsigned fixed-point numbers with `point_position` fractional bits.
constexpr Level msb_fixed(std::uint64_t a, std::uint64_t b, int point_position) {
  const std::uint64_t x = a ^ b;
  if (x == 0) return kLevelMin;
  return static_cast<Level>(std::bit_width(x)) - 1 - point_position;
}

/// Most significant bit at which a and b would differ as fixed-point numbers.
/// Sign mismatch yields kEmax; identical values yield kLevelMin.
template <class T>
constexpr Level msb(T a, T b) {
  const auto da = decompose(a);
  const auto db = decompose(b);
  if (da.sign != db.sign) return kEmax<T>;
  if (da.exponent != db.exponent) return da.exponent > db.exponent ? da.exponent : db.exponent;
  if (da.mantissa == db.mantissa) return kLevelMin;
  return da.exponent + msb_fixed(da.mantissa, db.mantissa, FloatTraits<T>::kMantissaBits);
}

/// Deciding dimension (first argmax of per-dimension msb) and its msb value.
struct ZDiff {
  int dim = 0;
  Level msb = kLevelMin;
};

inline ZDiff z_diff(std::span<const double> p, std::span<const double> q) {
  ZDiff best;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Level m = msb(p[i], q[i]);
    if (m > best.msb) best = {static_cast<int>(i), m};
  }
  return best;
}

/// Strict z-order comparison of two vectors of equal dimension.
inline bool z_less(std::span<const double> p, std::span<const double> q) {
  const ZDiff diff = z_diff(p, q);
  if (diff.msb == kLevelMin) return false;
  return p[diff.dim] < q[diff.dim];
}

/// Stable z-order sort; returns the permutation (sorted position -> input row).
/// Throws ValidationError on non-finite coordinates.
std::vector<Index> z_sort(const PointSet& points);

/// Stable z-order sort of a flat row-major position array.
std::vector<Index> z_sort(std::span<const double> positions, int dims);

/// Draws `n_samp` points with a seeded generator, z-sorts them and returns
/// n_ranks - 1 evenly spaced splitters (each a d-vector).
std::vector<std::vector<double>> sample_splitters(const PointSet& points, int n_ranks, Index n_samp,
                                                  std::uint64_t seed);

/// Splitters from an already z-sorted sample.
std::vector<std::vector<double>> splitters_from_sorted_sample(std::span<const double> sorted_sample,
                                                              int dims, int n_ranks);

/// Destination rank of p: the number of splitters s with s <=_z p.
int rank_of(std::span<const double> p, const std::vector<std::vector<double>>& splitters);

}  // namespace ztree
