#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ztree/common.hpp"

namespace ztree {

/// Binary point file: "JZPT", u32 version, u32 dims, u64 count, u32 flags
/// (bit0 mass, bit1 velocity, bit2 periodic), optional box lengths, positions,
/// optional masses, optional velocities. All little-endian, f64 payload.
struct PointFile {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::uint32_t kHasMass = 1u << 0;
  static constexpr std::uint32_t kHasVelocity = 1u << 1;
  static constexpr std::uint32_t kPeriodic = 1u << 2;

  PointSet points;
  std::vector<double> box;  // empty unless periodic

  [[nodiscard]] bool periodic() const { return !box.empty(); }
  [[nodiscard]] double volume() const;
};

/// Throws ValidationError on malformed input, Error on I/O failure.
PointFile read_point_file(const std::string& path);
void write_point_file(const std::string& path, const PointFile& file);

std::vector<unsigned char> encode_point_file(const PointFile& file);
PointFile decode_point_file(const std::vector<unsigned char>& bytes);

enum class Distribution { kGrid, kUniform, kGaussian };

Distribution parse_distribution(const std::string& name);

/// Seed-deterministic dataset. Grid needs n = side^d and fills [0, box)^d with
/// spacing box/side; uniform fills [0, box)^d; gaussian draws N(0, 1) per
/// coordinate, or N(box/2, box/8) wrapped into [0, box) when box > 0.
PointSet generate_points(Distribution dist, Index n, int dims, std::uint64_t seed,
                         double box = 1.0);

}  // namespace ztree
