#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ztree::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kData = 3;
inline constexpr int kProtocol = 4;

/// Runs the command line (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ztree::cli
