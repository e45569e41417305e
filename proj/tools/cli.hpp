#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rawdeblur::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Parses and runs one subcommand. Human-readable progress goes to `out`,
/// diagnostics to `err`. Returns kExitOk, kExitFailure or kExitUsage.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rawdeblur::cli
