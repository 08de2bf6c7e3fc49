#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qaplaus {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad arguments, invalid data, I/O failure
inline constexpr int kExitRuntime = 2;  // training divergence and other runtime faults

/// Runs one `qaplaus` subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qaplaus
