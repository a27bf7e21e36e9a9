#pragma once

#include <ostream>

namespace pedmr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. Usage errors return 2 with help text on `err`;
/// runtime failures return 1 with a one-line diagnostic on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pedmr::cli
