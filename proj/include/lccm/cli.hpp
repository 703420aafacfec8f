#pragma once

// Command-line front end: estimate, predict, cv, simulate, profile, gradcheck.

#include <iosfwd>

namespace lccm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitEstimation = 3;
inline constexpr int kExitIo = 4;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lccm
