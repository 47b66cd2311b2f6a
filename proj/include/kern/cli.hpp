#pragma once

// Command-line surface. `run` is the whole CLI behind a testable function:
// the binary's main() forwards argv. Exit codes: 0 ok, 2 config/usage,
// 3 io, 4 format, 5 checkpoint version, 6 verification, 7 data, 1 other.

#include <ostream>
#include <string>
#include <vector>

namespace kern::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitFormat = 4;
inline constexpr int kExitVersion = 5;
inline constexpr int kExitVerify = 6;
inline constexpr int kExitData = 7;

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace kern::cli
