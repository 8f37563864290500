#pragma once

#include <string>
#include <vector>

namespace sparsetx::cli {

/// Exit codes: 0 success, 1 stage failure, 2 configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitStage = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the `sparsetx` binary. Errors are reported on stderr as a
/// single JSON line.
int run(int argc, const char* const* argv);
/// Same, with args excluding the program name.
int run(const std::vector<std::string>& args);

}  // namespace sparsetx::cli
