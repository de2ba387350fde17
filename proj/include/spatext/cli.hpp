#pragma once

#include <string>
#include <vector>

namespace spatext {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

// The `spatext` command line. Returns the process exit code: 0 on success,
// 1 for invalid input, 2 for runtime failures.
int run_cli(int argc, const char* const* argv);
// Arguments after the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace spatext
