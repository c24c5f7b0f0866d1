#pragma once

#include <string>
#include <vector>

namespace rlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

} // namespace rlab::cli
