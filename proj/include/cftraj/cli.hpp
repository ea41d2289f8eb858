#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cftraj::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes: 0 success, 1 validation error (bad flags, config, inputs), 2 runtime failure.
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cftraj::cli
