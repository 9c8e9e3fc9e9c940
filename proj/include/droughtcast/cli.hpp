#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace droughtcast {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;

/// `key=value` lines; blank lines and `#` comments are skipped. Throws ArgumentError.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text);

/// Runs one command line (without the program name) and returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace droughtcast
