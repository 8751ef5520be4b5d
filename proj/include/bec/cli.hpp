#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bec {

// Exit codes of the command-line front end.
inline constexpr int exit_ok = 0;
inline constexpr int exit_negative = 1;
inline constexpr int exit_input = 2;
inline constexpr int exit_numeric = 3;

/// Runs one CLI invocation; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Applies BEC_LOG (quiet, info, debug) to the default logger, which writes to stderr.
void configure_logging();

}  // namespace bec
