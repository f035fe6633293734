#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cfpp::cli {

enum ExitCode : int { ok = 0, validation_error = 1, runtime_error = 2 };

/// Parses and runs one subcommand. Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

/// Closest candidate by edit distance, or "" when nothing is close.
std::string suggest(const std::string& word, const std::vector<std::string>& candidates);

}  // namespace cfpp::cli
