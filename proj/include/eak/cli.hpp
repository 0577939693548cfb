#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace eak::cli {

/// Subcommands: gen, caption, train, eval, gradcheck, report.
/// Exit status: 0 success, 1 usage or validation error, 2 runtime error.
int run(int argc, char** argv);

/// Same, with the program name left out of `args` and explicit streams.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace eak::cli
