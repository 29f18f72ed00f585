#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace matvl::cli {

/// Runs one subcommand. `args` excludes the program name. Exit codes: 0 ok,
/// 1 runtime failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace matvl::cli
