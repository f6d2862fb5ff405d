#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lcm {

/// Runs the `lcm` command line. `args` excludes the program name.
/// Exit codes: 0 success, 1 validation or numeric failure, 2 I/O or format failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lcm
