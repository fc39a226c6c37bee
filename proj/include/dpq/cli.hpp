#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace dpq {

/// Dispatches a command line to the library. Exit code 0 on success, 1 on
/// domain errors (one `error: <Kind>: <detail>` line on err), 2 on usage
/// errors. Randomized subcommands require --seed; metrics are printed as
/// key=value lines.
int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
            std::ostream& err = std::cerr);

}  // namespace dpq
