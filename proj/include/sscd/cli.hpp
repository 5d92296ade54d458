#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sscd {

/// Exit codes returned by run_cli.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,  // a check failed, or an unexpected error
    kExitUsage = 2,
    kExitConfig = 3,  // invalid configuration or input values
    kExitIo = 4,
    kExitNumerical = 5,
};

/// Runs one CLI invocation. args[0] is the program name. Metrics and
/// results go to `out` as JSON lines; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sscd
