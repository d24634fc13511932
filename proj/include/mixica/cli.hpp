#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mixica::cli {

enum ExitCode : int {
    ok = 0,
    usage_error = 1,
    data_error = 2,
    numerical_error = 3,
};

/// Entry point of the `mixica` tool. Subcommands: decompose, metrics, synth,
/// sweep, report. Diagnostics go to `err` as one line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

} // namespace mixica::cli
