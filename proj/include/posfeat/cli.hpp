#pragma once

#include <string>
#include <vector>

namespace posfeat {

/// posfeat <synth|train-desc|train-det|extract|match|eval> [options].
/// Returns the process exit code; failures print one "error: ..." line to stderr.
int run_cli(int argc, const char* const* argv);
/// Arguments without the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace posfeat
