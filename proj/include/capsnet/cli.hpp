#pragma once

#include <ostream>

namespace capsnet {

/// Entry point of the `capsnet` tool: train, eval, trace, synth, gradcheck.
/// Returns the process exit code; errors go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capsnet
