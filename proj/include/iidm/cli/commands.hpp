#pragma once

#include <iosfwd>

namespace iidm {

/// Exit codes: 0 success, 1 validation error (bad flags, config, inputs,
/// formats, shapes), 2 numeric failure (divergence, non-finite values, a
/// failed gradient check).
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumeric = 2 };

/// Entry point of the `iidm` tool. Results go to `out`, diagnostics and
/// warnings to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace iidm
