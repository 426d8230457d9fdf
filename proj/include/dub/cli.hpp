#pragma once

#include <ostream>

namespace dub {

/// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntimeError = 1;
inline constexpr int kExitUsage = 2;

/// Runs `dubcount <command> [flags]`. Commands: synth, train, calibrate,
/// predict, eval, ablate, partition, config.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dub
