#pragma once

namespace pwkd {

// Entry point for the command-line tool. Returns the process exit code:
// 0 success, 1 runtime failure, 2 configuration error.
int run_cli(int argc, const char* const* argv);

}  // namespace pwkd
