#pragma once

namespace fusestyle {

// Entry point for the fusestyle command-line tool. Returns the process
// exit code instead of exiting: 0 success, 2 validation/usage error,
// 3 I/O error, 4 numerical abort.
int run_cli(int argc, const char* const* argv);

}  // namespace fusestyle
