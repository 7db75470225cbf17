#pragma once

namespace crashbench {

// Full command-line entry point, callable in-process for testing.
// Exit codes: 0 success, 1 empty result, 2 usage error, 3 output collision.
int cli_main(int argc, const char* const* argv);

}  // namespace crashbench
