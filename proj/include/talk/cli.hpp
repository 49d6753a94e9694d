#pragma once

namespace talk {

// Entry point behind the talk_cli binary; exposed so tests can drive the
// command surface in-process. Exit codes: 0 success, 1 runtime failure,
// 2 usage error.
int cli_main(int argc, const char* const* argv);

}  // namespace talk
