#pragma once

#include <ostream>

namespace dpg::experiment {

// Exit codes: 0 success, 1 bad config or usage, 2 run or check failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace dpg::experiment
