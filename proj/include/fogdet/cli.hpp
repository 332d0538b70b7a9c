#pragma once

#include <string>
#include <vector>

namespace fogdet {

// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args); // without the program name

} // namespace fogdet
