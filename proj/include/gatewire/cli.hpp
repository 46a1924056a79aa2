#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gatewire {

// Exit codes: 0 success, 1 runtime or I/O error, 2 validation or config error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gatewire
