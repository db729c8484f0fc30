#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace flood {

// args excludes the program name. Returns 0 on success, 2 for usage and
// configuration errors, 1 for runtime failures (diagnostics go to err).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flood
