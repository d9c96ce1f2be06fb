#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fedbss::cli {

// Entry point of the `fedbss` tool. args excludes the program name.
// Returns 0 on success, 2 on usage errors and 1 on runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedbss::cli
