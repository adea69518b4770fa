#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace messfn::cli {

// Runs one command line (arguments after the program name) and returns the
// process exit code: 0 success, 1 runtime failure, 2 usage or validation error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace messfn::cli
