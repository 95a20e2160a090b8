#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bigen::cli {

// Runs the `bigen` command line and returns the process exit code:
// 0 ok, 1 usage, 2 data, 3 numerical. Failures print one line to `err`:
//   bigen: error kind=<usage|data|numerical> code=<n> message="<text>"
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Reads flat "key = value" lines; '#' starts a comment. Keys are long option
// names without the leading dashes.
std::vector<std::pair<std::string, std::string>> read_flat_config(const std::string& path);

}  // namespace bigen::cli
