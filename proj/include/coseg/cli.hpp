#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace coseg {

/// Entry point of the `coseg` tool. `args` excludes the program name.
/// Returns 0 on success, 1 on a domain error, 2 on a usage error. Errors are
/// written to `err` as one line, `error: <Code>: <detail>`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace coseg
