#pragma once

#include <string>
#include <vector>

namespace moseslab {

// Full command-line front end; args exclude the program name. Returns the
// process exit code: 0 success, 1 argument or validation error, 2 runtime
// failure. Every subcommand prints a config echo holding all effective
// values, defaults included, so a run can be reproduced from its output.
int run_command(const std::vector<std::string>& args);

}  // namespace moseslab
