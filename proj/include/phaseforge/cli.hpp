#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace phaseforge::cli {

/// Runs one subcommand. Returns 0 on success, 1 on usage errors (reported on err with
/// the usage text) and 2 on runtime failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace phaseforge::cli
