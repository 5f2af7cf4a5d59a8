#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dcbd::cli {

/// Parses `args` (without the program name) and runs the selected command.
/// Failures print one `error: category=<c> code=<c> message=<m>` line to
/// `err` and return the category's exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

/// Both branch receptive-field rows next to the published reference rows.
std::string rf_table();

}  // namespace dcbd::cli
