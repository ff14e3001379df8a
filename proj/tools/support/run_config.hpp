#ifndef JOINTDIFF_TOOLS_RUN_CONFIG_HPP
#define JOINTDIFF_TOOLS_RUN_CONFIG_HPP

#include <set>
#include <string>

#include "json.hpp"

namespace jointdiff::tools {

// Load a JSON config file, rejecting keys outside the allowed set for the
// subcommand.
nlohmann::json load_config_file(const std::string& path, const std::set<std::string>& allowed);

// Write the fully-resolved config next to a command's outputs.
void echo_config(const nlohmann::json& resolved, const std::string& path);

void ensure_directory(const std::string& dir);

}  // namespace jointdiff::tools

#endif
