#include "support/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace jointdiff::tools {

nlohmann::json load_config_file(const std::string& path, const std::set<std::string>& allowed) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("config: parse error in " + path + ": " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config: top level must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw std::runtime_error("config: unknown key '" + key + "' in " + path);
    }
    return j;
}

void echo_config(const nlohmann::json& resolved, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write " + path);
    os << resolved.dump(2) << "\n";
}

void ensure_directory(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

}  // namespace jointdiff::tools
