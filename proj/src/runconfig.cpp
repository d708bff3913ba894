#include "wid/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "wid/common.hpp"

namespace wid {

namespace {

std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return from_string(buf.str(), path);
}

RunConfig RunConfig::from_string(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    cfg.origin_ = origin;
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = strip(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (cfg.raw_.count(key))
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
        cfg.raw_[key] = value;
        cfg.consumed_[key] = false;
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    raw_[key] = value;
    consumed_[key] = false;
}

std::string RunConfig::lookup(const std::string& key, const std::string& def, bool required) {
    auto it = raw_.find(key);
    if (it == raw_.end()) {
        if (required) throw ConfigError("missing required config key " + key);
        resolved_[key] = def;
        return def;
    }
    consumed_[key] = true;
    resolved_[key] = it->second;
    return it->second;
}

std::string RunConfig::gets(const std::string& key, const std::string& def) {
    return lookup(key, def, false);
}

int RunConfig::geti(const std::string& key, int def) {
    const std::string v = lookup(key, std::to_string(def), false);
    try {
        size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse int from '" + v + "'");
    }
}

int64_t RunConfig::geti64(const std::string& key, int64_t def) {
    const std::string v = lookup(key, std::to_string(def), false);
    try {
        size_t used = 0;
        const int64_t out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse integer from '" + v + "'");
    }
}

uint64_t RunConfig::getu64(const std::string& key, uint64_t def) {
    const std::string v = lookup(key, std::to_string(def), false);
    try {
        size_t used = 0;
        const uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse integer from '" + v + "'");
    }
}

float RunConfig::getf(const std::string& key, float def) {
    std::ostringstream d;
    d << def;
    const std::string v = lookup(key, d.str(), false);
    try {
        size_t used = 0;
        const float out = std::stof(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse float from '" + v + "'");
    }
}

bool RunConfig::getb(const std::string& key, bool def) {
    const std::string v = lookup(key, def ? "true" : "false", false);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + ": cannot parse bool from '" + v + "'");
}

std::string RunConfig::req_s(const std::string& key) { return lookup(key, "", true); }

int RunConfig::req_i(const std::string& key) {
    const std::string v = lookup(key, "", true);
    try {
        size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse int from '" + v + "'");
    }
}

void RunConfig::assert_consumed() const {
    for (const auto& [key, used] : consumed_)
        if (!used) throw ConfigError(origin_ + ": unknown config key " + key);
}

std::string RunConfig::resolved_text() const {
    std::string out;
    for (const auto& [key, value] : resolved_) out += key + " = " + value + "\n";
    return out;
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write resolved config to " + path);
    f << resolved_text();
    if (!f) throw IoError("write failed for " + path);
}

}  // namespace wid
