#include "deft/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace deft {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return from_lines(lines);
}

KvConfig KvConfig::from_lines(const std::vector<std::string>& lines) {
    KvConfig cfg;
    int lineno = 0;
    for (const std::string& raw : lines) {
        ++lineno;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) + " is not key=value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw std::runtime_error("config line " + std::to_string(lineno) + " has empty key");
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

bool KvConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KvConfig::lookup(const std::string& key, const std::string& fallback, bool required) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (required) throw std::runtime_error("missing required config key: " + key);
        resolved_[key] = fallback;
        return fallback;
    }
    resolved_[key] = it->second;
    return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    return lookup(key, fallback, false);
}

std::string KvConfig::require_string(const std::string& key) const { return lookup(key, "", true); }

long KvConfig::get_long(const std::string& key, long fallback) const {
    const std::string v = lookup(key, std::to_string(fallback), false);
    try {
        return std::stol(v);
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + " is not an integer: " + v);
    }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    std::ostringstream def;
    def << fallback;
    const std::string v = lookup(key, def.str(), false);
    try {
        return std::stod(v);
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + " is not a number: " + v);
    }
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const std::string v = lookup(key, std::to_string(fallback), false);
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + " is not an unsigned integer: " + v);
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    const std::string v = lookup(key, fallback ? "true" : "false", false);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config key " + key + " is not a boolean: " + v);
}

std::vector<std::string> KvConfig::get_list(const std::string& key, const std::string& fallback) const {
    const std::string v = lookup(key, fallback, false);
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(v);
    while (std::getline(ss, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

std::vector<double> KvConfig::get_double_list(const std::string& key, const std::string& fallback) const {
    std::vector<double> out;
    for (const std::string& s : get_list(key, fallback)) {
        try {
            out.push_back(std::stod(s));
        } catch (const std::exception&) {
            throw std::runtime_error("config key " + key + " has a non-numeric entry: " + s);
        }
    }
    return out;
}

void KvConfig::write_resolved(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write resolved config: " + path);
    for (const auto& [k, v] : resolved_) out << k << "=" << v << "\n";
    if (!out) throw std::runtime_error("resolved config write failed: " + path);
}

}  // namespace deft
