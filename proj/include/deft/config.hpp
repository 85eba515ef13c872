#ifndef DEFT_CONFIG_HPP
#define DEFT_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace deft {

// Flat key=value settings with '#' comments. Every key actually consulted is
// recorded together with the value used, so the resolved sidecar written next
// to each run's outputs is sufficient to re-execute it.
class KvConfig {
  public:
    KvConfig() = default;

    static KvConfig from_file(const std::string& path);
    static KvConfig from_lines(const std::vector<std::string>& lines);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    long get_long(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key, const std::string& fallback) const;
    std::vector<double> get_double_list(const std::string& key, const std::string& fallback) const;

    // sorted key=value lines of everything consulted so far
    void write_resolved(const std::string& path) const;
    const std::map<std::string, std::string>& resolved() const { return resolved_; }

  private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, std::string> resolved_;

    std::string lookup(const std::string& key, const std::string& fallback, bool required) const;
};

}  // namespace deft

#endif
