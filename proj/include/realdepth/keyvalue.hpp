#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace realdepth {

// Flat `key = value` text format used for recipes, run configs and checkpoint
// sidecars. Lines starting with '#' are comments; keys are unique and written
// in sorted order. Lists are comma separated.
class KeyValues {
public:
    static KeyValues parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValues load(const std::filesystem::path& path);

    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

    bool contains(const std::string& key) const { return entries_.count(key) != 0; }
    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, double value);
    void set(const std::string& key, std::int64_t value);
    void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
    void set(const std::string& key, std::uint64_t value);
    void set(const std::string& key, bool value);
    void set(const std::string& key, const std::vector<double>& values);
    void set(const std::string& key, const std::vector<std::string>& values);

    std::optional<std::string> find(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
    std::vector<std::string> get_strings(const std::string& key,
                                         std::vector<std::string> fallback) const;

    // Keys under `prefix.` with the prefix stripped.
    KeyValues section(const std::string& prefix) const;
    void merge(const std::string& prefix, const KeyValues& other);

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

}  // namespace realdepth
