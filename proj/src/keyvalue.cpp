#include "realdepth/keyvalue.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "realdepth/error.hpp"

namespace realdepth {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

// Shortest representation that parses back to the same double.
std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) {
        throw ParameterError("config key '" + key + "': '" + text + "' is not a number");
    }
    return v;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParameterError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw ParameterError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (kv.contains(key)) {
            throw ParameterError(origin + ":" + std::to_string(line_no) + ": duplicate key '" +
                                 key + "'");
        }
        kv.entries_[key] = trim(t.substr(eq + 1));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::string KeyValues::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
}

void KeyValues::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config file " + path.string());
    out << to_string();
    if (!out) throw IoError("write failed for " + path.string());
}

void KeyValues::set(const std::string& key, const std::string& value) { entries_[key] = value; }
void KeyValues::set(const std::string& key, double value) { entries_[key] = format_double(value); }
void KeyValues::set(const std::string& key, std::int64_t value) {
    entries_[key] = std::to_string(value);
}
void KeyValues::set(const std::string& key, std::uint64_t value) {
    entries_[key] = std::to_string(value);
}
void KeyValues::set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

void KeyValues::set(const std::string& key, const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ", ";
        s += format_double(values[i]);
    }
    entries_[key] = s;
}

void KeyValues::set(const std::string& key, const std::vector<std::string>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ", ";
        s += values[i];
    }
    entries_[key] = s;
}

std::optional<std::string> KeyValues::find(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
    return find(key).value_or(fallback);
}

double KeyValues::get_double(const std::string& key, double fallback) const {
    auto v = find(key);
    return v ? parse_double(key, *v) : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    std::int64_t out = 0;
    auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || end != v->data() + v->size()) {
        throw ParameterError("config key '" + key + "': '" + *v + "' is not an integer");
    }
    return out;
}

std::uint64_t KeyValues::get_uint(const std::string& key, std::uint64_t fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    auto [end, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || end != v->data() + v->size()) {
        throw ParameterError("config key '" + key + "': '" + *v + "' is not an unsigned integer");
    }
    return out;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ParameterError("config key '" + key + "': '" + *v + "' is not a boolean");
}

std::vector<double> KeyValues::get_doubles(const std::string& key,
                                           std::vector<double> fallback) const {
    auto v = find(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(*v)) out.push_back(parse_double(key, item));
    return out;
}

std::vector<std::string> KeyValues::get_strings(const std::string& key,
                                                std::vector<std::string> fallback) const {
    auto v = find(key);
    return v ? split_list(*v) : fallback;
}

KeyValues KeyValues::section(const std::string& prefix) const {
    KeyValues out;
    const std::string p = prefix + ".";
    for (const auto& [k, v] : entries_) {
        if (k.rfind(p, 0) == 0) out.entries_[k.substr(p.size())] = v;
    }
    return out;
}

void KeyValues::merge(const std::string& prefix, const KeyValues& other) {
    for (const auto& [k, v] : other.entries_) entries_[prefix.empty() ? k : prefix + "." + k] = v;
}

}  // namespace realdepth
