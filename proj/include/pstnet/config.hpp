#pragma once

// Plain-text "key = value" configuration files. '#' starts a comment; blank
// lines are ignored; keys are unique.

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "pstnet/error.hpp"
#include "pstnet/util.hpp"

namespace pstnet {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text, const std::string& origin = "<config>") {
        KeyValueConfig c;
        c.origin_ = origin;
        std::istringstream in{std::string(text)};
        std::string line;
        for (std::size_t no = 1; std::getline(in, line); ++no) {
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const auto key_end = line.find('=');
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (key_end == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value");
            const std::string key = trim(line.substr(0, key_end));
            const std::string value = trim(line.substr(key_end + 1));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(no) + ": empty key");
            if (!c.values_.emplace(key, value).second)
                throw ConfigError(origin + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
        }
        return c;
    }

    static KeyValueConfig load(const std::filesystem::path& path) {
        std::string text;
        try {
            text = read_file_text(path);
        } catch (const std::exception& e) {
            throw ConfigError("cannot read config " + path.string());
        }
        return parse(text, path.string());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, std::optional<std::string> fallback = std::nullopt) const {
        const auto it = values_.find(key);
        if (it != values_.end()) return it->second;
        if (fallback) return *fallback;
        throw ConfigError(origin_ + ": missing key '" + key + "'");
    }

    double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            throw ConfigError(origin_ + ": missing key '" + key + "'");
        }
        const std::string v = values_.at(key);
        double out = 0.0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError(origin_ + ": key '" + key + "' is not a number: " + v);
        return out;
    }

    std::uint64_t get_uint(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            throw ConfigError(origin_ + ": missing key '" + key + "'");
        }
        const std::string v = values_.at(key);
        std::uint64_t out = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size())
            throw ConfigError(origin_ + ": key '" + key + "' is not a non-negative integer: " + v);
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }
    const std::string& origin() const { return origin_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    std::string origin_;
};

}  // namespace pstnet
