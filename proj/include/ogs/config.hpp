#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ogs {

// Flat "key = value" configuration with dotted section keys, '#' comments.
// Keys are kept sorted so a serialized config is deterministic.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    std::string serialize() const;

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) {
        values_[key] = value;
    }
    void set(const std::string& key, double value);
    void set(const std::string& key, int64_t value);

    std::string get_string(const std::string& key, const std::string& def) const;
    double get_double(const std::string& key, double def) const;
    int64_t get_int(const std::string& key, int64_t def) const;
    bool get_bool(const std::string& key, bool def) const;

    // Merge other on top of this (other wins).
    void overlay(const Config& other);

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace ogs
