#pragma once

// Flat "key = value" config files: one pair per line, '#' comments.

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include "socialalign/dataset.hpp"
#include "socialalign/errors.hpp"

namespace socialalign {

class FlatConfig {
 public:
  FlatConfig() = default;

  static FlatConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    FlatConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      const std::string trimmed = normalize_text(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ParseError("config line without '=': '" + trimmed + "'", line_no);
      const std::string key = normalize_text(trimmed.substr(0, eq));
      const std::string value = normalize_text(trimmed.substr(eq + 1));
      if (key.empty()) throw ParseError("config line with empty key", line_no);
      cfg.values_[key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not an integer: '" + it->second + "'");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not a number: '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + it->second + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace socialalign
