#pragma once

// Flat "key = value" settings with '#' comments. Later layers override
// earlier ones: preset defaults, then a config file, then command-line flags.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "ftnode/error.hpp"

namespace ftnode {

class Settings {
 public:
  Settings() = default;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set_default(const std::string& key, const std::string& value) { kv_.try_emplace(key, value); }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  /// Overwrites entries with those of `other`.
  void merge(const Settings& other) {
    for (const auto& [k, v] : other.kv_) kv_[k] = v;
  }

  const std::string& str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw InvalidInput("missing setting '" + key + "'");
    return it->second;
  }

  std::optional<std::string> maybe(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& s = str(key);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw InvalidInput("setting '" + key + "' is not a number: '" + s + "'");
    return v;
  }

  std::uint64_t count(const std::string& key) const {
    const std::string& s = str(key);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw InvalidInput("setting '" + key + "' is not a nonnegative integer: '" + s + "'");
    return std::stoull(s);
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off" || s.empty()) return false;
    throw InvalidInput("setting '" + key + "' is not a boolean: '" + s + "'");
  }

  const std::map<std::string, std::string>& entries() const noexcept { return kv_; }

  void write(std::ostream& os) const {
    for (const auto& [k, v] : kv_) os << k << " = " << v << '\n';
  }

  static Settings parse(std::istream& is) {
    Settings s;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw InvalidInput("config line " + std::to_string(lineno) + " has no '='");
      s.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return s;
  }

  static Settings load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InvalidInput("cannot open config '" + path + "'");
    return parse(is);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace ftnode
