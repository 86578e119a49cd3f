#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ibro/error.hpp"

namespace ibro {

// Flat `key = value` text with dotted keys. Lines starting with '#' and blank
// lines are ignored. Every key must be consumed by a `get` before `finish`,
// so unknown keys surface as errors.
class KeyValues {
 public:
  static KeyValues parse(std::istream& is, const std::string& source = "<config>") {
    KeyValues kv;
    kv.source_ = source;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
      if (kv.values_.count(key)) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      }
      kv.values_[key] = value;
      kv.lines_[key] = line_no;
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    return parse(f, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // Overrides or adds a key, as from the command line.
  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
    lines_[key] = 0;
  }

  std::string get(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int get(const std::string& key, int fallback) {
    return static_cast<int>(get_integer(key, fallback));
  }

  std::uint64_t get(const std::string& key, std::uint64_t fallback) {
    const auto v = get_integer(key, static_cast<long long>(fallback));
    if (v < 0) throw error(key, "must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  double get(const std::string& key, double fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(it->second, &pos);
    } catch (const std::exception&) {
      throw error(key, "expected a number, got '" + it->second + "'");
    }
    if (pos != it->second.size()) throw error(key, "expected a number, got '" + it->second + "'");
    return v;
  }

  bool get(const std::string& key, bool fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "off" || s == "0" || s == "no") return false;
    throw error(key, "expected a boolean, got '" + s + "'");
  }

  // Throws on any key that no `get` asked for.
  void finish() const {
    std::vector<std::string> unknown;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) unknown.push_back(k);
    }
    if (unknown.empty()) return;
    std::string msg = source_ + ": unknown key";
    msg += unknown.size() > 1 ? "s" : "";
    for (std::size_t i = 0; i < unknown.size(); ++i) {
      msg += (i ? ", '" : " '") + unknown[i] + "'";
      if (lines_.at(unknown[i]) > 0) msg += " (line " + std::to_string(lines_.at(unknown[i])) + ")";
    }
    throw ConfigError(msg);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  ConfigError error(const std::string& key, const std::string& what) const {
    std::string where = source_;
    const auto it = lines_.find(key);
    if (it != lines_.end() && it->second > 0) where += ":" + std::to_string(it->second);
    return ConfigError(where + ": " + key + " " + what);
  }

  long long get_integer(const std::string& key, long long fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(it->second, &pos);
    } catch (const std::exception&) {
      throw error(key, "expected an integer, got '" + it->second + "'");
    }
    if (pos != it->second.size()) throw error(key, "expected an integer, got '" + it->second + "'");
    return v;
  }

  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::set<std::string> used_;
};

}  // namespace ibro
