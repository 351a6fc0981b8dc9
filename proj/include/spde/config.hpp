#pragma once

// Flat key-value configuration.
//
// Grammar (one entry per line):
//   line    := blank | comment | entry
//   comment := '#' anything
//   entry   := key ws* '=' ws* value
//   key     := [A-Za-z0-9_.]+         (dotted, e.g. mesh.n_div)
//   value   := anything up to end of line, surrounding whitespace trimmed;
//              lists are comma separated (time.tau_levels = 0.025, 0.0125);
//              numbers may be written as a ratio a/b (time.tau_fine = 1/1280)
// A repeated key overrides the earlier value. `--set key=value` on the
// command line is applied after the file, in order.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& origin = "<string>") {
    Config c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)), origin + ":" + std::to_string(lineno));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
  }

  /// Applies one `key=value` override.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "--set");
  }

  void set(const std::string& key, const std::string& value, const std::string& where = "") {
    if (key.empty()) throw ConfigError(where + ": empty key");
    for (char ch : key) {
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.')) {
        throw ConfigError(where + ": invalid key '" + key + "'");
      }
    }
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : to_double(key, it->second);
  }

  long long get_int(const std::string& key, long long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long long v = 0;
    const auto& s = it->second;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ConfigError("config key " + key + ": '" + s + "' is not an integer");
    }
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_u64(it->second, key);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key " + key + ": '" + s + "' is not a boolean");
  }

  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(to_double(key, item));
    }
    return out;
  }

  /// Canonical text of all entries except the listed keys, sorted by key.
  std::string canonical(const std::vector<std::string>& exclude = {}) const {
    std::string out;
    for (const auto& [k, v] : values_) {
      bool skip = false;
      for (const auto& e : exclude) skip = skip || e == k;
      if (!skip) out += k + "=" + v + "\n";
    }
    return out;
  }

  static std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw ConfigError(what + ": '" + s + "' is not an unsigned 64-bit integer");
    }
    return v;
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  static double to_double(const std::string& key, const std::string& s) {
    // A single ratio a/b is accepted, e.g. time.tau = 1/40.
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
      return to_double(key, trim(s.substr(0, slash))) / to_double(key, trim(s.substr(slash + 1)));
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
      throw ConfigError("config key " + key + ": '" + s + "' is not a number");
    }
    return v;
  }

  std::map<std::string, std::string> values_;
};

/// 64-bit FNV-1a, used to fingerprint configurations in output headers.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace spde
