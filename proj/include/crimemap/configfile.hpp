#pragma once

// Flat dotted-key configuration files: one `section.key = value` per line,
// '#' comments, everything else is an error. Flags may override values after
// loading.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "crimemap/common.hpp"

namespace crimemap {

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in) {
    ConfigFile cfg;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static ConfigFile load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path.string());
    return parse(f);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing key '" + key + "'");
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
  double get_double(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
  }

  int64_t get_int(const std::string& key) const { return to_int(key, get_string(key)); }
  int64_t get_int(const std::string& key, int64_t dflt) const {
    return has(key) ? get_int(key) : dflt;
  }

  bool get_bool(const std::string& key, bool dflt) const {
    if (!has(key)) return dflt;
    std::string v = to_lower(get_string(key));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: '" + v + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical text form (sorted keys) used for the run-manifest config hash.
  std::string canonical() const {
    std::ostringstream out;
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
    return out.str();
  }
  std::string hash() const { return hex64(fnv1a64(canonical())); }

 private:
  static double to_double(const std::string& key, const std::string& v) {
    try {
      size_t pos;
      double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not a number: '" + v + "'");
    }
  }
  static int64_t to_int(const std::string& key, const std::string& v) {
    try {
      size_t pos;
      long long i = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return i;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not an integer: '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace crimemap
