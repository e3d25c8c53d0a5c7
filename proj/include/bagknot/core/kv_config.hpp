#pragma once

// Flat `key = value` configuration files. Lines starting with '#' are
// comments; dotted keys (`encoder.lr`) group settings by module.

#include "bagknot/core/error.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace bagknot {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      }
      auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KeyValueConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("config file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = lookup(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <class T>
  T get(const std::string& key, T fallback) const {
    auto it = lookup(key);
    if (it == values_.end()) return fallback;
    return parse_scalar<T>(key, it->second);
  }

  template <class T>
  std::vector<T> get_list(const std::string& key, std::vector<T> fallback) const {
    auto it = lookup(key);
    if (it == values_.end()) return fallback;
    std::vector<T> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      if constexpr (std::is_same_v<T, std::string>) {
        out.push_back(item);
      } else {
        out.push_back(parse_scalar<T>(key, item));
      }
    }
    return out;
  }

  /// Throws ConfigError naming the first key no getter has asked for.
  void reject_unread() const {
    for (const auto& [k, v] : values_)
      if (read_.count(k) == 0) throw ConfigError("unknown config key '" + k + "'");
  }

  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string>::const_iterator lookup(const std::string& key) const {
    read_.insert(key);
    return values_.find(key);
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <class T>
  static T parse_scalar(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("config key '" + key + "': expected boolean, got '" + text + "'");
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t pos = 0;
        double v = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument(text);
        return static_cast<T>(v);
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + text + "'");
      }
    } else {
      T v{};
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + text + "'");
      }
      return v;
    }
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

}  // namespace bagknot
