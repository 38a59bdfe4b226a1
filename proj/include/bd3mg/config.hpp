#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bd3mg/blur.hpp"
#include "bd3mg/volume.hpp"

namespace bd3mg {

/// Bad experiment configuration. key() names the offending key when there is one.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : "config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Flat key=value experiment file: one pair per line, '#' starts a comment.
/// Keys are checked against a fixed vocabulary; values are parsed on access.
class Config {
 public:
  static Config parse(std::istream& is, const std::string& source = "<config>");
  static Config load(const std::string& path);

  /// Applies "key=value" on top of the parsed file.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void require(std::initializer_list<const char*> keys) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// "NXxNYxNZ", e.g. 32x32x8.
  Dims3 get_dims(const std::string& key) const;
  KernelDims get_kernel_dims(const std::string& key, KernelDims fallback) const;
  /// "lo,hi".
  Interval get_interval(const std::string& key, Interval fallback) const;
  /// Comma-separated integers.
  std::vector<std::int64_t> get_int_list(const std::string& key) const;

  static bool is_known_key(const std::string& key);

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace bd3mg
