#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace replan {

// One documented configuration key. Every key a run can set is declared in
// `config_schema()`; anything else is rejected with a ConfigError.
struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string doc;
};

const std::vector<ConfigKey>& config_schema();

// Flat key-value configuration with dotted section keys ("rem.k_threshold").
//
// Text format is a TOML subset: `key = value` lines, `[section]` headers that
// prefix following keys, `#` comments, optional double quotes around strings.
// Lookups fall back to the schema default when a key was never set.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text, std::string_view origin = "<string>");
  static Config from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  // Applies every explicitly set key of `other` on top of this config.
  void merge(const Config& other);
  bool is_set(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Effective value of every schema key, sorted by key.
  std::map<std::string, std::string> resolved() const;
  // `resolved()` rendered back into the text format, grouped by section.
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& explicit_values() const { return values_; }

 private:
  std::string raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
};

}  // namespace replan
