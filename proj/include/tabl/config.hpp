#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tabl {

/// Flat TOML-style key/value file: `key = value`, `# comments`, and
/// `[section]` headers that prefix following keys with "section.". Values
/// may be bare, double-quoted, or bracketed lists.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string origin = "<config>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::optional<std::string> get(const std::string& key) const;
  /// Throws ConfigError naming the key when absent.
  std::string require(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<std::uint64_t> get_uint_list(const std::string& key,
                                           std::vector<std::uint64_t> fallback) const;

  /// ConfigError for any key not in `allowed` (entries ending in '*' match a prefix).
  void reject_unknown(const std::set<std::string>& allowed) const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  /// Canonical text form, sorted by key; parse(dump()) round-trips.
  std::string dump() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

/// Parses "a:b" or "a-b" ranges and comma lists of unsigned integers.
std::vector<std::uint64_t> parse_uint_list(std::string_view text);

}  // namespace tabl
