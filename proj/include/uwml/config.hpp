#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "uwml/date.hpp"

namespace uwml {

/// Bad command line, config key or input file; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat "key = value" settings with dotted section prefixes ("slicing.mode").
/// '#' starts a comment; blank lines are ignored; later keys win.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig read(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.contains(key); }

  // Typed getters mark the key as consumed; malformed values throw UsageError.
  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  Date get_date(const std::string& key, Date fallback) const;
  /// Comma-separated numbers.
  std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const;
  std::optional<std::filesystem::path> get_path(const std::string& key) const;

  /// Keys never read by a getter.
  std::vector<std::string> unused() const;
  /// Throws UsageError naming every unused key.
  void reject_unused() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace uwml
