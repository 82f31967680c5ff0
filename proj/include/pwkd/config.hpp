#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pwkd/tensor.hpp"

namespace pwkd {

// Line-based `key = value` configuration with dotted keys. '#' starts a
// comment. Duplicate keys in one file are an error, not a silent override;
// command-line values override file values.
class Config {
 public:
  static Config from_file(const std::string& path);

  void override_value(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  int require_int(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_widths(const std::string& key,
                                 const std::vector<double>& fallback) const;

  // every present key must be known; throws naming the first offender
  void check_known(const std::set<std::string>& known) const;
  void require(const std::vector<std::string>& keys) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> overridden_;
};

}  // namespace pwkd
