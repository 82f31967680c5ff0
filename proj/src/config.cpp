#include "pwkd/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace pwkd {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value', got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    if (!cfg.values_.emplace(key, value).second)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return cfg;
}

void Config::override_value(const std::string& key, const std::string& value) {
  if (!overridden_.insert(key).second)
    throw ConfigError("duplicate command-line key '" + key + "'");
  values_[key] = value;
}

std::string Config::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse integer from '" + it->second + "'");
  }
}

int Config::require_int(const std::string& key) const {
  (void)get_str(key);
  return get_int(key, 0);
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse number from '" + it->second + "'");
  }
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse unsigned integer from '" + it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': cannot parse boolean from '" + it->second + "'");
}

std::vector<double> Config::get_widths(const std::string& key,
                                       const std::vector<double>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': cannot parse width from '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("key '" + key + "': empty width list");
  return out;
}

void Config::check_known(const std::set<std::string>& known) const {
  for (const auto& [key, value] : values_)
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "'");
}

void Config::require(const std::vector<std::string>& keys) const {
  for (const auto& k : keys)
    if (!values_.count(k)) throw ConfigError("missing required key '" + k + "'");
}

}  // namespace pwkd
