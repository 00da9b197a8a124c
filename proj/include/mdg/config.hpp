#pragma once

// Flat key=value text with dotted section prefixes (model., train., infer.,
// eval.). '#' starts a comment line.

#include <map>
#include <string>
#include <vector>

namespace mdg {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Keys under `prefix` (e.g. "model.") that are not in `known`.
  std::vector<std::string> unknown_keys(const std::string& prefix, const std::vector<std::string>& known) const;
  // Sorted "key=value\n" lines.
  std::string to_text() const;
  void merge(const KeyValueConfig& other);

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mdg
