#pragma once

#include <map>
#include <string>
#include <vector>

#include "fg2e/common.hpp"

namespace fg2e {

// Minimal TOML subset for job configs: [table.subtable] headers, key = value
// pairs with string/number/boolean/flat-array values, and # comments.
// Multi-line strings, dates, inline tables, and arrays-of-tables are out of
// scope. Keys flatten to dotted paths ("render.image_size").
struct TomlValue {
  enum class Kind { string, number, boolean, array };
  Kind kind = Kind::string;
  std::string str;
  double num = 0.0;
  bool flag = false;
  std::vector<TomlValue> items;  // arrays only
};

class TomlTable {
 public:
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // Required lookups: throw FormatError naming the missing/mistyped key.
  const std::string& get_string(const std::string& key) const;
  double get_number(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::vector<TomlValue>& get_array(const std::string& key) const;

  // Defaulted lookups.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_number(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // All keys under "prefix." in file order (for enumerating round tables).
  std::vector<std::string> keys_under(const std::string& prefix) const;

  void set(const std::string& key, TomlValue v);

 private:
  const TomlValue& require(const std::string& key, TomlValue::Kind kind) const;
  std::map<std::string, TomlValue> values_;
  std::vector<std::string> order_;
};

TomlTable parse_toml(const std::string& text);
TomlTable load_toml(const std::string& path);

}  // namespace fg2e
