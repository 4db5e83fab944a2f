#include "fg2e/toml_lite.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fg2e {

namespace {

[[noreturn]] void fail(int line, const std::string& what) {
  throw FormatError("toml line " + std::to_string(line) + ": " + what);
}

bool bare_key_ok(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.')
      return false;
  return true;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Removes a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '"' && (i == 0 || s[i - 1] != '\\')) quoted = !quoted;
    if (c == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

struct Cursor {
  const std::string& text;
  size_t pos = 0;
  int line;

  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  }
  bool done() const { return pos >= text.size(); }
  char peek() const { return text[pos]; }
};

TomlValue parse_value(Cursor& cur);

TomlValue parse_string(Cursor& cur) {
  TomlValue v;
  v.kind = TomlValue::Kind::string;
  ++cur.pos;  // opening quote
  std::string out;
  while (!cur.done() && cur.peek() != '"') {
    char c = cur.text[cur.pos++];
    if (c == '\\') {
      if (cur.done()) fail(cur.line, "dangling escape in string");
      char e = cur.text[cur.pos++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(cur.line, std::string("unsupported escape \\") + e);
      }
    } else {
      out += c;
    }
  }
  if (cur.done()) fail(cur.line, "unterminated string");
  ++cur.pos;  // closing quote
  v.str = out;
  return v;
}

TomlValue parse_array(Cursor& cur) {
  TomlValue v;
  v.kind = TomlValue::Kind::array;
  ++cur.pos;  // '['
  cur.skip_ws();
  if (!cur.done() && cur.peek() == ']') {
    ++cur.pos;
    return v;
  }
  while (true) {
    cur.skip_ws();
    if (cur.done()) fail(cur.line, "unterminated array");
    if (cur.peek() == '[') fail(cur.line, "nested arrays not supported");
    v.items.push_back(parse_value(cur));
    cur.skip_ws();
    if (cur.done()) fail(cur.line, "unterminated array");
    char c = cur.text[cur.pos];
    if (c == ',') {
      ++cur.pos;
      continue;
    }
    if (c == ']') {
      ++cur.pos;
      return v;
    }
    fail(cur.line, "expected ',' or ']' in array");
  }
}

TomlValue parse_value(Cursor& cur) {
  cur.skip_ws();
  if (cur.done()) fail(cur.line, "missing value");
  char c = cur.peek();
  if (c == '"') return parse_string(cur);
  if (c == '[') return parse_array(cur);

  size_t start = cur.pos;
  while (!cur.done() && cur.peek() != ',' && cur.peek() != ']' && cur.peek() != ' ' &&
         cur.peek() != '\t')
    ++cur.pos;
  std::string tok = cur.text.substr(start, cur.pos - start);
  TomlValue v;
  if (tok == "true" || tok == "false") {
    v.kind = TomlValue::Kind::boolean;
    v.flag = tok == "true";
    return v;
  }
  char* end = nullptr;
  double num = std::strtod(tok.c_str(), &end);
  if (end == nullptr || *end != '\0' || tok.empty())
    fail(cur.line, "unrecognized value '" + tok + "'");
  v.kind = TomlValue::Kind::number;
  v.num = num;
  return v;
}

const char* kind_name(TomlValue::Kind k) {
  switch (k) {
    case TomlValue::Kind::string: return "string";
    case TomlValue::Kind::number: return "number";
    case TomlValue::Kind::boolean: return "boolean";
    case TomlValue::Kind::array: return "array";
  }
  return "?";
}

}  // namespace

const TomlValue& TomlTable::require(const std::string& key, TomlValue::Kind kind) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw FormatError("config: missing key '" + key + "'");
  if (it->second.kind != kind)
    throw FormatError("config: key '" + key + "' is a " + kind_name(it->second.kind) +
                      ", expected " + kind_name(kind));
  return it->second;
}

const std::string& TomlTable::get_string(const std::string& key) const {
  return require(key, TomlValue::Kind::string).str;
}

double TomlTable::get_number(const std::string& key) const {
  return require(key, TomlValue::Kind::number).num;
}

long long TomlTable::get_int(const std::string& key) const {
  double d = get_number(key);
  long long v = static_cast<long long>(d);
  if (double(v) != d) throw FormatError("config: key '" + key + "' is not an integer");
  return v;
}

bool TomlTable::get_bool(const std::string& key) const {
  return require(key, TomlValue::Kind::boolean).flag;
}

const std::vector<TomlValue>& TomlTable::get_array(const std::string& key) const {
  return require(key, TomlValue::Kind::array).items;
}

std::string TomlTable::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}

double TomlTable::get_number(const std::string& key, double fallback) const {
  return has(key) ? get_number(key) : fallback;
}

long long TomlTable::get_int(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool TomlTable::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::vector<std::string> TomlTable::keys_under(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const std::string& k : order_)
    if (k.size() > prefix.size() && k.compare(0, prefix.size(), prefix) == 0) out.push_back(k);
  return out;
}

void TomlTable::set(const std::string& key, TomlValue v) {
  if (values_.count(key) == 0) order_.push_back(key);
  values_[key] = std::move(v);
}

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::istringstream in(text);
  std::string raw;
  std::string prefix;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated table header");
      std::string name = trim(line.substr(1, line.size() - 2));
      if (!bare_key_ok(name)) fail(line_no, "bad table name '" + name + "'");
      prefix = name + ".";
      continue;
    }

    size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!bare_key_ok(key)) fail(line_no, "bad key '" + key + "'");

    std::string rest = trim(line.substr(eq + 1));
    Cursor cur{rest, 0, line_no};
    TomlValue value = parse_value(cur);
    cur.skip_ws();
    if (!cur.done()) fail(line_no, "trailing characters after value");
    std::string full = prefix + key;
    if (table.has(full)) fail(line_no, "duplicate key '" + full + "'");
    table.set(full, std::move(value));
  }
  return table;
}

TomlTable load_toml(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_toml(buf.str());
}

}  // namespace fg2e
