#pragma once

// A small TOML reader and writer covering what scenario files use: tables,
// arrays of tables, dotted keys, basic and literal strings, integers, floats,
// booleans, arrays and inline tables. Dates and multi-line strings are not
// supported. Values land in a JSON tree.

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "distgap/error.hpp"
#include "json.hpp"

namespace distgap::toml {

using json = nlohmann::json;

class Parser {
 public:
  explicit Parser(std::string text) : s_(std::move(text)) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        const bool array = s_.compare(i_, 2, "[[") == 0;
        i_ += array ? 2 : 1;
        skip_inline_ws();
        const auto path = key_path();
        skip_inline_ws();
        expect(array ? "]]" : "]");
        table = array ? &append_table(root, path) : &open_table(root, path);
        end_of_line();
        continue;
      }
      const auto path = key_path();
      skip_inline_ws();
      expect("=");
      skip_inline_ws();
      json v = value();
      assign(*table, path, std::move(v));
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void error(const std::string& what) const {
    int line = 1;
    for (std::size_t k = 0; k < i_ && k < s_.size(); ++k)
      if (s_[k] == '\n') ++line;
    fail(Errc::SchemaError, "toml line " + std::to_string(line) + ": " + what);
  }

  bool eof() const { return i_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[i_]; }

  void expect(const std::string& tok) {
    if (s_.compare(i_, tok.size(), tok) != 0) error("expected '" + tok + "'");
    i_ += tok.size();
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++i_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++i_;
  }

  void skip_ws_comments_newlines() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++i_;
      } else if (c == '#') {
        skip_comment();
      } else {
        break;
      }
    }
  }

  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (eof()) return;
    if (peek() == '\r') ++i_;
    if (peek() != '\n') error("unexpected text after value");
    ++i_;
  }

  std::string key_part() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    const std::size_t b = i_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++i_;
    if (b == i_) error("expected a key");
    return s_.substr(b, i_ - b);
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> p{key_part()};
    while (true) {
      skip_inline_ws();
      if (peek() != '.') break;
      ++i_;
      skip_inline_ws();
      p.push_back(key_part());
    }
    return p;
  }

  json& open_table(json& root, const std::vector<std::string>& path) {
    json* t = &root;
    for (const auto& k : path) {
      json& next = (*t)[k];
      if (next.is_null()) next = json::object();
      if (next.is_array() && !next.empty() && next.back().is_object()) {
        t = &next.back();
        continue;
      }
      if (!next.is_object()) error("'" + k + "' is not a table");
      t = &next;
    }
    return *t;
  }

  json& append_table(json& root, const std::vector<std::string>& path) {
    std::vector<std::string> parent(path.begin(), path.end() - 1);
    json& t = open_table(root, parent);
    json& arr = t[path.back()];
    if (arr.is_null()) arr = json::array();
    if (!arr.is_array()) error("'" + path.back() + "' is not an array of tables");
    arr.push_back(json::object());
    return arr.back();
  }

  void assign(json& table, const std::vector<std::string>& path, json v) {
    json* t = &table;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      json& next = (*t)[path[k]];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) error("'" + path[k] + "' is not a table");
      t = &next;
    }
    if (t->contains(path.back())) error("duplicate key '" + path.back() + "'");
    (*t)[path.back()] = std::move(v);
  }

  std::string basic_string() {
    expect("\"");
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') error("unterminated string");
      char c = s_[i_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (eof()) error("bad escape");
      c = s_[i_++];
      switch (c) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case 'b': out += '\b'; break;
        case 'f': out += '\f'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'u': {
          if (i_ + 4 > s_.size()) error("bad unicode escape");
          const unsigned cp = static_cast<unsigned>(std::stoul(s_.substr(i_, 4), nullptr, 16));
          i_ += 4;
          if (cp < 0x80) {
            out += static_cast<char>(cp);
          } else if (cp < 0x800) {
            out += static_cast<char>(0xC0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3F));
          } else {
            out += static_cast<char>(0xE0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
            out += static_cast<char>(0x80 | (cp & 0x3F));
          }
          break;
        }
        default: error(std::string("unknown escape \\") + c);
      }
    }
    return out;
  }

  std::string literal_string() {
    expect("'");
    const std::size_t b = i_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++i_;
    if (peek() != '\'') error("unterminated literal string");
    std::string out = s_.substr(b, i_ - b);
    ++i_;
    return out;
  }

  json number_or_bool() {
    const std::size_t b = i_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_'))
      ++i_;
    std::string tok = s_.substr(b, i_ - b);
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string clean;
    for (char c : tok)
      if (c != '_') clean += c;
    if (clean == "inf" || clean == "+inf") return std::numeric_limits<double>::infinity();
    if (clean == "-inf") return -std::numeric_limits<double>::infinity();
    if (clean == "nan" || clean == "+nan" || clean == "-nan") return std::numeric_limits<double>::quiet_NaN();
    if (clean.empty()) error("expected a value");
    const bool is_float = clean.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(clean, &used);
        if (used != clean.size()) error("bad number '" + tok + "'");
        return v;
      }
      const long long v = std::stoll(clean, &used, 10);
      if (used != clean.size()) error("bad number '" + tok + "'");
      return v;
    } catch (const std::logic_error&) {
      error("bad value '" + tok + "'");
    }
  }

  json value() {
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') {
      ++i_;
      json arr = json::array();
      while (true) {
        skip_ws_comments_newlines();
        if (peek() == ']') {
          ++i_;
          break;
        }
        arr.push_back(value());
        skip_ws_comments_newlines();
        if (peek() == ',') {
          ++i_;
          continue;
        }
        if (peek() != ']') error("expected ',' or ']' in array");
      }
      return arr;
    }
    if (c == '{') {
      ++i_;
      json t = json::object();
      skip_inline_ws();
      if (peek() == '}') {
        ++i_;
        return t;
      }
      while (true) {
        skip_inline_ws();
        const auto path = key_path();
        skip_inline_ws();
        expect("=");
        skip_inline_ws();
        assign(t, path, value());
        skip_inline_ws();
        if (peek() == ',') {
          ++i_;
          continue;
        }
        expect("}");
        break;
      }
      return t;
    }
    return number_or_bool();
  }

  std::string s_;
  std::size_t i_ = 0;
};

inline json parse(const std::string& text) { return Parser(text).parse(); }

inline json parse_file(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::IoError, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

namespace detail {

inline bool bare_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

inline std::string quote(const std::string& s) {
  std::string o = "\"";
  for (char c : s) {
    switch (c) {
      case '"': o += "\\\""; break;
      case '\\': o += "\\\\"; break;
      case '\n': o += "\\n"; break;
      case '\t': o += "\\t"; break;
      case '\r': o += "\\r"; break;
      default: o += c;
    }
  }
  return o + "\"";
}

inline std::string key(const std::string& k) { return bare_key(k) ? k : quote(k); }

inline std::string scalar(const json& v);

inline std::string inline_value(const json& v) {
  if (v.is_array()) {
    std::string o = "[";
    for (std::size_t k = 0; k < v.size(); ++k) o += (k ? ", " : "") + inline_value(v[k]);
    return o + "]";
  }
  if (v.is_object()) {
    std::string o = "{";
    bool first = true;
    for (auto it = v.begin(); it != v.end(); ++it) {
      o += (first ? " " : ", ") + key(it.key()) + " = " + inline_value(it.value());
      first = false;
    }
    return o + (first ? "}" : " }");
  }
  return scalar(v);
}

inline std::string scalar(const json& v) {
  if (v.is_string()) return quote(v.get<std::string>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isnan(d)) return "nan";
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    std::string s = json(d).dump();
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
  }
  fail(Errc::SchemaError, "value has no TOML form");
}

inline bool is_table_array(const json& v) {
  if (!v.is_array() || v.empty()) return false;
  for (const auto& e : v)
    if (!e.is_object()) return false;
  return true;
}

inline void write_table(std::ostream& os, const json& t, const std::string& prefix) {
  for (auto it = t.begin(); it != t.end(); ++it) {
    const json& v = it.value();
    if (v.is_object() || is_table_array(v)) continue;
    os << key(it.key()) << " = " << inline_value(v) << "\n";
  }
  for (auto it = t.begin(); it != t.end(); ++it) {
    const json& v = it.value();
    const std::string name = prefix.empty() ? key(it.key()) : prefix + "." + key(it.key());
    if (v.is_object()) {
      os << "\n[" << name << "]\n";
      write_table(os, v, name);
    } else if (is_table_array(v)) {
      for (const auto& e : v) {
        os << "\n[[" << name << "]]\n";
        write_table(os, e, name);
      }
    }
  }
}

}  // namespace detail

/// TOML text whose parse gives back the same tree (keys sorted).
inline std::string dump(const json& root) {
  require(root.is_object(), Errc::SchemaError, "TOML document must be a table");
  std::ostringstream os;
  detail::write_table(os, root, "");
  return os.str();
}

}  // namespace distgap::toml
