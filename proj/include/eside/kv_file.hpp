#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eside/error.hpp"

namespace eside {

// Plain-text `key = value` file. Blank lines and lines starting with '#'
// are ignored. Keys keep their insertion order; duplicates are an error.
class KvFile {
 public:
  using Entry = std::pair<std::string, std::string>;

  static KvFile parse(const std::string& text) {
    KvFile kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw FormatError(FormatCode::corrupt_header, "line " + std::to_string(lineno) + ": expected key = value");
      }
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (key.empty()) throw FormatError(FormatCode::corrupt_header, "line " + std::to_string(lineno) + ": empty key");
      if (kv.contains(key)) throw FormatError(FormatCode::corrupt_header, "duplicate key '" + key + "'");
      kv.set(std::move(key), std::move(value));
    }
    return kv;
  }

  static KvFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatCode::io, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void save(const std::filesystem::path& path, const std::string& header_comment = {}) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(FormatCode::io, "cannot write " + path.string());
    out << to_string(header_comment);
  }

  std::string to_string(const std::string& header_comment = {}) const {
    std::string s;
    if (!header_comment.empty()) s += "# " + header_comment + "\n";
    for (const auto& [k, v] : entries_) s += k + " = " + v + "\n";
    return s;
  }

  void set(std::string key, std::string value) {
    for (auto& e : entries_) {
      if (e.first == key) {
        e.second = std::move(value);
        return;
      }
    }
    entries_.emplace_back(std::move(key), std::move(value));
  }

  bool contains(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return true;
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& e : entries_)
      if (e.first == key) return e.second;
    throw FormatError(FormatCode::corrupt_header, "missing key '" + key + "'");
  }

  template <typename T>
  T get_as(const std::string& key) const {
    return parse_value<T>(get(key), key);
  }

  const std::vector<Entry>& entries() const { return entries_; }

  template <typename T>
  static T parse_value(const std::string& text, const std::string& key) {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      T value{};
      const char* first = text.data();
      const char* last = text.data() + text.size();
      auto [ptr, ec] = std::from_chars(first, last, value);
      if (ec != std::errc{} || ptr != last) {
        throw FormatError(FormatCode::corrupt_header, "key '" + key + "': cannot parse '" + text + "'");
      }
      return value;
    }
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  std::vector<Entry> entries_;
};

// Shortest decimal form that parses back to the same double.
inline std::string format_exact(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace eside
