#pragma once

// Plain-text experiment configs:
//
//   seed = 7
//   [section]
//   key = value          # comment
//   list = [a, b, c]
//
// Keys before the first section header belong to the root section "".

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tsconceal/data.hpp"
#include "tsconceal/error.hpp"

namespace tsconceal {

class ConfigFile {
 public:
  using Section = std::map<std::string, std::string>;

  static ConfigFile parse(const std::string& text, const std::string& origin = "<config>") {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line, section;
    cfg.order_.push_back("");
    cfg.sections_[""];
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = detail::trim(strip_tabs(line));
      if (t.empty()) continue;
      const std::string where = origin + ":" + std::to_string(line_no);
      if (t.front() == '[') {
        if (t.back() != ']' || t.size() < 3) throw ConfigError(where + ": malformed section header");
        section = detail::trim(t.substr(1, t.size() - 2));
        if (cfg.sections_.count(section) != 0) throw ConfigError(where + ": duplicate section [" + section + "]");
        cfg.sections_[section];
        cfg.order_.push_back(section);
        continue;
      }
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError(where + ": empty key");
      auto& sec = cfg.sections_[section];
      if (sec.count(key) != 0) throw ConfigError(where + ": duplicate key '" + key + "'");
      sec[key] = value;
    }
    return cfg;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has_section(const std::string& s) const { return sections_.count(s) != 0; }
  const Section& section(const std::string& s) const {
    static const Section empty;
    auto it = sections_.find(s);
    return it == sections_.end() ? empty : it->second;
  }
  /// Section names in file order.
  const std::vector<std::string>& sections() const noexcept { return order_; }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    if (sections_.count(section) == 0) order_.push_back(section);
    sections_[section][key] = value;
  }

  /// "section.key=value" lines, sorted, with list values re-spaced.
  std::string canonical() const {
    std::string out;
    for (const auto& [name, sec] : sections_) {
      for (const auto& [k, v] : sec) {
        out += name.empty() ? k : name + "." + k;
        out += '=';
        out += canonical_value(v);
        out += '\n';
      }
    }
    return out;
  }

  /// FNV-1a (64 bit) of canonical(); independent of key order in the file.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  static bool is_list(const std::string& v) { return v.size() >= 2 && v.front() == '[' && v.back() == ']'; }

  /// Items of "[a, b]", or the single value itself.
  static std::vector<std::string> items(const std::string& v) {
    if (!is_list(v)) return {v};
    std::vector<std::string> out;
    const std::string body = v.substr(1, v.size() - 2);
    if (detail::trim(body).empty()) return out;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = body.find(',', start);
      out.push_back(detail::trim(body.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }

 private:
  static std::string strip_tabs(std::string s) {
    for (char& c : s) {
      if (c == '\t') c = ' ';
    }
    return s;
  }

  static std::string canonical_value(const std::string& v) {
    if (!is_list(v)) return v;
    std::string out = "[";
    const auto parts = items(v);
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
    return out + "]";
  }

  std::map<std::string, Section> sections_;
  std::vector<std::string> order_;
};

/// Typed, strict reader over one section: every key must be consumed.
class SectionReader {
 public:
  SectionReader(const ConfigFile& cfg, std::string name) : name_(std::move(name)), sec_(cfg.section(name_)) {}

  bool has(const std::string& key) const { return sec_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    used_.push_back(key);
    auto it = sec_.find(key);
    return it == sec_.end() ? fallback : it->second;
  }

  double real(const std::string& key, double fallback) {
    if (!has(key)) {
      mark(key);
      return fallback;
    }
    return to_real(str(key, ""), key);
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) {
      mark(key);
      return fallback;
    }
    return to_count(str(key, ""), key);
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) {
      mark(key);
      return fallback;
    }
    return to_count(str(key, ""), key);
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) {
      mark(key);
      return fallback;
    }
    const std::string v = str(key, "");
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw ConfigError(where(key) + ": expected a boolean, got '" + v + "'");
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) {
      mark(key);
      return fallback;
    }
    std::vector<std::size_t> out;
    for (const auto& item : ConfigFile::items(str(key, ""))) out.push_back(to_count(item, key));
    return out;
  }

  /// Throws on keys nobody asked for.
  void finish() const {
    for (const auto& [k, v] : sec_) {
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) {
        throw ConfigError("unknown key " + where(k));
      }
    }
  }

  std::string where(const std::string& key) const { return name_.empty() ? key : "[" + name_ + "] " + key; }

  double to_real(const std::string& v, const std::string& key) const {
    auto r = detail::parse_real(v);
    if (!r) throw ConfigError(where(key) + ": expected a number, got '" + v + "'");
    return *r;
  }

  std::uint64_t to_count(const std::string& v, const std::string& key) const {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
      throw ConfigError(where(key) + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
  }

 private:
  void mark(const std::string& key) { used_.push_back(key); }

  std::string name_;
  const ConfigFile::Section& sec_;
  std::vector<std::string> used_;
};

}  // namespace tsconceal
