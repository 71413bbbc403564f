#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmn {

/// Flat `key = value` text file. Lines starting with '#' and blank lines are
/// ignored; '=' is optional (whitespace also separates key from value).
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(std::istream& in) {
    KeyValueFile kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string key, value;
      std::istringstream ls(line);
      if (!(ls >> key)) continue;
      std::string tok;
      while (ls >> tok) {
        if (tok == "=") continue;
        if (!value.empty()) value += ' ';
        value += tok;
      }
      if (!key.empty() && key.back() == '=') key.pop_back();
      if (value.empty())
        throw std::runtime_error("config line " + std::to_string(lineno) + ": key '" + key +
                                 "' has no value");
      kv.values_[key] = value;
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(it->first);
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size())
      throw std::runtime_error("config key '" + key + "': bad number '" + it->second + "'");
    return v;
  }

  long long get_int(const std::string& key, long long dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(it->first);
    size_t pos = 0;
    long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size())
      throw std::runtime_error("config key '" + key + "': bad integer '" + it->second + "'");
    return v;
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(it->first);
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config key '" + key + "': bad boolean '" + it->second + "'");
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    consumed_.insert(it->first);
    return it->second;
  }

  /// Throws if the file contained keys no getter asked about (typo guard).
  void reject_unknown_keys() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key)) throw std::runtime_error("unknown config key: " + key);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

/// CSV writer with a fixed, reproducible float format.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open output file: " + path);
  }

  void header(const std::vector<std::string>& cols) { row_strings(cols); }

  void field(const std::string& s) {
    if (!first_) out_ << ',';
    out_ << s;
    first_ = false;
  }
  void field(double v) { field(format_double(v)); }
  void field(int v) { field(std::to_string(v)); }
  void field(long v) { field(std::to_string(v)); }
  void field(size_t v) { field(std::to_string(v)); }
  void end_row() {
    out_ << '\n';
    first_ = true;
  }

  void row_strings(const std::vector<std::string>& cols) {
    for (const auto& c : cols) field(c);
    end_row();
  }

  static std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
  }

 private:
  std::ofstream out_;
  bool first_ = true;
};

}  // namespace pmn
