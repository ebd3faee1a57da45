// Line-oriented `key = value` text used for manifests, sidecars and run
// configurations. '#' starts a comment; keys keep their insertion order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sofpi/tensor.hpp"

namespace sofpi {

class KeyValues {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  /// Doubles are written with 17 significant digits so they read back exactly.
  void set(const std::string& key, double value);
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  /// Comma-separated doubles.
  std::vector<double> get_doubles(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string text() const;
  static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
  void write(const std::filesystem::path& path) const;
  static KeyValues read(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string origin_ = "<memory>";
};

std::string format_double(double v);
std::string join_doubles(const std::vector<double>& v);

}  // namespace sofpi
