#include "sofpi/kvfile.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "sofpi/jrrt.hpp"

namespace sofpi {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T, class F>
T convert(const std::string& origin, const std::string& key, const std::string& value, F f) {
  try {
    std::size_t used = 0;
    T out = f(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw Error(origin + ": key '" + key + "' has invalid value '" + value + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void KeyValues::set(const std::string& key, double value) { set(key, format_double(value)); }

bool KeyValues::has(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return true;
  return false;
}

const std::string& KeyValues::get(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return e.second;
  throw Error(origin_ + ": missing key '" + key + "'");
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double KeyValues::get_double(const std::string& key) const {
  return convert<double>(origin_, key, get(key), [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long long KeyValues::get_int(const std::string& key) const {
  return convert<long long>(origin_, key, get(key),
                            [](const std::string& s, std::size_t* n) { return std::stoll(s, n); });
}

long long KeyValues::get_int(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t KeyValues::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  if (!v.empty() && v[0] == '-') throw Error(origin_ + ": key '" + key + "' must be non-negative");
  return convert<std::uint64_t>(origin_, key, v,
                                [](const std::string& s, std::size_t* n) { return std::stoull(s, n); });
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? get_u64(key) : fallback;
}

std::vector<double> KeyValues::get_doubles(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get(key));
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(convert<double>(origin_, key, item,
                                  [](const std::string& s, std::size_t* n) { return std::stod(s, n); }));
  }
  return out;
}

std::string KeyValues::text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::stringstream ss(text);
  int lineno = 0;
  for (std::string line; std::getline(ss, line);) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

void KeyValues::write(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text();
  if (!os) throw IoError("write failed for " + path.string());
}

KeyValues KeyValues::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

}  // namespace sofpi
