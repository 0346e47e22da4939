#include "tabl/config.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

#include "tabl/errors.hpp"

namespace tabl {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Strips a trailing comment that is not inside quotes.
std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

std::string unquote(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
  return std::string(v);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': cannot read '" + text + "' as a number");
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string origin) {
  KeyValueConfig cfg;
  cfg.origin_ = std::move(origin);
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const std::string where = cfg.origin_ + ":" + std::to_string(line_no);
    if (line.front() == '[' && line.find('=') == std::string_view::npos) {
      if (line.back() != ']') throw ParseError(where + ": unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(where + ": expected 'key = value'");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ParseError(where + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (cfg.values_.count(key)) throw ParseError(where + ": duplicate key '" + key + "'");
    cfg.values_[key] = unquote(trim(line.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::require(const std::string& key) const {
  auto v = get(key);
  if (!v) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return *v;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = get(key);
  return v ? parse_number<std::int64_t>(key, *v) : fallback;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  auto v = get(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "inf" || *v == "infinity") return std::numeric_limits<double>::infinity();
  return parse_number<double>(key, *v);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + *v + "'");
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
  auto v = get(key);
  if (!v) return {};
  std::string_view s = trim(*v);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("key '" + key + "': unterminated list");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto item = trim(s.substr(pos, comma == std::string_view::npos ? s.npos : comma - pos));
    if (!item.empty()) out.push_back(unquote(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<std::uint64_t> KeyValueConfig::get_uint_list(const std::string& key,
                                                         std::vector<std::uint64_t> fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::string s = *v;
  if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  try {
    return parse_uint_list(s);
  } catch (const ConfigError&) {
    throw ConfigError("key '" + key + "': invalid integer list '" + *v + "'");
  }
}

void KeyValueConfig::reject_unknown(const std::set<std::string>& allowed) const {
  for (const auto& [key, value] : values_) {
    bool ok = allowed.count(key) != 0;
    for (const std::string& a : allowed) {
      if (!a.empty() && a.back() == '*' && key.rfind(a.substr(0, a.size() - 1), 0) == 0) ok = true;
    }
    if (!ok) throw ConfigError(origin_ + ": unknown key '" + key + "'");
  }
}

std::string KeyValueConfig::dump() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    const bool list = value.size() >= 2 && value.front() == '[' && value.back() == ']';
    const bool bare = value.find_first_of(list ? "#\"" : " #\"") == std::string::npos && !value.empty();
    out += key + " = " + (bare ? value : "\"" + value + "\"") + "\n";
  }
  return out;
}

std::vector<std::uint64_t> parse_uint_list(std::string_view text) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  auto number = [](std::string_view s) {
    s = trim(s);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("cannot read '" + std::string(s) + "' as an unsigned integer");
    }
    return v;
  };
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    std::string_view item =
        trim(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
    if (!item.empty()) {
      const auto sep = item.find_first_of(":-");
      if (sep == std::string_view::npos) {
        out.push_back(number(item));
      } else {
        const std::uint64_t lo = number(item.substr(0, sep)), hi = number(item.substr(sep + 1));
        if (hi < lo) throw ConfigError("empty range '" + std::string(item) + "'");
        for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
      }
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace tabl
