#include "uwml/config.hpp"

#include <fstream>

#include "uwml/csv.hpp"

namespace uwml {

KeyValueConfig KeyValueConfig::parse(std::istream& in, const std::string& source) {
  KeyValueConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(text.substr(0, eq));
    if (key.empty()) throw UsageError(source + ":" + std::to_string(line_no) + ": empty key");
    cfg.values_[std::string(key)] = std::string(trim(text.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  return parse(in, path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const int out = std::stoi(*v, &pos);
    if (pos == v->size()) return out;
  } catch (const std::exception&) {
  }
  throw UsageError(key + ": expected an integer, got '" + *v + "'");
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto d = parse_double(*v);
  if (!d) throw UsageError(key + ": expected a number, got '" + *v + "'");
  return *d;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw UsageError(key + ": expected true or false, got '" + *v + "'");
}

Date KeyValueConfig::get_date(const std::string& key, Date fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto d = Date::try_parse(*v);
  if (!d) throw UsageError(key + ": expected YYYY-MM-DD, got '" + *v + "'");
  return *d;
}

std::vector<double> KeyValueConfig::get_list(const std::string& key, std::vector<double> fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (auto part : split(*v, ',')) {
    auto d = parse_double(trim(part));
    if (!d) throw UsageError(key + ": expected comma-separated numbers, got '" + *v + "'");
    out.push_back(*d);
  }
  return out;
}

std::optional<std::filesystem::path> KeyValueConfig::get_path(const std::string& key) const {
  auto v = get(key);
  if (!v || v->empty()) return std::nullopt;
  return std::filesystem::path(*v);
}

std::vector<std::string> KeyValueConfig::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : values_) {
    if (!used_.contains(k)) out.push_back(k);
  }
  return out;
}

void KeyValueConfig::reject_unused() const {
  const auto keys = unused();
  if (keys.empty()) return;
  std::string msg = "unknown config key(s):";
  for (const auto& k : keys) msg += " " + k;
  throw UsageError(msg);
}

}  // namespace uwml
