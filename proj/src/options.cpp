#include "pdcvit/options.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace pdcvit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

}  // namespace

std::string Options::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("missing required option --" + key);
  return it->second;
}

std::int64_t Options::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const auto out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw UsageError("option --" + key + " expects an integer, got '" + v + "'");
  }
}

std::size_t Options::get_size(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw UsageError("option --" + key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

double Options::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw UsageError("option --" + key + " expects a number, got '" + v + "'");
  }
}

bool Options::get_bool(const std::string& key) const {
  std::string v = get_string(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError("option --" + key + " expects a boolean, got '" + v + "'");
}

Options Options::overlaid(const Options& over) const {
  Options out = *this;
  for (const auto& [k, v] : over.values_) out.values_[k] = v;
  return out;
}

Options parse_config_text(const std::string& text, const std::string& origin) {
  Options out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = normalize_key(trim(line.substr(0, eq)));
    if (key.empty()) throw UsageError(origin + ":" + std::to_string(lineno) + ": empty key");
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out.set(key, value);
  }
  return out;
}

Options load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

Options layer_options(const Options& defaults, const Options& file, const Options& flags) {
  return defaults.overlaid(file).overlaid(flags);
}

}  // namespace pdcvit
