#include "kern/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace kern::cli {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

std::map<std::string, std::string> parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("config file " + path + " line " +
                        std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw FormatError("config file " + path + " line " +
                        std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

}  // namespace

RunConfig RunConfig::parse(const std::vector<std::string>& args,
                           const std::set<std::string>& allowed_keys) {
  RunConfig cfg;
  std::map<std::string, std::string> overrides;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg.rfind("--", 0) != 0)
      throw ConfigError("expected --key value, got: " + arg);
    const std::string key = arg.substr(2);
    if (i + 1 >= args.size())
      throw ConfigError("missing value for --" + key);
    overrides[key] = args[++i];
  }
  if (auto it = overrides.find("config"); it != overrides.end()) {
    cfg.values_ = parse_file(it->second);
    overrides.erase(it);
  }
  for (auto& [key, value] : overrides) cfg.values_[key] = value;

  for (const auto& [key, value] : cfg.values_) {
    (void)value;
    if (!allowed_keys.count(key))
      throw ConfigError("unknown config key: " + key);
  }
  return cfg;
}

std::string RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing required key: " + key);
  return it->second;
}

std::string RunConfig::str_or(const std::string& key,
                              const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t RunConfig::integer(const std::string& key) const {
  const std::string v = str(key);
  try {
    std::size_t pos = 0;
    const std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " is not an integer: " + v);
  }
}

std::int64_t RunConfig::integer_or(const std::string& key,
                                   std::int64_t fallback) const {
  return has(key) ? integer(key) : fallback;
}

double RunConfig::real_or(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string v = str(key);
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + " is not a number: " + v);
  }
}

bool RunConfig::flag_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = str(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("key " + key + " is not a boolean: " + v);
}

std::uint64_t RunConfig::seed_or(std::uint64_t fallback) const {
  if (const char* env = std::getenv("KERN_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("KERN_SEED is not an integer: ") + env);
    }
  }
  if (!has("seed")) return fallback;
  return static_cast<std::uint64_t>(integer("seed"));
}

std::string RunConfig::resolved() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_)
    out << key << " = " << value << '\n';
  return out.str();
}

}  // namespace kern::cli
