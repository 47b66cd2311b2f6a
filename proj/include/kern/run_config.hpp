#pragma once

// Command configuration: a line-oriented `key = value` file merged with
// `--key value` command-line overrides. Every key must be declared by the
// command; unknown keys are an error. The KERN_SEED environment variable
// overrides the seed from either source.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "kern/common.hpp"

namespace kern::cli {

class RunConfig {
 public:
  // args are everything after the command name. `--config <path>` loads a
  // file first; later command-line pairs override file entries.
  static RunConfig parse(const std::vector<std::string>& args,
                         const std::set<std::string>& allowed_keys);

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) const;
  std::string str_or(const std::string& key, const std::string& fallback) const;
  std::int64_t integer(const std::string& key) const;
  std::int64_t integer_or(const std::string& key, std::int64_t fallback) const;
  double real_or(const std::string& key, double fallback) const;
  bool flag_or(const std::string& key, bool fallback) const;

  // Config seed with the KERN_SEED environment override applied.
  std::uint64_t seed_or(std::uint64_t fallback) const;

  // Sorted `key = value` lines of the fully-resolved configuration.
  std::string resolved() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace kern::cli
