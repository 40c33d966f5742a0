#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "pdcvit/errors.hpp"

namespace pdcvit {

// Bad command-line or config input; the CLI maps it to exit status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Flat string key/value settings with typed accessors.
class Options {
 public:
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Entries of `over` replace entries of this.
  Options overlaid(const Options& over) const;

 private:
  std::map<std::string, std::string> values_;
};

// `key = value` lines; '#' starts a comment; blank lines ignored. Keys may use
// '-' or '_' interchangeably (normalized to '-').
Options parse_config_text(const std::string& text, const std::string& origin = "<config>");
Options load_config_file(const std::filesystem::path& path);

// built-in defaults < config file < explicit flags
Options layer_options(const Options& defaults, const Options& file, const Options& flags);

}  // namespace pdcvit
