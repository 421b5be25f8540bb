#pragma once

// Effective settings for one subcommand. Each setting comes from the first
// of: command-line flag, environment variable, config file, built-in
// default.
//
// Config files are JSON with one object per subcommand path:
//   {"peer run": {"registry": "10.0.0.5:7400", "name": "alice"}}

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/result.hpp"

namespace climanic::cli {

struct Setting {
  std::string key;
  /// Environment variable, empty for none.
  std::string env;
  std::optional<std::string> fallback;
};

struct Resolved {
  std::optional<std::string> value;
  /// flag, env, config, default or unset.
  std::string source;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Process environment.
std::optional<std::string> process_env(const std::string& name);

/// The section for `command` from a config file; an empty object when the
/// file has none. InvalidArgument when the file is unreadable or not JSON.
Result<nlohmann::json> load_config_section(const std::string& path, const std::string& command);

class Config {
 public:
  Config(nlohmann::json file_section, EnvLookup env) : file_(std::move(file_section)), env_(std::move(env)) {}

  /// Resolves and remembers one setting.
  const Resolved& resolve(const Setting& s, const std::optional<std::string>& flag);
  const Resolved& get(const std::string& key) const { return values_.at(key); }

  /// Canonical JSON: {"key":{"source":...,"value":...},...}, keys sorted.
  std::string print() const;

 private:
  nlohmann::json file_;
  EnvLookup env_;
  std::map<std::string, Resolved> values_;
};

}  // namespace climanic::cli
