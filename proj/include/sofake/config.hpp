// Application configuration: one JSON file plus SOFAKE_<SECTION>_<KEY> environment overrides.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "sofake/grpo.hpp"
#include "sofake/rewards.hpp"
#include "sofake/toyworld.hpp"

namespace sofake {

inline constexpr const char* kVersion = "0.1.0";

struct PathsConfig {
  std::string scenes_dir = "scenes";
  std::string runs_dir = "runs";
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
};

struct AppConfig {
  RewardConfig reward;
  GrpoConfig grpo;
  ToyConfig toy;
  PathsConfig paths;
  std::uint64_t seed = 0;
  ServiceConfig service;

  void validate() const;
};

/// Thrown for unreadable or invalid configuration; the message names the offending key or variable.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::ordered_json config_to_json(const AppConfig& cfg);
/// Missing keys keep defaults; unknown keys and type mismatches throw ConfigError.
AppConfig config_from_json(const nlohmann::json& j);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

/// Defaults, then the file (if any), then environment overrides; validated.
AppConfig resolve_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env = process_env());

/// Writes <dir>/config.resolved.json.
void write_resolved_config(const std::filesystem::path& dir, const AppConfig& cfg);

}  // namespace sofake
