#include "sofake/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>

namespace sofake {

using nlohmann::json;
using nlohmann::ordered_json;

void AppConfig::validate() const {
  try {
    reward.validate();
    grpo.validate();
    toy.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (service.port < 0 || service.port > 65535) throw ConfigError("service.port must lie in [0, 65535]");
  if (service.host.empty()) throw ConfigError("service.host must not be empty");
}

namespace {

std::string_view schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::Constant: return "constant";
    case LrSchedule::Linear: return "linear";
    case LrSchedule::Cosine: return "cosine";
  }
  return "cosine";
}

ordered_json reward_to_json(const RewardConfig& r) {
  return ordered_json{{"w_format", r.w_format},          {"w_classification", r.w_classification},
                      {"w_seg_format", r.w_seg_format},  {"w_iou", r.w_iou},
                      {"w_l1", r.w_l1},                  {"iou_threshold", r.iou_threshold},
                      {"l1_threshold_px", r.l1_threshold_px}, {"tampered_bonus", r.tampered_bonus},
                      {"base_reward", r.base_reward}};
}

ordered_json grpo_to_json(const GrpoConfig& g) {
  return ordered_json{{"group_size", g.group_size},
                      {"clip_eps", g.clip_eps},
                      {"kl_coeff", g.kl_coeff},
                      {"inner_epochs", g.inner_epochs},
                      {"advantage_eps", g.advantage_eps},
                      {"skip_constant_groups", g.skip_constant_groups},
                      {"groups_per_step", g.groups_per_step},
                      {"steps", g.steps},
                      {"learning_rate", g.learning_rate},
                      {"warmup_ratio", g.warmup_ratio},
                      {"schedule", schedule_name(g.schedule)},
                      {"adam_beta1", g.adam_beta1},
                      {"adam_beta2", g.adam_beta2},
                      {"adam_eps", g.adam_eps}};
}

// Reads j[key] into out when present, checking the JSON type against the C++ type.
template <typename T>
void take(const json& j, const std::string& section, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string where = section + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw ConfigError(where + ": expected a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw ConfigError(where + ": expected a string");
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) throw ConfigError(where + ": expected an integer");
  } else {
    if (!it->is_number()) throw ConfigError(where + ": expected a number");
  }
  out = it->get<T>();
}

void reject_unknown(const json& j, const ordered_json& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError((section.empty() ? "" : section + ".") + key + ": unknown key");
  }
}

std::string env_name(const std::string& section, const std::string& key) {
  std::string name = "SOFAKE_";
  for (char c : section.empty() ? key : section + "_" + key) name.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return name;
}

json parse_env_value(const std::string& name, const std::string& raw, const ordered_json& current) {
  if (current.is_string()) return raw;
  if (current.is_boolean()) {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError(name + ": expected true/false, got '" + raw + "'");
  }
  try {
    json v = json::parse(raw);
    if (v.is_number()) return v;
  } catch (const json::parse_error&) {
  }
  throw ConfigError(name + ": expected a number, got '" + raw + "'");
}

}  // namespace

ordered_json config_to_json(const AppConfig& c) {
  ordered_json j;
  j["reward"] = reward_to_json(c.reward);
  j["grpo"] = grpo_to_json(c.grpo);
  j["toy"] = toy_config_to_json(c.toy);
  j["paths"] = ordered_json{{"scenes_dir", c.paths.scenes_dir}, {"runs_dir", c.paths.runs_dir}};
  j["seed"] = c.seed;
  j["service"] = ordered_json{{"host", c.service.host}, {"port", c.service.port}};
  return j;
}

AppConfig config_from_json(const json& j) {
  AppConfig c;
  const ordered_json known = config_to_json(c);
  reject_unknown(j, known, "");

  if (const auto it = j.find("reward"); it != j.end()) {
    reject_unknown(*it, known["reward"], "reward");
    take(*it, "reward", "w_format", c.reward.w_format);
    take(*it, "reward", "w_classification", c.reward.w_classification);
    take(*it, "reward", "w_seg_format", c.reward.w_seg_format);
    take(*it, "reward", "w_iou", c.reward.w_iou);
    take(*it, "reward", "w_l1", c.reward.w_l1);
    take(*it, "reward", "iou_threshold", c.reward.iou_threshold);
    take(*it, "reward", "l1_threshold_px", c.reward.l1_threshold_px);
    take(*it, "reward", "tampered_bonus", c.reward.tampered_bonus);
    take(*it, "reward", "base_reward", c.reward.base_reward);
  }
  if (const auto it = j.find("grpo"); it != j.end()) {
    reject_unknown(*it, known["grpo"], "grpo");
    take(*it, "grpo", "group_size", c.grpo.group_size);
    take(*it, "grpo", "clip_eps", c.grpo.clip_eps);
    take(*it, "grpo", "kl_coeff", c.grpo.kl_coeff);
    take(*it, "grpo", "inner_epochs", c.grpo.inner_epochs);
    take(*it, "grpo", "advantage_eps", c.grpo.advantage_eps);
    take(*it, "grpo", "skip_constant_groups", c.grpo.skip_constant_groups);
    take(*it, "grpo", "groups_per_step", c.grpo.groups_per_step);
    take(*it, "grpo", "steps", c.grpo.steps);
    take(*it, "grpo", "learning_rate", c.grpo.learning_rate);
    take(*it, "grpo", "warmup_ratio", c.grpo.warmup_ratio);
    std::string schedule(schedule_name(c.grpo.schedule));
    take(*it, "grpo", "schedule", schedule);
    if (schedule == "constant") {
      c.grpo.schedule = LrSchedule::Constant;
    } else if (schedule == "linear") {
      c.grpo.schedule = LrSchedule::Linear;
    } else if (schedule == "cosine") {
      c.grpo.schedule = LrSchedule::Cosine;
    } else {
      throw ConfigError("grpo.schedule: expected constant, linear or cosine");
    }
    take(*it, "grpo", "adam_beta1", c.grpo.adam_beta1);
    take(*it, "grpo", "adam_beta2", c.grpo.adam_beta2);
    take(*it, "grpo", "adam_eps", c.grpo.adam_eps);
  }
  if (const auto it = j.find("toy"); it != j.end()) {
    try {
      c.toy = toy_config_from_json(*it);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (const auto it = j.find("paths"); it != j.end()) {
    reject_unknown(*it, known["paths"], "paths");
    take(*it, "paths", "scenes_dir", c.paths.scenes_dir);
    take(*it, "paths", "runs_dir", c.paths.runs_dir);
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (const auto it = j.find("service"); it != j.end()) {
    reject_unknown(*it, known["service"], "service");
    take(*it, "service", "host", c.service.host);
    take(*it, "service", "port", c.service.port);
  }
  c.validate();
  return c;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

AppConfig resolve_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env) {
  ordered_json tree = config_to_json(AppConfig{});
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + file->string() + ": " + e.what());
    }
    // Validates keys and types before merging.
    (void)config_from_json(user);
    for (const auto& [section, value] : user.items()) {
      if (value.is_object()) {
        for (const auto& [key, leaf] : value.items()) tree[section][key] = leaf;
      } else {
        tree[section] = value;
      }
    }
  }
  if (env) {
    for (auto& [section, value] : tree.items()) {
      if (value.is_object()) {
        for (auto& [key, leaf] : value.items()) {
          const std::string name = env_name(section, key);
          if (const auto raw = env(name)) leaf = parse_env_value(name, *raw, leaf);
        }
      } else {
        const std::string name = env_name("", section);
        if (const auto raw = env(name)) value = parse_env_value(name, *raw, value);
      }
    }
  }
  return config_from_json(tree);
}

void write_resolved_config(const std::filesystem::path& dir, const AppConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream out(dir / "config.resolved.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.resolved.json").string());
  out << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace sofake
