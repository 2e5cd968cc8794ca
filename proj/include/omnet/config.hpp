#pragma once

// Sectioned key-value run configuration. Every agent, run and diagnostics
// field is addressable; unknown keys and malformed values are errors that
// carry the offending line number.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnet/diagnostics.hpp"
#include "omnet/maze.hpp"
#include "omnet/sac.hpp"

namespace omnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  SacConfig agent;
  std::string maze_config;  // path; empty selects the built-in maze
  MazeConfig maze = MazeConfig::standard();
  std::size_t total_env_steps = 2000;
  std::size_t eval_interval = 100;
  std::size_t eval_episodes = 10;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "runs";
  double noise_scale = 0.0;
  ValueBiasSettings bias;
  double best_return = 100.0;

  RunSettings settings() const { return {eval_interval, eval_episodes, noise_scale}; }

  void validate() const {
    agent.validate();
    maze.validate();
    if (seeds.empty()) throw ConfigError("run.seeds: at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw ConfigError("run.seeds: seeds must be distinct");
    if (total_env_steps < agent.warmup_steps)
      throw ConfigError("run.total_env_steps must be >= agent.warmup_steps");
    if (eval_interval == 0) throw ConfigError("run.eval_interval must be positive");
    if (!(noise_scale >= 0.0)) throw ConfigError("run.noise_scale must be >= 0");
    if (!(best_return > 0.0)) throw ConfigError("diagnostics.best_return must be positive");
  }
};

namespace detail {

struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
  std::string where;  // "file:line"
};

inline std::vector<ConfigEntry> parse_ini(std::istream& in, const std::string& source) {
  std::vector<ConfigEntry> out;
  std::string section;
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    auto line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "agent" && section != "run" && section != "diagnostics")
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    if (section.empty()) throw ConfigError(where + ": key outside of any section");
    out.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where});
  }
  return out;
}

inline double to_real(const ConfigEntry& e) {
  try {
    return parse_scalar(e.value, 0);
  } catch (const std::invalid_argument&) {
    throw ConfigError(e.where + ": " + e.key + ": expected a number, got '" + e.value + "'");
  }
}

inline std::uint64_t to_count(const ConfigEntry& e) {
  const auto& v = e.value;
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw ConfigError(e.where + ": " + e.key + ": expected a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(e.where + ": " + e.key + ": integer out of range");
  }
}

inline bool to_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigError(e.where + ": " + e.key + ": expected true/false, got '" + e.value + "'");
}

inline std::vector<std::uint64_t> to_counts(const ConfigEntry& e) {
  std::string text = e.value;
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream is(text);
  std::vector<std::uint64_t> out;
  for (std::string tok; is >> tok;) {
    ConfigEntry one = e;
    one.value = tok;
    out.push_back(to_count(one));
  }
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? " " : "") + std::to_string(v[k]);
  return s;
}

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

}  // namespace detail

/// Applies entries onto `cfg`. `base_dir` resolves relative maze paths.
inline void apply_config_entries(RunConfig& cfg, const std::vector<detail::ConfigEntry>& entries,
                                 const std::filesystem::path& base_dir) {
  using detail::ConfigEntry;
  using Setter = std::function<void(const ConfigEntry&)>;
  auto& a = cfg.agent;
  auto real = [](double& f) { return [&f](const ConfigEntry& e) { f = detail::to_real(e); }; };
  auto count = [](std::size_t& f) { return [&f](const ConfigEntry& e) { f = detail::to_count(e); }; };
  auto flag = [](bool& f) { return [&f](const ConfigEntry& e) { f = detail::to_bool(e); }; };
  auto sizes = [](std::vector<std::size_t>& f) {
    return [&f](const ConfigEntry& e) {
      const auto v = detail::to_counts(e);
      f.assign(v.begin(), v.end());
    };
  };
  const std::map<std::string, Setter> setters{
      {"agent.gamma", real(a.gamma)},
      {"agent.replay_ratio", count(a.replay_ratio)},
      {"agent.policy_delay", count(a.policy_delay)},
      {"agent.batch_size", count(a.batch_size)},
      {"agent.tau", real(a.tau)},
      {"agent.target_entropy",
       [&a](const ConfigEntry& e) {
         if (e.value == "auto")
           a.target_entropy.reset();
         else
           a.target_entropy = detail::to_real(e);
       }},
      {"agent.critic_lr", real(a.critic_lr)},
      {"agent.actor_lr", real(a.actor_lr)},
      {"agent.alpha_lr", real(a.alpha_lr)},
      {"agent.init_alpha", real(a.init_alpha)},
      {"agent.warmup_steps", count(a.warmup_steps)},
      {"agent.buffer_capacity", count(a.buffer_capacity)},
      {"agent.critic_hidden", sizes(a.critic_hidden)},
      {"agent.critic_layer_norm", flag(a.critic_layer_norm)},
      {"agent.actor_hidden", sizes(a.actor_hidden)},
      {"agent.actor_layer_norm", flag(a.actor_layer_norm)},
      {"agent.hidden_activation",
       [&a](const ConfigEntry& e) {
         if (e.value == "relu")
           a.hidden_activation = Activation::relu;
         else if (e.value == "tanh")
           a.hidden_activation = Activation::tanh;
         else
           throw ConfigError(e.where + ": hidden_activation must be relu or tanh");
       }},
      {"agent.critic_zero_head", flag(a.critic_zero_head)},
      {"agent.critic_mode",
       [&a](const ConfigEntry& e) {
         if (e.value == "omnet")
           a.critic_mode = CriticMode::omnet;
         else if (e.value == "dense_double")
           a.critic_mode = CriticMode::dense_double;
         else if (e.value == "dense_single")
           a.critic_mode = CriticMode::dense_single;
         else if (e.value == "infinity")
           a.critic_mode = CriticMode::infinity;
         else
           throw ConfigError(e.where + ": critic_mode must be omnet, dense_double, dense_single or infinity");
       }},
      {"agent.critic_subnets", count(a.critic_subnets)},
      {"agent.critic_sparsity", real(a.critic_sparsity)},
      {"agent.actor_mode",
       [&a](const ConfigEntry& e) {
         if (e.value == "omnet")
           a.actor_mode = ActorMode::omnet;
         else if (e.value == "dense")
           a.actor_mode = ActorMode::dense;
         else if (e.value == "infinity")
           a.actor_mode = ActorMode::infinity;
         else
           throw ConfigError(e.where + ": actor_mode must be omnet, dense or infinity");
       }},
      {"agent.actor_subnets", count(a.actor_subnets)},
      {"agent.actor_sparsity", real(a.actor_sparsity)},
      {"agent.infinity_q_samples", count(a.infinity_q_samples)},
      {"agent.entropy_off", flag(a.entropy_off)},
      {"run.maze_config",
       [&cfg, base_dir](const ConfigEntry& e) {
         if (e.value.empty()) {
           cfg.maze_config.clear();
           cfg.maze = MazeConfig::standard();
           return;
         }
         std::filesystem::path p(e.value);
         if (p.is_relative()) p = base_dir / p;
         cfg.maze_config = p.lexically_normal().string();
         try {
           cfg.maze = load_maze_config(cfg.maze_config);
         } catch (const std::exception& ex) {
           throw ConfigError(e.where + ": " + ex.what());
         }
       }},
      {"run.total_env_steps", count(cfg.total_env_steps)},
      {"run.eval_interval", count(cfg.eval_interval)},
      {"run.eval_episodes", count(cfg.eval_episodes)},
      {"run.seeds", [&cfg](const ConfigEntry& e) { cfg.seeds = detail::to_counts(e); }},
      {"run.output_dir", [&cfg](const ConfigEntry& e) { cfg.output_dir = e.value; }},
      {"run.noise_scale", real(cfg.noise_scale)},
      {"diagnostics.bias_states", count(cfg.bias.n_states)},
      {"diagnostics.bias_rollouts", count(cfg.bias.n_rollouts)},
      {"diagnostics.bias_horizon", count(cfg.bias.horizon)},
      {"diagnostics.best_return", real(cfg.best_return)},
  };
  for (const auto& e : entries) {
    const auto it = setters.find(e.section + "." + e.key);
    if (it == setters.end()) throw ConfigError(e.where + ": unknown key '" + e.key + "' in [" + e.section + "]");
    it->second(e);
  }
  cfg.bias.gamma = cfg.agent.gamma;
}

inline RunConfig parse_run_config(std::istream& in, const std::string& source = "<config>",
                                  const std::filesystem::path& base_dir = ".") {
  RunConfig cfg;
  apply_config_entries(cfg, detail::parse_ini(in, source), base_dir);
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_run_config(in, path, std::filesystem::path(path).parent_path());
}

/// Applies "section.key=value" overrides after the file has been read.
inline void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  std::vector<detail::ConfigEntry> entries;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("override '" + o + "': expected section.key=value");
    entries.push_back({detail::trim(o.substr(0, dot)), detail::trim(o.substr(dot + 1, eq - dot - 1)),
                       detail::trim(o.substr(eq + 1)), "--set " + o});
  }
  apply_config_entries(cfg, entries, ".");
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

/// Fully resolved config, every key spelled out; parses back to the same config.
inline std::string format_run_config(const RunConfig& c) {
  const auto& a = c.agent;
  std::ostringstream os;
  auto r = [](double v) { return fmt_double(v); };
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "[agent]\n"
     << "gamma = " << r(a.gamma) << '\n'
     << "replay_ratio = " << a.replay_ratio << '\n'
     << "policy_delay = " << a.policy_delay << '\n'
     << "batch_size = " << a.batch_size << '\n'
     << "tau = " << r(a.tau) << '\n'
     << "target_entropy = " << (a.target_entropy ? r(*a.target_entropy) : std::string("auto")) << '\n'
     << "critic_lr = " << r(a.critic_lr) << '\n'
     << "actor_lr = " << r(a.actor_lr) << '\n'
     << "alpha_lr = " << r(a.alpha_lr) << '\n'
     << "init_alpha = " << r(a.init_alpha) << '\n'
     << "warmup_steps = " << a.warmup_steps << '\n'
     << "buffer_capacity = " << a.buffer_capacity << '\n'
     << "critic_hidden = " << detail::join(a.critic_hidden) << '\n'
     << "critic_layer_norm = " << b(a.critic_layer_norm) << '\n'
     << "actor_hidden = " << detail::join(a.actor_hidden) << '\n'
     << "actor_layer_norm = " << b(a.actor_layer_norm) << '\n'
     << "hidden_activation = " << detail::activation_name(a.hidden_activation) << '\n'
     << "critic_zero_head = " << b(a.critic_zero_head) << '\n'
     << "critic_mode = " << to_string(a.critic_mode) << '\n'
     << "critic_subnets = " << a.critic_subnets << '\n'
     << "critic_sparsity = " << r(a.critic_sparsity) << '\n'
     << "actor_mode = " << to_string(a.actor_mode) << '\n'
     << "actor_subnets = " << a.actor_subnets << '\n'
     << "actor_sparsity = " << r(a.actor_sparsity) << '\n'
     << "infinity_q_samples = " << a.infinity_q_samples << '\n'
     << "entropy_off = " << b(a.entropy_off) << '\n'
     << "\n[run]\n"
     << "maze_config = " << c.maze_config << '\n'
     << "total_env_steps = " << c.total_env_steps << '\n'
     << "eval_interval = " << c.eval_interval << '\n'
     << "eval_episodes = " << c.eval_episodes << '\n'
     << "seeds =";
  for (auto s : c.seeds) os << ' ' << s;
  os << '\n'
     << "output_dir = " << c.output_dir << '\n'
     << "noise_scale = " << r(c.noise_scale) << '\n'
     << "\n[diagnostics]\n"
     << "bias_states = " << c.bias.n_states << '\n'
     << "bias_rollouts = " << c.bias.n_rollouts << '\n'
     << "bias_horizon = " << c.bias.horizon << '\n'
     << "best_return = " << r(c.best_return) << '\n';
  return os.str();
}

}  // namespace omnet
