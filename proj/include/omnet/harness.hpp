#pragma once

// Experiment commands behind the command-line tool. Each command trains the
// configured seed set into isolated run directories and writes CSV tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "omnet/config.hpp"
#include "omnet/diagnostics.hpp"
#include "omnet/trainer.hpp"

namespace omnet {

namespace fs = std::filesystem;

class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw RunError("cannot create output directory '" + dir.string() + "'");
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw RunError("cannot write '" + path.string() + "'");
}

inline void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file(path, std::string(bytes.begin(), bytes.end()));
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline const char* flag(bool b) { return b ? "1" : "0"; }

}  // namespace detail

// --- CSV tables --------------------------------------------------------------

inline std::string train_log_csv(const std::vector<StepLog>& steps) {
  std::ostringstream os;
  os << "env_step,episode,x,y,reward,done,truncated,warmup,critic_updates,critic_loss,actor_updates,actor_loss,alpha,"
        "touched\n";
  for (const auto& s : steps)
    os << s.env_step << ',' << s.episode << ',' << fmt_double(s.position.x) << ',' << fmt_double(s.position.y) << ','
       << fmt_double(s.reward) << ',' << detail::flag(s.done) << ',' << detail::flag(s.truncated) << ','
       << detail::flag(s.warmup) << ',' << s.critic_updates << ',' << fmt_double(s.critic_loss) << ','
       << s.actor_updates << ',' << fmt_double(s.actor_loss) << ',' << fmt_double(s.alpha) << ',' << s.touched << '\n';
  return os.str();
}

inline std::string episodes_csv(const std::vector<EpisodeLog>& episodes) {
  std::ostringstream os;
  os << "episode,subnet,start_env_step,length,return,success,warmup,grad_steps\n";
  for (const auto& e : episodes)
    os << e.index << ',' << e.subnet << ',' << e.start_env_step << ',' << (e.positions.size() - 1) << ','
       << fmt_double(e.ret) << ',' << detail::flag(e.success) << ',' << detail::flag(e.warmup) << ',' << e.grad_steps
       << '\n';
  return os.str();
}

/// `subnets` per-subnetwork columns follow the fixed ones (0 unless omnet actor).
inline std::string eval_csv(const std::vector<EvalRecord>& evals, std::size_t subnets) {
  std::ostringstream os;
  os << "env_step,grad_steps,mean_return,min_return,max_return,success_rate";
  for (std::size_t k = 0; k < subnets; ++k) os << ",subnet_" << k;
  os << '\n';
  for (const auto& e : evals) {
    os << e.env_step << ',' << e.grad_steps << ',' << fmt_double(e.mean) << ',' << fmt_double(e.min) << ','
       << fmt_double(e.max) << ',' << fmt_double(e.success_rate);
    for (std::size_t k = 0; k < subnets; ++k) os << ',' << (k < e.per_subnet.size() ? fmt_double(e.per_subnet[k]) : "");
    os << '\n';
  }
  return os.str();
}

inline std::string value_bias_csv(const std::vector<ValueBiasReport>& rows) {
  std::ostringstream os;
  os << "env_step,mean_bias,std_error,mean_estimate,mean_return,samples\n";
  for (const auto& r : rows)
    os << r.env_step << ',' << fmt_double(r.mean_bias) << ',' << fmt_double(r.std_error) << ','
       << fmt_double(r.mean_estimate) << ',' << fmt_double(r.mean_return) << ',' << r.samples.size() << '\n';
  return os.str();
}

// --- single run --------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  fs::path dir;
  std::vector<EvalRecord> evals;
  std::vector<EpisodeLog> episodes;
  std::vector<ValueBiasReport> bias;

  std::vector<double> eval_means() const {
    std::vector<double> out;
    for (const auto& e : evals) out.push_back(e.mean);
    return out;
  }
  double final_mean() const {
    const auto m = eval_means();
    return m.empty() ? 0.0 : final_window_mean(m);
  }
  double best_mean() const {
    double best = 0.0;
    for (const auto& e : evals) best = std::max(best, e.mean);
    return best;
  }
  /// Environment step of the first successful training episode, 0 if none.
  std::size_t first_success() const {
    for (const auto& e : episodes)
      if (e.success) return e.start_env_step + e.positions.size() - 2;
    return 0;
  }
};

/// Config as copied into an output directory: the maze beside it, output in place.
inline std::string local_config_text(RunConfig cfg) {
  cfg.maze_config = "maze.cfg";
  cfg.output_dir = ".";
  return format_run_config(cfg);
}

inline std::string run_dir_config_text(RunConfig cfg, std::uint64_t seed) {
  cfg.seeds = {seed};
  return local_config_text(std::move(cfg));
}

/// Trains one seed into `dir`. `pauses` (ascending env steps) invoke
/// `on_pause` once training has reached that step.
inline SeedResult train_seed(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir,
                             std::span<const std::size_t> pauses = {},
                             const std::function<void(Trainer&)>& on_pause = {}) {
  detail::ensure_dir(dir);
  const auto config_text = run_dir_config_text(cfg, seed);
  detail::write_file(dir / "config.ini", config_text);
  detail::write_file(dir / "maze.cfg", format_maze_config(cfg.maze));

  Trainer trainer(cfg.agent, cfg.maze, cfg.settings(), seed);
  for (auto p : pauses) {
    trainer.run(p);
    if (on_pause) on_pause(trainer);
  }
  trainer.run(cfg.total_env_steps);

  const std::size_t subnets = cfg.agent.actor_mode == ActorMode::omnet ? cfg.agent.actor_subnets : 0;
  detail::write_file(dir / "train_log.csv", train_log_csv(trainer.steps()));
  detail::write_file(dir / "episodes.csv", episodes_csv(trainer.episodes()));
  detail::write_file(dir / "eval.csv", eval_csv(trainer.evals(), subnets));
  std::string traj;
  for (const auto& e : trainer.episodes()) traj += format_trajectory(e) + "\n";
  detail::write_file(dir / "trajectories.txt", traj);
  detail::write_file(dir / "checkpoint.bin", trainer.checkpoint(config_text));

  SeedResult r;
  r.seed = seed;
  r.dir = dir;
  r.evals = trainer.evals();
  r.episodes = trainer.episodes();
  return r;
}

inline std::string seed_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

inline std::string summary_csv(const std::vector<SeedResult>& results) {
  std::ostringstream os;
  os << "seed,final_mean_return,best_mean_return,first_success_env_step\n";
  for (const auto& r : results)
    os << r.seed << ',' << fmt_double(r.final_mean()) << ',' << fmt_double(r.best_mean()) << ',' << r.first_success()
       << '\n';
  return os.str();
}

inline std::vector<SeedResult> train_seed_set(const RunConfig& cfg, const fs::path& dir, std::ostream* progress) {
  detail::ensure_dir(dir);
  detail::write_file(dir / "config.ini", local_config_text(cfg));
  detail::write_file(dir / "maze.cfg", format_maze_config(cfg.maze));
  std::vector<SeedResult> results;
  for (auto seed : cfg.seeds) {
    results.push_back(train_seed(cfg, seed, dir / seed_dir_name(seed)));
    if (progress)
      *progress << dir.string() << " seed " << seed << ": final mean return " << fmt_double(results.back().final_mean())
                << '\n';
  }
  detail::write_file(dir / "summary.csv", summary_csv(results));
  return results;
}

inline double normalized_score(const std::vector<SeedResult>& results, double best) {
  std::vector<std::vector<double>> curves;
  for (const auto& r : results) curves.push_back(r.eval_means());
  return normalized_score(curves, best);
}

inline double mean_final_return(const std::vector<SeedResult>& results) {
  double s = 0.0;
  for (const auto& r : results) s += r.final_mean();
  return s / static_cast<double>(results.size());
}

// --- commands ----------------------------------------------------------------

inline std::vector<SeedResult> cmd_train(const RunConfig& cfg, std::ostream* progress = nullptr) {
  return train_seed_set(cfg, cfg.output_dir, progress);
}

/// Re-evaluates a checkpoint with the config stored inside it.
inline EvalRecord cmd_eval(const std::string& checkpoint_path, std::size_t episodes) {
  const auto bytes = detail::read_file(checkpoint_path);
  const std::vector<std::uint8_t> data(bytes.begin(), bytes.end());
  ByteReader r(data);
  r.expect_tag("OMCK");
  if (r.u32() != Trainer::kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
  const auto config_text = r.str();
  const auto seed = r.u64();
  std::istringstream in(config_text);
  auto cfg = parse_run_config(in, checkpoint_path + " (embedded config)", fs::path(checkpoint_path).parent_path());
  if (episodes) cfg.eval_episodes = episodes;
  Trainer trainer(cfg.agent, cfg.maze, cfg.settings(), seed);
  trainer.restore(data);
  return trainer.evaluate();
}

enum class AblationAxis { sparsity, subnet_count, infinity };

inline AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "sparsity") return AblationAxis::sparsity;
  if (s == "subnet_count") return AblationAxis::subnet_count;
  if (s == "infinity") return AblationAxis::infinity;
  throw ConfigError("unknown ablation axis '" + s + "' (sparsity, subnet_count, infinity)");
}

inline std::vector<std::string> default_ablation_values(AblationAxis axis) {
  if (axis == AblationAxis::subnet_count) return {"1", "2", "4", "5", "8", "inf"};
  return {"0.1", "0.3", "0.5", "0.7", "0.9"};
}

inline bool is_infinite_token(const std::string& v) { return v == "inf" || v == "infinity" || v == "∞"; }

/// Config for one ablation value; throws ConfigError when the value does not fit the axis.
inline RunConfig ablation_config(RunConfig cfg, AblationAxis axis, const std::string& value) {
  auto bad = [&] { return ConfigError("ablation value '" + value + "' is not valid for this axis"); };
  if (axis == AblationAxis::subnet_count) {
    if (is_infinite_token(value)) {
      cfg.agent.critic_mode = CriticMode::infinity;
      cfg.agent.actor_mode = ActorMode::infinity;
    } else {
      if (value.empty() || !std::all_of(value.begin(), value.end(), [](char c) { return c >= '0' && c <= '9'; }))
        throw bad();
      const auto n = std::stoull(value);
      if (n < 1) throw bad();
      cfg.agent.critic_mode = CriticMode::omnet;
      cfg.agent.actor_mode = ActorMode::omnet;
      cfg.agent.critic_subnets = cfg.agent.actor_subnets = n;
    }
  } else {
    double s = 0.0;
    try {
      s = detail::parse_scalar(value, 0);
    } catch (const std::invalid_argument&) {
      throw bad();
    }
    if (!(s >= 0.0 && s < 1.0)) throw bad();
    cfg.agent.critic_sparsity = cfg.agent.actor_sparsity = s;
    if (axis == AblationAxis::infinity) {
      cfg.agent.critic_mode = CriticMode::infinity;
      cfg.agent.actor_mode = ActorMode::infinity;
    }
  }
  cfg.validate();
  return cfg;
}

struct ScoreRow {
  std::string value;
  double normalized_score = 0.0;
  double mean_final_return = 0.0;
  std::size_t runs = 0;
};

inline std::string score_table_csv(const std::string& value_column, const std::vector<ScoreRow>& rows) {
  std::ostringstream os;
  os << value_column << ",normalized_score,mean_final_return,runs\n";
  for (const auto& r : rows)
    os << r.value << ',' << fmt_double(r.normalized_score) << ',' << fmt_double(r.mean_final_return) << ',' << r.runs
       << '\n';
  return os.str();
}

inline std::vector<ScoreRow> cmd_ablate(const RunConfig& cfg, const std::string& axis_name,
                                        const std::vector<std::string>& values, std::ostream* progress = nullptr) {
  const auto axis = parse_ablation_axis(axis_name);
  if (values.empty()) throw ConfigError("ablate: empty value list");
  std::vector<RunConfig> configs;
  for (const auto& v : values) configs.push_back(ablation_config(cfg, axis, v));
  const fs::path root = fs::path(cfg.output_dir) / ("ablate_" + axis_name);
  detail::ensure_dir(root);
  std::vector<ScoreRow> rows;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto results = train_seed_set(configs[k], root / ("value_" + values[k]), progress);
    rows.push_back({values[k], normalized_score(results, cfg.best_return), mean_final_return(results), results.size()});
  }
  detail::write_file(root / "scores.csv", score_table_csv(axis_name, rows));
  return rows;
}

struct VisitationRow {
  std::string variant;
  std::size_t budget = 0;
  std::size_t covered_cells = 0;
  std::size_t total_visits = 0;
  std::size_t max_count = 0;
};

struct VisitationResult {
  std::vector<VisitationRow> rows;
  std::vector<VisitationGrid> grids;  // parallel to rows
};

/// Post-warm-up visitation grids for the first `budget` steps, summed over seeds.
inline std::vector<VisitationGrid> visitation_grids(const RunConfig& cfg, std::span<const std::size_t> budgets) {
  std::vector<VisitationGrid> sums(budgets.size());
  const std::size_t horizon = budgets.empty() ? 0 : *std::max_element(budgets.begin(), budgets.end());
  const std::size_t warmup = cfg.agent.warmup_steps;
  for (auto seed : cfg.seeds) {
    Trainer trainer(cfg.agent, cfg.maze, cfg.settings(), seed);
    TrainHooks hooks;
    hooks.on_step = [&](const StepLog& s) {
      if (s.env_step <= warmup) return;
      const auto t = s.env_step - warmup;
      for (std::size_t b = 0; b < budgets.size(); ++b)
        if (t <= budgets[b]) sums[b].record(s.position);
    };
    trainer.run(warmup + horizon, hooks);
  }
  return sums;
}

inline VisitationResult cmd_visitation(const RunConfig& cfg, const std::vector<std::size_t>& budgets,
                                       std::ostream* progress = nullptr) {
  const fs::path root = fs::path(cfg.output_dir) / "visitation";
  detail::ensure_dir(root);
  VisitationResult out;
  const std::pair<const char*, ActorMode> variants[] = {{"omnet_actor", ActorMode::omnet},
                                                         {"dense_actor", ActorMode::dense}};
  for (const auto& [name, mode] : variants) {
    RunConfig v = cfg;
    v.agent.actor_mode = mode;
    v.agent.critic_mode = CriticMode::omnet;
    v.validate();
    const auto grids = visitation_grids(v, budgets);
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      const auto& g = grids[b];
      std::size_t total = 0;
      for (std::size_t i = 0; i < g.resolution(); ++i)
        for (std::size_t j = 0; j < g.resolution(); ++j) total += g.count(i, j);
      out.rows.push_back({name, budgets[b], g.covered_cells(), total, g.max_count()});
      out.grids.push_back(g);
      detail::write_file(root / (std::string(name) + "_" + std::to_string(budgets[b]) + ".pgm"), render_heatmap(g));
      if (progress)
        *progress << name << " budget " << budgets[b] << ": " << g.covered_cells() << " cells covered\n";
    }
  }
  std::ostringstream os;
  os << "variant,budget,covered_cells,total_visits,max_count\n";
  for (const auto& r : out.rows)
    os << r.variant << ',' << r.budget << ',' << r.covered_cells << ',' << r.total_visits << ',' << r.max_count << '\n';
  detail::write_file(root / "coverage.csv", os.str());
  return out;
}

/// Per-seed bias curves; the aggregate curve averages seeds and pools standard errors.
inline std::vector<ValueBiasReport> cmd_valuebias(const RunConfig& cfg, const std::vector<std::size_t>& schedule,
                                                  std::ostream* progress = nullptr, std::ostream* warnings = nullptr) {
  if (schedule.empty()) {
    if (warnings) *warnings << "warning: empty value-bias schedule, no curve written\n";
    return {};
  }
  if (!std::is_sorted(schedule.begin(), schedule.end()) ||
      std::adjacent_find(schedule.begin(), schedule.end()) != schedule.end())
    throw ConfigError("valuebias: schedule must be strictly increasing");
  if (schedule.back() > cfg.total_env_steps)
    throw ConfigError("valuebias: schedule step beyond run.total_env_steps");
  const fs::path root = fs::path(cfg.output_dir) / "valuebias";
  detail::ensure_dir(root);
  detail::write_file(root / "config.ini", local_config_text(cfg));
  detail::write_file(root / "maze.cfg", format_maze_config(cfg.maze));
  std::vector<ValueBiasReport> total(schedule.size());
  for (auto seed : cfg.seeds) {
    Rng rng(derive_seed(seed, 5));
    std::vector<ValueBiasReport> curve;
    const auto dir = root / seed_dir_name(seed);
    train_seed(cfg, seed, dir, schedule, [&](Trainer& t) {
      auto rep = estimate_value_bias(t.agent(), t.env(), cfg.bias, rng);
      rep.env_step = t.env_step();
      curve.push_back(std::move(rep));
    });
    detail::write_file(dir / "value_bias.csv", value_bias_csv(curve));
    for (std::size_t k = 0; k < curve.size(); ++k) {
      total[k].env_step = curve[k].env_step;
      total[k].mean_bias += curve[k].mean_bias;
      total[k].std_error += curve[k].std_error * curve[k].std_error;
      total[k].mean_estimate += curve[k].mean_estimate;
      total[k].mean_return += curve[k].mean_return;
      total[k].samples.insert(total[k].samples.end(), curve[k].samples.begin(), curve[k].samples.end());
    }
    if (progress)
      *progress << "seed " << seed << ": bias at step " << curve.back().env_step << " = "
                << fmt_double(curve.back().mean_bias) << '\n';
  }
  const auto n = static_cast<double>(cfg.seeds.size());
  for (auto& r : total) {
    r.mean_bias /= n;
    r.std_error = std::sqrt(r.std_error) / n;
    r.mean_estimate /= n;
    r.mean_return /= n;
  }
  detail::write_file(root / "value_bias.csv", value_bias_csv(total));
  return total;
}

inline std::vector<ScoreRow> cmd_noise_sweep(const RunConfig& cfg, const std::vector<double>& sigmas,
                                             std::ostream* progress = nullptr) {
  if (sigmas.empty()) throw ConfigError("noise-sweep: empty noise list");
  for (double s : sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("noise-sweep: noise scale must be finite and >= 0");
  const fs::path root = fs::path(cfg.output_dir) / "noise_sweep";
  detail::ensure_dir(root);
  std::vector<ScoreRow> rows;
  for (double s : sigmas) {
    RunConfig v = cfg;
    v.noise_scale = s;
    const auto results = train_seed_set(v, root / ("sigma_" + fmt_double(s)), progress);
    rows.push_back({fmt_double(s), normalized_score(results, cfg.best_return), mean_final_return(results),
                    results.size()});
  }
  detail::write_file(root / "scores.csv", score_table_csv("noise_scale", rows));
  return rows;
}

}  // namespace omnet
