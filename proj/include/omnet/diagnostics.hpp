#pragma once

// Measurement apparatus: visitation grids and heatmaps, trajectory records,
// Monte Carlo value-bias estimation, normalized scores and FLOP accounting.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnet/maze.hpp"
#include "omnet/sac.hpp"
#include "omnet/trainer.hpp"

namespace omnet {

// --- visitation ------------------------------------------------------------

class VisitationGrid {
 public:
  static constexpr std::size_t kDefaultResolution = 30;

  explicit VisitationGrid(std::size_t resolution = kDefaultResolution)
      : resolution_(resolution), counts_(resolution * resolution, 0) {
    if (resolution == 0) throw std::invalid_argument("VisitationGrid: resolution must be positive");
  }

  std::size_t resolution() const noexcept { return resolution_; }
  std::uint64_t total() const noexcept { return total_; }

  /// Cell (column, row) for a position; column follows x, row follows y.
  std::pair<std::size_t, std::size_t> cell_of(Vec2 p) const {
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0))
      throw std::out_of_range("VisitationGrid: position outside the unit square");
    const auto r = static_cast<double>(resolution_);
    auto idx = [&](double v) {
      return std::min(static_cast<std::size_t>(std::floor(v * r)), resolution_ - 1);
    };
    return {idx(p.x), idx(p.y)};
  }

  void record(Vec2 p) {
    const auto [cx, cy] = cell_of(p);
    ++counts_[cy * resolution_ + cx];
    ++total_;
  }

  std::uint64_t count(std::size_t cx, std::size_t cy) const { return counts_.at(cy * resolution_ + cx); }

  std::size_t covered_cells() const {
    return static_cast<std::size_t>(std::count_if(counts_.begin(), counts_.end(), [](auto c) { return c > 0; }));
  }

  std::uint64_t max_count() const { return *std::max_element(counts_.begin(), counts_.end()); }

  VisitationGrid& operator+=(const VisitationGrid& o) {
    if (o.resolution_ != resolution_) throw std::invalid_argument("VisitationGrid: resolution mismatch");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += o.counts_[k];
    total_ += o.total_;
    return *this;
  }

 private:
  std::size_t resolution_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

inline VisitationGrid& record_visit(VisitationGrid& grid, Vec2 position) {
  grid.record(position);
  return grid;
}

/// Plain-text PGM (P2). White background; visited cells get a log-scaled,
/// max-normalized gray in [0, 220]. The top image row is the top of the maze.
inline std::string render_heatmap(const VisitationGrid& grid, std::size_t cell_pixels = 8) {
  if (cell_pixels == 0) throw std::invalid_argument("render_heatmap: cell size must be positive");
  const auto res = grid.resolution();
  const auto side = res * cell_pixels;
  const double log_max = std::log1p(static_cast<double>(grid.max_count()));
  std::ostringstream os;
  os << "P2\n" << side << ' ' << side << "\n255\n";
  for (std::size_t py = 0; py < side; ++py) {
    const auto cy = res - 1 - py / cell_pixels;
    for (std::size_t px = 0; px < side; ++px) {
      const auto c = grid.count(px / cell_pixels, cy);
      int gray = 255;
      if (c > 0) gray = static_cast<int>(std::lround(220.0 * (1.0 - std::log1p(static_cast<double>(c)) / log_max)));
      os << gray << (px + 1 == side ? '\n' : ' ');
    }
  }
  return os.str();
}

// --- text formatting -------------------------------------------------------

/// Shortest round-trip decimal for a double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// One line per episode: stamp, episode, subnet, return, success, positions.
inline std::string format_trajectory(const EpisodeLog& e) {
  std::ostringstream os;
  os << "grad_steps=" << e.grad_steps << " episode=" << e.index << " subnet=" << e.subnet
     << " return=" << fmt_double(e.ret) << " success=" << (e.success ? 1 : 0) << " positions=";
  for (std::size_t k = 0; k < e.positions.size(); ++k)
    os << (k ? "," : "") << fmt_double(e.positions[k].x) << ',' << fmt_double(e.positions[k].y);
  return os.str();
}

// --- value bias ------------------------------------------------------------

struct ValueBiasSample {
  double estimate = 0.0;   // Q_theta(s, a)
  double mc_return = 0.0;  // Monte Carlo Q^pi(s, a)
};

struct ValueBiasReport {
  std::size_t env_step = 0;
  double mean_bias = 0.0;
  double std_error = 0.0;
  double mean_estimate = 0.0;
  double mean_return = 0.0;
  std::vector<ValueBiasSample> samples;
};

struct ValueBiasSettings {
  std::size_t n_states = 200;
  std::size_t n_rollouts = 10;
  std::size_t horizon = 200;
  double gamma = 0.99;
};

/// Environment interface for bias estimation: a copyable value whose copies
/// continue independently from the same state.
struct BiasStep {
  std::vector<double> obs;
  double reward = 0.0;
  bool end = false;  // terminal or truncated
};

/// Maze adapter for estimate_value_bias.
class MazeProbe {
 public:
  explicit MazeProbe(MazeEnv env) : env_(std::move(env)) {}
  std::vector<double> reset(Rng& rng) {
    const auto o = env_.reset(rng);
    return {o.x, o.y};
  }
  BiasStep step(std::span<const double> a) {
    const auto r = env_.step({a[0], a[1]});
    return {{r.observation.x, r.observation.y}, r.reward, r.done || r.truncated};
  }

 private:
  MazeEnv env_;
};

/// SacAgent adapter: the on-policy behaviour (one actor subnetwork per
/// episode, stochastic actions) and the mean estimate over all critic subnets.
class AgentProbe {
 public:
  explicit AgentProbe(const SacAgent& agent) : agent_(&agent) {}

  void begin_episode(Rng& rng) {
    subnet_ = {};
    const auto& cfg = agent_->config();
    if (cfg.actor_mode == ActorMode::omnet) subnet_.index = rng.index(agent_->actor_subnet_count());
    if (cfg.actor_mode == ActorMode::infinity)
      subnet_.mask = infinity_mask(agent_->actor_coverage(), cfg.actor_sparsity, rng);
  }

  std::vector<double> action(std::span<const double> obs, Rng& rng) const {
    return agent_->act(obs, subnet_, false, rng);
  }

  double q_estimate(std::span<const double> obs, std::span<const double> a, Rng& rng) const {
    const Matrix s = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
    const Matrix act = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
    return agent_->q_mean(s, act, rng)[0];
  }

 private:
  const SacAgent* agent_;
  EpisodeSubnet subnet_;
};

/// E_pi[Q_theta(s,a) - Q^pi(s,a)] over (s, a) pairs drawn from fresh on-policy
/// episodes (one uniformly chosen step per episode). Q^pi is the mean
/// discounted return of `n_rollouts` continuations truncated at `horizon`.
template <class Probe, class Env>
ValueBiasReport estimate_value_bias(Probe probe, const Env& prototype, const ValueBiasSettings& settings, Rng& rng) {
  if (settings.horizon < 1) throw std::invalid_argument("estimate_value_bias: horizon must be >= 1");
  if (settings.n_states < 1 || settings.n_rollouts < 1)
    throw std::invalid_argument("estimate_value_bias: need at least one state and one rollout");
  ValueBiasReport report;
  for (std::size_t k = 0; k < settings.n_states; ++k) {
    probe.begin_episode(rng);
    Env env = prototype;
    auto obs = env.reset(rng);
    struct Visit {
      Env before;
      std::vector<double> obs;
      std::vector<double> action;
    };
    std::vector<Visit> visits;
    for (std::size_t t = 0; t < settings.horizon; ++t) {
      auto a = probe.action(obs, rng);
      visits.push_back({env, obs, a});
      const auto r = env.step(a);
      if (r.end) break;
      obs = r.obs;
    }
    const auto& pick = visits[rng.index(visits.size())];
    double mc = 0.0;
    for (std::size_t m = 0; m < settings.n_rollouts; ++m) {
      Env roll = pick.before;
      auto a = pick.action;
      double ret = 0.0, discount = 1.0;
      for (std::size_t t = 0; t < settings.horizon; ++t) {
        const auto r = roll.step(a);
        ret += discount * r.reward;
        discount *= settings.gamma;
        if (r.end) break;
        a = probe.action(r.obs, rng);
      }
      mc += ret;
    }
    mc /= static_cast<double>(settings.n_rollouts);
    report.samples.push_back({probe.q_estimate(pick.obs, pick.action, rng), mc});
  }
  const auto n = static_cast<double>(report.samples.size());
  for (const auto& s : report.samples) {
    report.mean_estimate += s.estimate / n;
    report.mean_return += s.mc_return / n;
  }
  double sum = 0.0;
  for (const auto& s : report.samples) sum += s.estimate - s.mc_return;
  report.mean_bias = sum / n;
  double ss = 0.0;
  for (const auto& s : report.samples) {
    const double d = s.estimate - s.mc_return - report.mean_bias;
    ss += d * d;
  }
  report.std_error = n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  return report;
}

inline ValueBiasReport estimate_value_bias(const SacAgent& agent, const MazeEnv& env,
                                           const ValueBiasSettings& settings, Rng& rng) {
  return estimate_value_bias(AgentProbe(agent), MazeProbe(env), settings, rng);
}

// --- scores ----------------------------------------------------------------

/// Mean over the final sixth (at least one) of a run's evaluation returns.
inline double final_window_mean(std::span<const double> returns) {
  if (returns.empty()) throw std::invalid_argument("final_window_mean: no returns");
  const std::size_t window = std::max<std::size_t>(1, (returns.size() + 5) / 6);
  double sum = 0.0;
  for (std::size_t k = returns.size() - window; k < returns.size(); ++k) sum += returns[k];
  return sum / static_cast<double>(window);
}

/// Mean over runs of final-window average return divided by the best return.
inline double normalized_score(const std::vector<std::vector<double>>& returns_per_run, double best) {
  if (!(best > 0.0)) throw std::invalid_argument("normalized_score: best return must be positive");
  if (returns_per_run.empty()) throw std::invalid_argument("normalized_score: no runs");
  double sum = 0.0;
  for (const auto& run : returns_per_run) sum += final_window_mean(run) / best;
  return sum / static_cast<double>(returns_per_run.size());
}

// --- FLOPs -----------------------------------------------------------------

/// Per-sample forward FLOPs: 2*in*out + out per linear layer, 7*out per layer
/// norm, out per non-identity activation.
inline double forward_flops(const Architecture& arch) {
  double f = 0.0;
  for (const auto& s : arch.specs()) {
    const auto in = static_cast<double>(s.input_dim), out = static_cast<double>(s.output_dim);
    f += 2.0 * in * out + out;
    if (s.layer_norm) f += 7.0 * out;
    if (s.activation != Activation::identity) f += out;
  }
  return f;
}

struct FlopReport {
  double critic_forward = 0.0;  // one critic network, one sample
  double actor_forward = 0.0;
  double critic_update = 0.0;   // critic networks only: target estimates + forward/backward
  double target_policy = 0.0;   // next-action sampling inside one critic update
  double actor_update = 0.0;    // actor forward/backward + every averaged critic estimate
  double temperature_update = 0.0;
  double critic_per_env_step = 0.0;
  double per_env_step = 0.0;
  double baseline_per_env_step = 0.0;  // 10-critic ensemble at the same replay ratio
  double normalized = 0.0;             // per_env_step / baseline_per_env_step
};

/// Dense-equivalent analytic FLOPs; backward counted as twice the forward.
inline FlopReport estimate_flops(const SacConfig& cfg, std::size_t obs_dim, std::size_t act_dim) {
  cfg.validate();
  const Architecture critic(
      mlp_specs(obs_dim + act_dim, cfg.critic_hidden, 1, cfg.hidden_activation, cfg.critic_layer_norm));
  const Architecture actor(mlp_specs(obs_dim, cfg.actor_hidden, 2 * act_dim, cfg.hidden_activation,
                                     cfg.actor_layer_norm));
  const double B = static_cast<double>(cfg.batch_size);
  FlopReport r;
  r.critic_forward = forward_flops(critic);
  r.actor_forward = forward_flops(actor);
  const double fc = r.critic_forward, fa = r.actor_forward;

  double target_estimates = 2.0, trained = 1.0, averaged = 1.0;
  switch (cfg.critic_mode) {
    case CriticMode::omnet:
      target_estimates = cfg.critic_subnets >= 2 ? 2.0 : 1.0;
      averaged = static_cast<double>(cfg.critic_subnets);
      break;
    case CriticMode::infinity:
      averaged = static_cast<double>(cfg.infinity_q_samples);
      break;
    case CriticMode::dense_double:
      trained = 2.0;
      averaged = 2.0;
      break;
    case CriticMode::dense_single:
      target_estimates = 1.0;
      break;
  }
  r.critic_update = B * (target_estimates * fc + trained * 3.0 * fc);
  r.target_policy = B * fa;
  r.actor_update = B * (3.0 * fa + averaged * 3.0 * fc);
  r.temperature_update = cfg.entropy_off ? 0.0 : 3.0 * B;
  const double G = static_cast<double>(cfg.replay_ratio);
  const double delay = static_cast<double>(cfg.policy_delay);
  r.critic_per_env_step = G * r.critic_update;
  r.per_env_step = G * (r.critic_update + r.target_policy) + (r.actor_update + r.temperature_update) / delay;
  constexpr double kEnsemble = 10.0;
  r.baseline_per_env_step = G * (B * (2.0 * fc + kEnsemble * 3.0 * fc) + B * fa) +
                            (B * (3.0 * fa + kEnsemble * 3.0 * fc) + 3.0 * B) / delay;
  r.normalized = r.per_env_step / r.baseline_per_env_step;
  return r;
}

}  // namespace omnet
