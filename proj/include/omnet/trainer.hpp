#pragma once

// Maze training loop: per-episode actor subnetworks, G critic updates per env
// step, delayed actor/temperature updates, periodic deterministic evaluation,
// and byte-exact checkpoint/resume.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "omnet/maze.hpp"
#include "omnet/sac.hpp"
#include "omnet/serialize.hpp"

namespace omnet {

struct RunSettings {
  std::size_t eval_interval = 100;
  std::size_t eval_episodes = 10;
  double noise_scale = 0.0;
};

struct StepLog {
  std::size_t env_step = 0;
  std::size_t episode = 0;
  Vec2 position;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;
  bool warmup = false;
  std::size_t critic_updates = 0;
  double critic_loss = 0.0;  // mean over this step's critic updates
  std::size_t actor_updates = 0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  std::size_t touched = 0;  // parameter indices written by this step's updates
};

struct EpisodeLog {
  std::size_t index = 0;
  long subnet = -1;  // actor subnetwork, -1 when not indexed
  std::size_t start_env_step = 0;
  std::size_t grad_steps = 0;  // gradient steps taken when the episode ended
  std::vector<Vec2> positions;
  double ret = 0.0;
  bool success = false;
  bool warmup = false;  // started during uniform-random warm-up
};

struct EvalRecord {
  std::size_t env_step = 0;
  std::size_t grad_steps = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double success_rate = 0.0;
  std::vector<double> per_subnet;  // omnet actor: mean return of each subnetwork
};

struct UpdateEvent {
  enum class Kind { critic, actor };
  Kind kind = Kind::critic;
  std::size_t env_step = 0;
  const CriticUpdateInfo* critic = nullptr;
  const ActorUpdateInfo* actor = nullptr;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const UpdateEvent&, const SacAgent&)> on_update;
  std::function<void(const EpisodeLog&)> on_episode;
};

/// Deterministic-policy evaluation on a copy of the environment. In omnet
/// actor mode every subnetwork runs `episodes` episodes and the headline mean
/// is the mean of the per-subnetwork means.
inline EvalRecord evaluate_policy(const SacAgent& agent, const MazeEnv& prototype, std::size_t episodes, Rng& rng) {
  EvalRecord rec;
  const bool indexed = agent.config().actor_mode == ActorMode::omnet;
  const std::size_t subnets = indexed ? agent.actor_subnet_count() : 1;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t successes = 0, total = 0;
  double mean_sum = 0.0;
  for (std::size_t k = 0; k < subnets; ++k) {
    double sum = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
      MazeEnv env = prototype;
      Vec2 obs = env.reset(rng);
      EpisodeSubnet subnet = indexed ? agent.subnet_by_index(k) : EpisodeSubnet{};
      if (agent.config().actor_mode == ActorMode::infinity)
        subnet.mask = infinity_mask(agent.actor_coverage(), agent.config().actor_sparsity, rng);
      double ret = 0.0;
      bool success = false;
      for (;;) {
        const double o[2] = {obs.x, obs.y};
        const auto a = agent.act(o, subnet, true, rng);
        const auto res = env.step({a[0], a[1]});
        ret += res.reward;
        obs = res.observation;
        if (res.done || res.truncated) {
          success = res.done;
          break;
        }
      }
      sum += ret;
      lo = std::min(lo, ret);
      hi = std::max(hi, ret);
      successes += success ? 1 : 0;
      ++total;
    }
    const double m = episodes ? sum / static_cast<double>(episodes) : 0.0;
    if (indexed) rec.per_subnet.push_back(m);
    mean_sum += m;
  }
  rec.mean = mean_sum / static_cast<double>(subnets);
  rec.min = total ? lo : 0.0;
  rec.max = total ? hi : 0.0;
  rec.success_rate = total ? static_cast<double>(successes) / static_cast<double>(total) : 0.0;
  return rec;
}

class Trainer {
 public:
  static constexpr std::uint32_t kCheckpointVersion = 1;

  Trainer(SacConfig config, MazeConfig maze, RunSettings settings, std::uint64_t seed)
      : settings_(settings),
        seed_(seed),
        env_(std::move(maze), settings.noise_scale),
        agent_(std::move(config), MazeEnv::kObsDim, MazeEnv::kActDim, env_.action_bound(), derive_seed(seed, 1)),
        env_rng_(derive_seed(seed, 2)),
        warmup_rng_(derive_seed(seed, 3)),
        eval_rng_(derive_seed(seed, 4)) {
    if (settings_.eval_interval == 0) throw std::invalid_argument("eval_interval must be positive");
  }

  SacAgent& agent() noexcept { return agent_; }
  const SacAgent& agent() const noexcept { return agent_; }
  const MazeEnv& env() const noexcept { return env_; }
  const RunSettings& settings() const noexcept { return settings_; }
  std::size_t env_step() const noexcept { return env_step_; }
  std::size_t grad_steps() const noexcept { return grad_steps_; }

  const std::vector<StepLog>& steps() const noexcept { return steps_; }
  const std::vector<EpisodeLog>& episodes() const noexcept { return episodes_; }
  const std::vector<EvalRecord>& evals() const noexcept { return evals_; }
  const std::vector<double>& critic_losses() const noexcept { return critic_losses_; }
  const std::vector<double>& actor_losses() const noexcept { return actor_losses_; }

  /// Runs until `total_env_steps` environment steps have been taken.
  void run(std::size_t total_env_steps, const TrainHooks& hooks = {}) {
    while (env_step_ < total_env_steps) step(hooks);
  }

  void step(const TrainHooks& hooks = {}) {
    const auto& cfg = agent_.config();
    if (!episode_active_) begin_episode();
    ++env_step_;
    StepLog log;
    log.env_step = env_step_;
    log.episode = current_.index;
    log.warmup = env_step_ <= cfg.warmup_steps;

    const double o[2] = {obs_.x, obs_.y};
    const auto action = log.warmup ? agent_.random_action(warmup_rng_) : agent_.act(o, subnet_, false);
    const auto res = env_.step({action[0], action[1]});
    const double o_next[2] = {res.observation.x, res.observation.y};
    agent_.buffer().add(o, action, res.reward, o_next, res.done);
    current_.positions.push_back(env_.state().position);
    current_.ret += res.reward;
    log.position = env_.state().position;
    log.reward = res.reward;
    log.done = res.done;
    log.truncated = res.truncated;

    double loss_sum = 0.0;
    for (std::size_t g = 0; g < cfg.replay_ratio; ++g) {
      const auto batch = agent_.sample_batch();
      const auto info = agent_.critic_update(batch);
      ++grad_steps_;
      critic_losses_.push_back(info.loss);
      loss_sum += info.loss;
      log.touched += info.touched;
      ++log.critic_updates;
      if (hooks.on_update) hooks.on_update({UpdateEvent::Kind::critic, env_step_, &info, nullptr}, agent_);
    }
    log.critic_loss = loss_sum / static_cast<double>(cfg.replay_ratio);
    if (env_step_ % cfg.policy_delay == 0) {
      const auto batch = agent_.sample_batch();
      const auto info = agent_.actor_update(batch);
      agent_.temperature_update(info.log_prob);
      actor_losses_.push_back(info.loss);
      log.actor_loss = info.loss;
      log.touched += info.touched;
      ++log.actor_updates;
      if (hooks.on_update) hooks.on_update({UpdateEvent::Kind::actor, env_step_, nullptr, &info}, agent_);
    }
    log.alpha = agent_.alpha();

    obs_ = res.observation;
    if (res.done || res.truncated) {
      current_.success = res.done;
      current_.grad_steps = grad_steps_;
      episode_active_ = false;
      if (hooks.on_episode) hooks.on_episode(current_);
      episodes_.push_back(std::move(current_));
      current_ = {};
    }
    steps_.push_back(log);
    if (hooks.on_step) hooks.on_step(log);
    if (env_step_ % settings_.eval_interval == 0) evals_.push_back(evaluate());
  }

  EvalRecord evaluate() {
    auto rec = evaluate_policy(agent_, env_, settings_.eval_episodes, eval_rng_);
    rec.env_step = env_step_;
    rec.grad_steps = grad_steps_;
    return rec;
  }

  /// Complete resumable state; `config_text` is stored verbatim for provenance.
  std::vector<std::uint8_t> checkpoint(const std::string& config_text = {}) const {
    ByteWriter w;
    w.tag("OMCK");
    w.u32(kCheckpointVersion);
    w.str(config_text);
    w.u64(seed_);
    w.u64(env_step_);
    w.u64(grad_steps_);
    w.u64(episode_count_);
    agent_.write(w);
    const auto& st = env_.state();
    w.f64(st.position.x);
    w.f64(st.position.y);
    w.u64(static_cast<std::uint64_t>(st.step_count));
    w.f64(st.noise.x);
    w.f64(st.noise.y);
    w.u8(st.finished ? 1 : 0);
    w.u8(episode_active_ ? 1 : 0);
    w.f64(obs_.x);
    w.f64(obs_.y);
    w.u8(subnet_.index ? 1 : 0);
    w.u64(subnet_.index.value_or(0));
    w.u8(subnet_.mask ? 1 : 0);
    if (subnet_.mask) {
      w.u64(subnet_.mask->size());
      w.u64s(subnet_.mask->words());
    }
    w.u64(current_.index);
    w.u64(static_cast<std::uint64_t>(current_.subnet + 1));
    w.u64(current_.start_env_step);
    w.f64(current_.ret);
    w.u8(current_.warmup ? 1 : 0);
    w.u64(current_.positions.size());
    for (auto p : current_.positions) {
      w.f64(p.x);
      w.f64(p.y);
    }
    for (const auto* r : {&env_rng_, &warmup_rng_, &eval_rng_}) w.str(r->state());
    return w.take();
  }

  /// Restores a checkpoint into a trainer built from the same config and seed.
  void restore(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_tag("OMCK");
    if (r.u32() != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    (void)r.str();
    if (r.u64() != seed_) throw FormatError("checkpoint: seed differs");
    env_step_ = r.u64();
    grad_steps_ = r.u64();
    episode_count_ = r.u64();
    agent_.read(r);
    auto& st = env_.state();
    st.position = {r.f64(), r.f64()};
    st.step_count = static_cast<int>(r.u64());
    st.noise = {r.f64(), r.f64()};
    st.finished = r.u8() != 0;
    episode_active_ = r.u8() != 0;
    obs_ = {r.f64(), r.f64()};
    subnet_ = {};
    const bool has_index = r.u8() != 0;
    const auto index = r.u64();
    if (has_index) subnet_.index = index;
    if (r.u8() != 0) {
      const auto size = r.u64();
      subnet_.mask = BitVector::from_words(size, r.u64s());
    }
    current_ = {};
    current_.index = r.u64();
    current_.subnet = static_cast<long>(r.u64()) - 1;
    current_.start_env_step = r.u64();
    current_.ret = r.f64();
    current_.warmup = r.u8() != 0;
    const auto n = r.u64();
    for (std::uint64_t k = 0; k < n; ++k) current_.positions.push_back({r.f64(), r.f64()});
    for (auto* rng : {&env_rng_, &warmup_rng_, &eval_rng_}) rng->set_state(r.str());
    if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
    steps_.clear();
    episodes_.clear();
    evals_.clear();
    critic_losses_.clear();
    actor_losses_.clear();
  }

 private:
  void begin_episode() {
    obs_ = env_.reset(env_rng_);
    subnet_ = agent_.begin_episode();
    current_ = {};
    current_.index = episode_count_++;
    current_.subnet = subnet_.index ? static_cast<long>(*subnet_.index) : -1;
    current_.start_env_step = env_step_ + 1;
    current_.warmup = env_step_ + 1 <= agent_.config().warmup_steps;
    current_.positions.push_back(env_.state().position);
    episode_active_ = true;
  }

  RunSettings settings_;
  std::uint64_t seed_ = 0;
  MazeEnv env_;
  SacAgent agent_;
  Rng env_rng_;
  Rng warmup_rng_;
  Rng eval_rng_;
  std::size_t env_step_ = 0;
  std::size_t grad_steps_ = 0;
  std::size_t episode_count_ = 0;
  bool episode_active_ = false;
  Vec2 obs_;
  EpisodeSubnet subnet_;
  EpisodeLog current_;
  std::vector<StepLog> steps_;
  std::vector<EpisodeLog> episodes_;
  std::vector<EvalRecord> evals_;
  std::vector<double> critic_losses_;
  std::vector<double> actor_losses_;
};

}  // namespace omnet
