#pragma once

// Soft actor-critic whose critic and actor each carry N masked subnetworks in one dense network,
// trained one random subnetwork per update. Dense double-critic SAC and
// single-critic SAC are degenerate configurations of the same agent.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "omnet/mask.hpp"
#include "omnet/nn.hpp"
#include "omnet/replay.hpp"
#include "omnet/rng.hpp"
#include "omnet/serialize.hpp"

namespace omnet {

enum class CriticMode { omnet, dense_double, dense_single, infinity };
enum class ActorMode { omnet, dense, infinity };

inline std::string to_string(CriticMode m) {
  switch (m) {
    case CriticMode::omnet: return "omnet";
    case CriticMode::dense_double: return "dense_double";
    case CriticMode::dense_single: return "dense_single";
    case CriticMode::infinity: return "infinity";
  }
  return "?";
}

inline std::string to_string(ActorMode m) {
  switch (m) {
    case ActorMode::omnet: return "omnet";
    case ActorMode::dense: return "dense";
    case ActorMode::infinity: return "infinity";
  }
  return "?";
}

struct SacConfig {
  double gamma = 0.99;
  std::size_t replay_ratio = 20;  // critic updates per env step
  std::size_t policy_delay = 1;   // env steps between actor/temperature updates
  std::size_t batch_size = 256;
  double tau = 0.005;
  std::optional<double> target_entropy;  // defaults to -action_dim
  double critic_lr = 3e-4;
  double actor_lr = 3e-4;
  double alpha_lr = 3e-4;
  double init_alpha = 1.0;
  std::size_t warmup_steps = 1000;
  std::size_t buffer_capacity = 1'000'000;

  std::vector<std::size_t> critic_hidden{256, 256};
  bool critic_layer_norm = true;
  std::vector<std::size_t> actor_hidden{256, 256};
  bool actor_layer_norm = false;
  Activation hidden_activation = Activation::relu;
  bool critic_zero_head = false;

  CriticMode critic_mode = CriticMode::omnet;
  std::size_t critic_subnets = 5;
  double critic_sparsity = 0.5;
  ActorMode actor_mode = ActorMode::omnet;
  std::size_t actor_subnets = 5;
  double actor_sparsity = 0.5;
  std::size_t infinity_q_samples = 5;  // fresh critic masks averaged by the actor in infinity mode

  bool entropy_off = false;  // drop entropy terms and temperature tuning

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SacConfig: " + m); };
    if (!(gamma > 0.0 && gamma < 1.0)) fail("gamma must lie in (0, 1)");
    if (replay_ratio < 1) fail("replay_ratio must be >= 1");
    if (policy_delay < 1) fail("policy_delay must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(tau > 0.0 && tau <= 1.0)) fail("tau must lie in (0, 1]");
    if (!(critic_lr > 0 && actor_lr > 0 && alpha_lr > 0)) fail("learning rates must be positive");
    if (!(init_alpha > 0.0)) fail("init_alpha must be positive");
    if (buffer_capacity < 1) fail("buffer_capacity must be >= 1");
    for (auto h : critic_hidden)
      if (h == 0) fail("critic hidden sizes must be positive");
    for (auto h : actor_hidden)
      if (h == 0) fail("actor hidden sizes must be positive");
    if (critic_mode == CriticMode::omnet && critic_subnets < 1) fail("critic_subnets must be >= 1");
    if (actor_mode == ActorMode::omnet && actor_subnets < 1) fail("actor_subnets must be >= 1");
    if (!(critic_sparsity >= 0.0 && critic_sparsity < 1.0)) fail("critic_sparsity must lie in [0, 1)");
    if (!(actor_sparsity >= 0.0 && actor_sparsity < 1.0)) fail("actor_sparsity must lie in [0, 1)");
    if (infinity_q_samples < 1) fail("infinity_q_samples must be >= 1");
  }
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
/// Shift inside the soft clamp so a zero head output means log-std 0 (std 1).
inline const double kLogStdShift = std::atanh(-(kLogStdMax + kLogStdMin) / (kLogStdMax - kLogStdMin));

/// Reparameterized squashed-Gaussian sample. Actions are in [-1, 1]; the agent
/// scales them to the environment bound.
struct PolicySample {
  ForwardTrace trace;
  Matrix raw_log_std;
  Matrix log_std;
  Matrix std;
  Matrix noise;
  Matrix action;
  Vector log_prob;
};

/// log(1 - tanh(u)^2) computed without cancellation.
inline double log_one_minus_tanh_sq(double u) {
  const double x = -2.0 * u;
  const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::numbers::ln2 - u - softplus);
}

inline PolicySample sample_policy(const Architecture& arch, std::span<const double> theta, const BitVector* mask,
                                  const Matrix& s, const Matrix& noise) {
  PolicySample p;
  p.trace = masked_forward(arch, theta, mask, s);
  const auto& out = p.trace.output();
  const auto act_dim = out.rows() / 2;
  if (noise.rows() != act_dim || noise.cols() != out.cols())
    throw std::invalid_argument("sample_policy: noise shape mismatch");
  p.raw_log_std = out.bottomRows(act_dim);
  p.log_std = (kLogStdMin + 0.5 * (kLogStdMax - kLogStdMin) * ((p.raw_log_std.array() + kLogStdShift).tanh() + 1.0)).matrix();
  p.std = p.log_std.array().exp().matrix();
  p.noise = noise;
  const Matrix pre = out.topRows(act_dim) + (p.std.array() * noise.array()).matrix();
  p.action = pre.array().tanh().matrix();
  p.log_prob.resize(out.cols());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    double lp = 0.0;
    for (Eigen::Index j = 0; j < act_dim; ++j)
      lp += -0.5 * noise(j, c) * noise(j, c) - p.log_std(j, c) - half_log_2pi - log_one_minus_tanh_sq(pre(j, c));
    p.log_prob[c] = lp;
  }
  return p;
}

/// The actor subnetwork used for one episode.
struct EpisodeSubnet {
  std::optional<std::size_t> index;  // omnet actor
  std::optional<BitVector> mask;     // infinity actor
};

struct TdTarget {
  Vector target;
  Vector q1;  // first target-critic estimate at (s', a')
  Vector q2;  // second estimate; equals q1 when only one is available
  Vector next_log_prob;
  std::size_t next_subnet = 0;
  std::size_t subnet1 = 0;
  std::size_t subnet2 = 0;
};

struct CriticUpdateInfo {
  double loss = 0.0;
  std::size_t subnet = 0;   // omnet: updated subnetwork
  std::size_t touched = 0;  // parameter indices written
  std::optional<BitVector> update_mask;
};

struct ActorUpdateInfo {
  double loss = 0.0;
  std::size_t subnet = 0;
  std::size_t touched = 0;
  std::optional<BitVector> update_mask;
  Vector log_prob;
};

struct ActorLoss {
  double loss = 0.0;
  std::vector<double> grad;  // wrt actor theta
  Vector log_prob;
};

/// One critic evaluation: which critic network and which subnetwork mask.
struct QMember {
  std::size_t critic = 0;
  const BitVector* mask = nullptr;
};

class SacAgent {
 public:
  struct Critic {
    MlpParams online;
    std::vector<double> target;
    AdamState opt;
  };

  SacAgent() = default;

  SacAgent(SacConfig config, std::size_t obs_dim, std::size_t act_dim, double action_bound, std::uint64_t seed)
      : config_(std::move(config)), obs_dim_(obs_dim), act_dim_(act_dim), action_bound_(action_bound) {
    config_.validate();
    if (obs_dim == 0 || act_dim == 0) throw std::invalid_argument("SacAgent: zero dimension");
    if (!(action_bound > 0.0)) throw std::invalid_argument("SacAgent: action bound must be positive");
    const auto critic_specs = mlp_specs(obs_dim + act_dim, config_.critic_hidden, 1, config_.hidden_activation,
                                        config_.critic_layer_norm);
    const std::size_t n_critics = config_.critic_mode == CriticMode::dense_double ? 2 : 1;
    for (std::size_t k = 0; k < n_critics; ++k) {
      Critic c;
      c.online = init_params(critic_specs, derive_seed(seed, 100 + k));
      if (config_.critic_zero_head) zero_output_layer(c.online);
      c.target = c.online.theta;
      c.opt = AdamState(c.online.size(), {config_.critic_lr});
      critics_.push_back(std::move(c));
    }
    actor_ = init_params(mlp_specs(obs_dim, config_.actor_hidden, 2 * act_dim, config_.hidden_activation,
                                   config_.actor_layer_norm),
                         derive_seed(seed, 200));
    actor_opt_ = AdamState(actor_.size(), {config_.actor_lr});
    if (config_.critic_mode == CriticMode::omnet)
      critic_masks_ = sample_masks(critics_[0].online.arch, config_.critic_subnets, config_.critic_sparsity,
                                   derive_seed(seed, 300));
    if (config_.actor_mode == ActorMode::omnet)
      actor_masks_ =
          sample_masks(actor_.arch, config_.actor_subnets, config_.actor_sparsity, derive_seed(seed, 301));
    critic_coverage_ = mask_coverage(critics_[0].online.arch);
    actor_coverage_ = mask_coverage(actor_.arch);
    log_alpha_ = std::log(config_.init_alpha);
    alpha_opt_ = AdamState(1, {config_.alpha_lr});
    critic_selector_ = SubnetSelector(
        config_.critic_mode == CriticMode::omnet ? config_.critic_subnets : 1, derive_seed(seed, 400));
    actor_selector_ =
        SubnetSelector(config_.actor_mode == ActorMode::omnet ? config_.actor_subnets : 1, derive_seed(seed, 401));
    episode_selector_ =
        SubnetSelector(config_.actor_mode == ActorMode::omnet ? config_.actor_subnets : 1, derive_seed(seed, 402));
    noise_rng_ = Rng(derive_seed(seed, 500));
    act_rng_ = Rng(derive_seed(seed, 501));
    infinity_rng_ = Rng(derive_seed(seed, 502));
    replay_rng_ = Rng(derive_seed(seed, 503));
    buffer_ = ReplayBuffer(config_.buffer_capacity, obs_dim, act_dim);
  }

  // --- accessors -----------------------------------------------------------

  const SacConfig& config() const noexcept { return config_; }
  std::size_t obs_dim() const noexcept { return obs_dim_; }
  std::size_t act_dim() const noexcept { return act_dim_; }
  double action_bound() const noexcept { return action_bound_; }
  double alpha() const { return config_.entropy_off ? 0.0 : std::exp(log_alpha_); }
  double log_alpha() const noexcept { return log_alpha_; }
  void set_log_alpha(double v) noexcept { log_alpha_ = v; }
  double target_entropy() const {
    return config_.target_entropy.value_or(-static_cast<double>(act_dim_));
  }

  std::vector<Critic>& critics() noexcept { return critics_; }
  const std::vector<Critic>& critics() const noexcept { return critics_; }
  MlpParams& actor() noexcept { return actor_; }
  const MlpParams& actor() const noexcept { return actor_; }
  const AdamState& actor_opt() const noexcept { return actor_opt_; }
  const AdamState& alpha_opt() const noexcept { return alpha_opt_; }
  const std::optional<MaskSet>& critic_masks() const noexcept { return critic_masks_; }
  const std::optional<MaskSet>& actor_masks() const noexcept { return actor_masks_; }
  const BitVector& critic_coverage() const noexcept { return critic_coverage_; }
  const BitVector& actor_coverage() const noexcept { return actor_coverage_; }
  ReplayBuffer& buffer() noexcept { return buffer_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  Rng& noise_rng() noexcept { return noise_rng_; }

  /// Number of actor subnetworks addressable by index (1 for dense/infinity).
  std::size_t actor_subnet_count() const noexcept { return actor_masks_ ? actor_masks_->count() : 1; }
  std::size_t critic_subnet_count() const noexcept { return critic_masks_ ? critic_masks_->count() : 1; }

  // --- acting --------------------------------------------------------------

  /// Draws the subnetwork used for a whole episode.
  EpisodeSubnet begin_episode() { return begin_episode(infinity_rng_); }

  EpisodeSubnet begin_episode(Rng& infinity_rng) {
    EpisodeSubnet e;
    if (config_.actor_mode == ActorMode::omnet) e.index = episode_selector_.draw_index();
    if (config_.actor_mode == ActorMode::infinity)
      e.mask = infinity_mask(actor_coverage_, config_.actor_sparsity, infinity_rng);
    return e;
  }

  EpisodeSubnet subnet_by_index(std::size_t k) const {
    if (config_.actor_mode != ActorMode::omnet) return {};
    if (k >= actor_subnet_count()) throw std::out_of_range("subnet index out of range");
    return {k, std::nullopt};
  }

  const BitVector* actor_mask_for(const EpisodeSubnet& e) const {
    switch (config_.actor_mode) {
      case ActorMode::omnet:
        if (!e.index || *e.index >= actor_masks_->count())
          throw std::out_of_range("act: invalid actor subnet index");
        return &(*actor_masks_)[*e.index];
      case ActorMode::infinity:
        if (!e.mask) throw std::invalid_argument("act: infinity actor needs an episode mask");
        return &*e.mask;
      case ActorMode::dense:
        return nullptr;
    }
    return nullptr;
  }

  /// Environment-scaled action for one observation.
  std::vector<double> act(std::span<const double> obs, const EpisodeSubnet& subnet, bool deterministic) {
    return act(obs, subnet, deterministic, act_rng_);
  }

  std::vector<double> act(std::span<const double> obs, const EpisodeSubnet& subnet, bool deterministic,
                          Rng& rng) const {
    if (obs.size() != obs_dim_) throw std::invalid_argument("act: observation length mismatch");
    const Matrix s = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
    Matrix noise = Matrix::Zero(static_cast<Eigen::Index>(act_dim_), 1);
    if (!deterministic)
      for (Eigen::Index j = 0; j < noise.rows(); ++j) noise(j, 0) = rng.normal();
    const auto p = sample_policy(actor_.arch, actor_.theta, actor_mask_for(subnet), s, noise);
    std::vector<double> a(act_dim_);
    for (std::size_t j = 0; j < act_dim_; ++j) a[j] = action_bound_ * p.action(static_cast<Eigen::Index>(j), 0);
    return a;
  }

  std::vector<double> random_action(Rng& rng) const {
    std::vector<double> a(act_dim_);
    for (auto& x : a) x = rng.uniform(-action_bound_, action_bound_);
    return a;
  }

  // --- critic evaluation ---------------------------------------------------

  Matrix critic_input(const Matrix& s, const Matrix& action_unit) const {
    Matrix x(s.rows() + action_unit.rows(), s.cols());
    x.topRows(s.rows()) = s;
    x.bottomRows(action_unit.rows()) = action_unit;
    return x;
  }

  Matrix unit_actions(const Matrix& env_actions) const { return env_actions / action_bound_; }

  Vector q_value(const QMember& m, bool use_target, const Matrix& x) const {
    const auto& c = critics_.at(m.critic);
    const std::span<const double> theta = use_target ? std::span<const double>(c.target) : c.online.theta;
    return masked_forward(c.online.arch, theta, m.mask, x).output().row(0).transpose();
  }

  /// Every critic estimate the actor averages over. Infinity mode draws
  /// fresh masks into `scratch`.
  std::vector<QMember> actor_q_members(std::vector<BitVector>& scratch, Rng& rng) const {
    std::vector<QMember> out;
    switch (config_.critic_mode) {
      case CriticMode::omnet:
        for (std::size_t k = 0; k < critic_masks_->count(); ++k) out.push_back({0, &(*critic_masks_)[k]});
        break;
      case CriticMode::infinity:
        scratch.clear();
        for (std::size_t k = 0; k < config_.infinity_q_samples; ++k)
          scratch.push_back(infinity_mask(critic_coverage_, config_.critic_sparsity, rng));
        for (const auto& m : scratch) out.push_back({0, &m});
        break;
      case CriticMode::dense_double:
        out = {{0, nullptr}, {1, nullptr}};
        break;
      case CriticMode::dense_single:
        out = {{0, nullptr}};
        break;
    }
    return out;
  }

  /// Mean online-critic estimate over all subnetworks (or both dense critics).
  Vector q_mean(const Matrix& s, const Matrix& env_actions, Rng& rng) const {
    std::vector<BitVector> scratch;
    const auto members = actor_q_members(scratch, rng);
    const Matrix x = critic_input(s, unit_actions(env_actions));
    Vector sum = Vector::Zero(s.cols());
    for (const auto& m : members) sum += q_value(m, false, x);
    return sum / static_cast<double>(members.size());
  }

  // --- losses and updates --------------------------------------------------

  /// r + gamma (1 - done) (min(Q̄_i1, Q̄_i2)(s', a') - alpha log pi(a'|s')), a' ~ pi_i''(s').
  TdTarget td_target(const Batch& batch) {
    TdTarget t;
    BitVector fresh_actor;
    const BitVector* next_mask = nullptr;
    if (config_.actor_mode == ActorMode::omnet) {
      t.next_subnet = actor_selector_.draw_index();
      next_mask = &(*actor_masks_)[t.next_subnet];
    } else if (config_.actor_mode == ActorMode::infinity) {
      fresh_actor = infinity_mask(actor_coverage_, config_.actor_sparsity, infinity_rng_);
      next_mask = &fresh_actor;
    }
    const Matrix noise = draw_noise(batch.size());
    const auto next = sample_policy(actor_.arch, actor_.theta, next_mask, batch.s_next, noise);
    const Matrix x = critic_input(batch.s_next, next.action);
    switch (config_.critic_mode) {
      case CriticMode::omnet:
        if (critic_masks_->count() >= 2) {
          std::tie(t.subnet1, t.subnet2) = critic_selector_.draw_two_distinct();
          t.q1 = q_value({0, &(*critic_masks_)[t.subnet1]}, true, x);
          t.q2 = q_value({0, &(*critic_masks_)[t.subnet2]}, true, x);
        } else {
          t.q1 = q_value({0, &(*critic_masks_)[0]}, true, x);
          t.q2 = t.q1;
        }
        break;
      case CriticMode::infinity: {
        const auto m1 = infinity_mask(critic_coverage_, config_.critic_sparsity, infinity_rng_);
        const auto m2 = infinity_mask(critic_coverage_, config_.critic_sparsity, infinity_rng_);
        t.q1 = q_value({0, &m1}, true, x);
        t.q2 = q_value({0, &m2}, true, x);
        break;
      }
      case CriticMode::dense_double:
        t.q1 = q_value({0, nullptr}, true, x);
        t.q2 = q_value({1, nullptr}, true, x);
        break;
      case CriticMode::dense_single:
        t.q1 = q_value({0, nullptr}, true, x);
        t.q2 = t.q1;
        break;
    }
    t.next_log_prob = next.log_prob;
    const double a = alpha();
    t.target.resize(batch.size());
    for (Eigen::Index c = 0; c < batch.size(); ++c) {
      double soft = std::min(t.q1[c], t.q2[c]);
      if (!config_.entropy_off) soft -= a * t.next_log_prob[c];
      t.target[c] = batch.r[c] + config_.gamma * (1.0 - batch.done[c]) * soft;
    }
    return t;
  }

  /// Mean squared TD error of one critic (sub)network and its gradient.
  std::pair<double, std::vector<double>> critic_loss(std::size_t critic, const BitVector* mask, const Batch& batch,
                                                     const Vector& target) const {
    const auto& c = critics_.at(critic);
    const Matrix x = critic_input(batch.s, unit_actions(batch.a));
    const auto trace = masked_forward(c.online.arch, c.online.theta, mask, x);
    const auto B = static_cast<double>(batch.size());
    const RowVector diff = trace.output().row(0) - target.transpose();
    const double loss = diff.squaredNorm() / B;
    const Matrix og = 2.0 * diff / B;
    auto g = masked_backward(c.online.arch, c.online.theta, mask, trace, og).params;
    return {loss, std::move(g)};
  }

  CriticUpdateInfo critic_update(const Batch& batch) {
    if (batch.size() == 0) throw std::invalid_argument("critic_update: empty batch");
    const auto t = td_target(batch);
    CriticUpdateInfo info;
    switch (config_.critic_mode) {
      case CriticMode::omnet: {
        info.subnet = critic_selector_.draw_index();
        const auto& mask = (*critic_masks_)[info.subnet];
        auto [loss, g] = critic_loss(0, &mask, batch, t.target);
        info.loss = loss;
        info.touched = adam_step(critics_[0].online, g, critics_[0].opt, &mask);
        info.update_mask = mask;
        break;
      }
      case CriticMode::infinity: {
        auto mask = infinity_mask(critic_coverage_, config_.critic_sparsity, infinity_rng_);
        auto [loss, g] = critic_loss(0, &mask, batch, t.target);
        info.loss = loss;
        info.touched = adam_step(critics_[0].online, g, critics_[0].opt, &mask);
        info.update_mask = std::move(mask);
        break;
      }
      case CriticMode::dense_double:
      case CriticMode::dense_single: {
        double total = 0.0;
        for (std::size_t k = 0; k < critics_.size(); ++k) {
          auto [loss, g] = critic_loss(k, nullptr, batch, t.target);
          total += loss;
          info.touched += adam_step(critics_[k].online, g, critics_[k].opt);
        }
        info.loss = total / static_cast<double>(critics_.size());
        break;
      }
    }
    target_sync();
    return info;
  }

  /// mean(alpha log pi_i(a|s) - mean_k Q_k(s, a)) with a reparameterized from
  /// the actor subnetwork; gradient wrt the actor parameters.
  ActorLoss actor_loss(const Batch& batch, const BitVector* actor_mask, const Matrix& noise,
                       const std::vector<QMember>& members) const {
    if (members.empty()) throw std::invalid_argument("actor_loss: no critic estimates");
    const auto p = sample_policy(actor_.arch, actor_.theta, actor_mask, batch.s, noise);
    const Matrix x = critic_input(batch.s, p.action);
    const auto B = batch.size();
    const auto A = static_cast<Eigen::Index>(act_dim_);
    Vector q_avg = Vector::Zero(B);
    Matrix dq_da = Matrix::Zero(A, B);
    const double inv_m = 1.0 / static_cast<double>(members.size());
    const Matrix ones = Matrix::Constant(1, B, inv_m);
    for (const auto& m : members) {
      const auto& c = critics_.at(m.critic);
      const auto trace = masked_forward(c.online.arch, c.online.theta, m.mask, x);
      q_avg += inv_m * trace.output().row(0).transpose();
      const auto g = masked_backward(c.online.arch, c.online.theta, m.mask, trace, ones, false, true);
      dq_da += g.input.bottomRows(A);
    }
    const double a = alpha();
    ActorLoss out;
    out.log_prob = p.log_prob;
    double total = 0.0;
    for (Eigen::Index c = 0; c < B; ++c) total += a * p.log_prob[c] - q_avg[c];
    out.loss = total / static_cast<double>(B);

    // d loss / d (mean, raw log-std); everything scaled by 1/B.
    Matrix og(2 * A, B);
    const double scale = 1.0 / static_cast<double>(B);
    const double ls_half_range = 0.5 * (kLogStdMax - kLogStdMin);
    for (Eigen::Index c = 0; c < B; ++c) {
      for (Eigen::Index j = 0; j < A; ++j) {
        const double act = p.action(j, c);
        const double dtanh = 1.0 - act * act;
        const double se = p.std(j, c) * p.noise(j, c);
        const double d_mean = a * 2.0 * act - dq_da(j, c) * dtanh;
        const double d_logstd = a * (-1.0 + 2.0 * act * se) - dq_da(j, c) * dtanh * se;
        const double traw = std::tanh(p.raw_log_std(j, c) + kLogStdShift);
        og(j, c) = scale * d_mean;
        og(A + j, c) = scale * d_logstd * ls_half_range * (1.0 - traw * traw);
      }
    }
    out.grad = masked_backward(actor_.arch, actor_.theta, actor_mask, p.trace, og).params;
    return out;
  }

  ActorUpdateInfo actor_update(const Batch& batch) {
    if (batch.size() == 0) throw std::invalid_argument("actor_update: empty batch");
    ActorUpdateInfo info;
    std::optional<BitVector> fresh;
    const BitVector* mask = nullptr;
    if (config_.actor_mode == ActorMode::omnet) {
      info.subnet = actor_selector_.draw_index();
      mask = &(*actor_masks_)[info.subnet];
    } else if (config_.actor_mode == ActorMode::infinity) {
      fresh = infinity_mask(actor_coverage_, config_.actor_sparsity, infinity_rng_);
      mask = &*fresh;
    }
    const Matrix noise = draw_noise(batch.size());
    std::vector<BitVector> scratch;
    const auto members = actor_q_members(scratch, infinity_rng_);
    auto l = actor_loss(batch, mask, noise, members);
    info.loss = l.loss;
    info.log_prob = std::move(l.log_prob);
    info.touched = adam_step(actor_, l.grad, actor_opt_, mask);
    if (mask) info.update_mask = *mask;
    return info;
  }

  /// One Adam step on log alpha for E[-alpha (log pi + target_entropy)].
  double temperature_update(const Vector& log_prob) {
    if (config_.entropy_off) return 0.0;
    if (log_prob.size() == 0) throw std::invalid_argument("temperature_update: empty batch");
    const double mean = (log_prob.array() + target_entropy()).mean();
    const double grad = -std::exp(log_alpha_) * mean;
    std::span<double> param(&log_alpha_, 1);
    adam_step(param, std::span<const double>(&grad, 1), alpha_opt_);
    return alpha();
  }

  /// Polyak averaging of every target critic.
  void target_sync() {
    const double tau = config_.tau;
    for (auto& c : critics_)
      for (std::size_t j = 0; j < c.target.size(); ++j)
        c.target[j] = tau == 1.0 ? c.online.theta[j] : tau * c.online.theta[j] + (1.0 - tau) * c.target[j];
  }

  Batch sample_batch() { return buffer_.sample(config_.batch_size, replay_rng_); }

  // --- persistence ---------------------------------------------------------

  void write(ByteWriter& w) const {
    w.tag("AGNT");
    w.u64(obs_dim_);
    w.u64(act_dim_);
    w.f64(action_bound_);
    w.u64(critics_.size());
    for (const auto& c : critics_) {
      write_layout(w, c.online.arch);
      w.f64s(c.online.theta);
      w.f64s(c.target);
      write_adam(w, c.opt);
    }
    write_layout(w, actor_.arch);
    w.f64s(actor_.theta);
    write_adam(w, actor_opt_);
    w.f64(log_alpha_);
    write_adam(w, alpha_opt_);
    w.u8(critic_masks_ ? 1 : 0);
    if (critic_masks_) critic_masks_->write(w);
    w.u8(actor_masks_ ? 1 : 0);
    if (actor_masks_) actor_masks_->write(w);
    for (const auto* r : {&critic_selector_.rng(), &actor_selector_.rng(), &episode_selector_.rng(), &noise_rng_,
                          &act_rng_, &infinity_rng_, &replay_rng_})
      w.str(r->state());
    buffer_.write(w);
  }

  /// Restores state into an agent constructed from the same config.
  void read(ByteReader& r) {
    r.expect_tag("AGNT");
    if (r.u64() != obs_dim_ || r.u64() != act_dim_ || r.f64() != action_bound_)
      throw FormatError("checkpoint: agent dimensions differ from config");
    if (r.u64() != critics_.size()) throw FormatError("checkpoint: critic count differs from config");
    for (auto& c : critics_) {
      check_layout(r, c.online.arch);
      read_exact(r, c.online.theta);
      read_exact(r, c.target);
      read_adam(r, c.opt);
    }
    check_layout(r, actor_.arch);
    read_exact(r, actor_.theta);
    read_adam(r, actor_opt_);
    log_alpha_ = r.f64();
    read_adam(r, alpha_opt_);
    auto read_masks = [&](std::optional<MaskSet>& into) {
      const bool present = r.u8() != 0;
      if (present != into.has_value()) throw FormatError("checkpoint: mask set presence differs from config");
      if (present) into = MaskSet::read(r);
    };
    read_masks(critic_masks_);
    read_masks(actor_masks_);
    for (auto* rng : {&critic_selector_.rng(), &actor_selector_.rng(), &episode_selector_.rng(), &noise_rng_,
                      &act_rng_, &infinity_rng_, &replay_rng_})
      rng->set_state(r.str());
    buffer_ = ReplayBuffer::read(r);
  }

 private:
  Matrix draw_noise(Eigen::Index cols) {
    Matrix n(static_cast<Eigen::Index>(act_dim_), cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index j = 0; j < n.rows(); ++j) n(j, c) = noise_rng_.normal();
    return n;
  }

  static void write_layout(ByteWriter& w, const Architecture& arch) {
    w.u64(arch.layers());
    for (const auto& s : arch.specs()) {
      w.u64(s.input_dim);
      w.u64(s.output_dim);
      w.u8(static_cast<std::uint8_t>(s.activation));
      w.u8(s.layer_norm ? 1 : 0);
    }
  }

  static void check_layout(ByteReader& r, const Architecture& arch) {
    if (r.u64() != arch.layers()) throw FormatError("checkpoint: layer count differs");
    for (const auto& s : arch.specs()) {
      const auto in = r.u64(), out = r.u64();
      const auto act = r.u8(), ln = r.u8();
      if (in != s.input_dim || out != s.output_dim || act != static_cast<std::uint8_t>(s.activation) ||
          (ln != 0) != s.layer_norm)
        throw FormatError("checkpoint: layer layout differs from config");
    }
  }

  static void write_adam(ByteWriter& w, const AdamState& a) {
    w.f64s(a.m);
    w.f64s(a.v);
    w.u64(a.t);
  }

  static void read_adam(ByteReader& r, AdamState& a) {
    read_exact(r, a.m);
    read_exact(r, a.v);
    a.t = r.u64();
  }

  static void read_exact(ByteReader& r, std::vector<double>& into) {
    auto v = r.f64s();
    if (v.size() != into.size()) throw FormatError("checkpoint: vector length differs");
    into = std::move(v);
  }

  SacConfig config_;
  std::size_t obs_dim_ = 0;
  std::size_t act_dim_ = 0;
  double action_bound_ = 1.0;
  std::vector<Critic> critics_;
  MlpParams actor_;
  AdamState actor_opt_;
  std::optional<MaskSet> critic_masks_;
  std::optional<MaskSet> actor_masks_;
  BitVector critic_coverage_;
  BitVector actor_coverage_;
  double log_alpha_ = 0.0;
  AdamState alpha_opt_;
  SubnetSelector critic_selector_;
  SubnetSelector actor_selector_;
  SubnetSelector episode_selector_;
  Rng noise_rng_;
  Rng act_rng_;
  Rng infinity_rng_;
  Rng replay_rng_;
  ReplayBuffer buffer_;
};

}  // namespace omnet
