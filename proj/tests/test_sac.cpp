#include <gtest/gtest.h>

#include "oracle_values.hpp"
#include "test_support.hpp"

using namespace omnet;
using namespace testing_support;

namespace {

SacConfig small_config() {
  SacConfig c;
  c.critic_hidden = {8, 8};
  c.actor_hidden = {8, 8};
  c.batch_size = 16;
  c.buffer_capacity = 1000;
  return c;
}

void fill_buffer(SacAgent& agent, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    const double s[2] = {rng.uniform(), rng.uniform()};
    const double s2[2] = {rng.uniform(), rng.uniform()};
    const auto a = agent.random_action(rng);
    const bool done = rng.bernoulli(0.1);
    agent.buffer().add(s, a, done ? 100.0 : 0.0, s2, done);
  }
}

SacAgent make_agent(SacConfig c, std::uint64_t seed = 1) {
  SacAgent a(std::move(c), 2, 2, 0.2, seed);
  fill_buffer(a, 200, seed + 100);
  return a;
}

}  // namespace

TEST(Policy, MatchesReferenceSquashedGaussian) {
  // zero weights: the head outputs its bias (mean0, mean1, raw0, raw1)
  const Architecture arch({{1, 4, Activation::identity, false}});
  std::vector<double> theta(arch.size(), 0.0);
  theta[4] = oracle::kPolicyMean[0];
  theta[5] = oracle::kPolicyMean[1];
  theta[6] = oracle::kPolicyRawLogStd[0];
  theta[7] = oracle::kPolicyRawLogStd[1];
  Matrix noise(2, 1);
  noise << oracle::kPolicyNoise[0], oracle::kPolicyNoise[1];
  const auto p = sample_policy(arch, theta, nullptr, Matrix::Zero(1, 1), noise);
  EXPECT_NEAR(p.action(0, 0), oracle::kPolicyAction[0], 1e-14);
  EXPECT_NEAR(p.action(1, 0), oracle::kPolicyAction[1], 1e-14);
  EXPECT_NEAR(p.log_prob[0], oracle::kPolicyLogProb, 1e-12);
}

TEST(Policy, ZeroHeadStartsAtUnitStd) {
  const Architecture arch({{1, 4, Activation::identity, false}});
  const std::vector<double> theta(arch.size(), 0.0);
  const auto p = sample_policy(arch, theta, nullptr, Matrix::Zero(1, 1), Matrix::Zero(2, 1));
  EXPECT_NEAR(p.std(0, 0), 1.0, 1e-15);
  EXPECT_EQ(p.action(0, 0), 0.0);
}

TEST(Policy, LogOneMinusTanhSquaredStable) {
  for (double u : {-3.0, -0.5, 0.0, 0.2, 2.5}) {
    const double t = std::tanh(u);
    EXPECT_NEAR(log_one_minus_tanh_sq(u), std::log(1 - t * t), 1e-12);
  }
  EXPECT_TRUE(std::isfinite(log_one_minus_tanh_sq(40.0)));
  EXPECT_NEAR(log_one_minus_tanh_sq(40.0), 2 * std::log(2.0) - 80.0, 1e-9);
  EXPECT_NEAR(log_one_minus_tanh_sq(-40.0), 2 * std::log(2.0) - 80.0, 1e-9);
}

TEST(Agent, DeterministicZeroMeanActsZero) {
  auto c = small_config();
  c.actor_mode = ActorMode::dense;
  SacAgent agent(c, 2, 2, 0.2, 1);
  // zero the head so the mean is 0
  const auto& arch = agent.actor().arch;
  const auto& off = arch.offsets(arch.layers() - 1);
  for (std::size_t j = off.weight; j < arch.size(); ++j) agent.actor().theta[j] = 0.0;
  const double obs[2] = {0.3, 0.7};
  const auto a = agent.act(obs, {}, true);
  EXPECT_EQ(a[0], 0.0);
  EXPECT_EQ(a[1], 0.0);
}

TEST(Agent, ActionsWithinBounds) {
  auto agent = make_agent(small_config());
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const double obs[2] = {rng.uniform(), rng.uniform()};
    const auto a = agent.act(obs, agent.begin_episode(), false);
    EXPECT_LE(std::abs(a[0]), 0.2);
    EXPECT_LE(std::abs(a[1]), 0.2);
  }
}

TEST(Agent, CriticGradientMatchesFiniteDifferences) {
  for (auto mode : {CriticMode::omnet, CriticMode::dense_single}) {
    auto c = small_config();
    c.critic_mode = mode;
    auto agent = make_agent(c);
    const auto batch = agent.sample_batch();
    const auto target = agent.td_target(batch).target;
    const BitVector* mask = mode == CriticMode::omnet ? &(*agent.critic_masks())[2] : nullptr;
    const auto analytic = agent.critic_loss(0, mask, batch, target).second;
    const auto theta0 = agent.critics()[0].online.theta;
    auto f = [&](const std::vector<double>& t) {
      agent.critics()[0].online.theta = t;
      return agent.critic_loss(0, mask, batch, target).first;
    };
    auto numeric = numeric_gradient(f, theta0);
    agent.critics()[0].online.theta = theta0;
    if (mask)
      for (std::size_t j = 0; j < numeric.size(); ++j)
        if (!(*mask)[j]) numeric[j] = 0.0;
    EXPECT_LT(max_relative_error(analytic, numeric), 1e-4);
  }
}

TEST(Agent, ActorGradientMatchesFiniteDifferences) {
  for (auto mode : {ActorMode::omnet, ActorMode::dense}) {
    auto c = small_config();
    c.actor_mode = mode;
    c.init_alpha = 0.3;
    c.hidden_activation = Activation::tanh;  // smooth, so differences never straddle a kink
    auto agent = make_agent(c);
    const auto batch = agent.sample_batch();
    Rng rng(9);
    const Matrix noise = random_matrix(2, static_cast<std::size_t>(batch.size()), rng);
    const BitVector* mask = mode == ActorMode::omnet ? &(*agent.actor_masks())[1] : nullptr;
    std::vector<BitVector> scratch;
    const auto members = agent.actor_q_members(scratch, rng);
    const auto analytic = agent.actor_loss(batch, mask, noise, members).grad;
    const auto theta0 = agent.actor().theta;
    auto f = [&](const std::vector<double>& t) {
      agent.actor().theta = t;
      return agent.actor_loss(batch, mask, noise, members).loss;
    };
    auto numeric = numeric_gradient(f, theta0);
    agent.actor().theta = theta0;
    if (mask)
      for (std::size_t j = 0; j < numeric.size(); ++j)
        if (!(*mask)[j]) numeric[j] = 0.0;
    EXPECT_LT(max_relative_error(analytic, numeric), 1e-4);
  }
}

TEST(Agent, MinTargetWithEntropyOff) {
  auto c = small_config();
  c.entropy_off = true;
  auto agent = make_agent(c);
  EXPECT_EQ(agent.alpha(), 0.0);
  for (int k = 0; k < 50; ++k) {
    const auto batch = agent.sample_batch();
    const auto t = agent.td_target(batch);
    ASSERT_NE(t.subnet1, t.subnet2);
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      const double disc = c.gamma * (1.0 - batch.done[i]);
      EXPECT_LE(t.target[i], batch.r[i] + disc * t.q1[i]);
      EXPECT_LE(t.target[i], batch.r[i] + disc * t.q2[i]);
    }
    agent.critic_update(batch);
  }
}

TEST(Agent, SingleSubnetTargetUsesOneEstimate) {
  auto c = small_config();
  c.critic_subnets = 1;
  c.critic_sparsity = 0.0;
  auto agent = make_agent(c);
  const auto t = agent.td_target(agent.sample_batch());
  EXPECT_EQ(t.q1, t.q2);
}

TEST(Agent, CriticUpdateTouchesOnlyItsSubnet) {
  auto agent = make_agent(small_config());
  for (int k = 0; k < 20; ++k) {
    const auto before = agent.critics()[0];
    const auto info = agent.critic_update(agent.sample_batch());
    ASSERT_TRUE(info.update_mask);
    EXPECT_EQ(info.touched, info.update_mask->count());
    const auto& after = agent.critics()[0];
    for (std::size_t j = 0; j < before.online.theta.size(); ++j) {
      if ((*info.update_mask)[j]) continue;
      ASSERT_TRUE(bitwise_equal(after.online.theta[j], before.online.theta[j]));
      ASSERT_TRUE(bitwise_equal(after.opt.m[j], before.opt.m[j]));
      ASSERT_TRUE(bitwise_equal(after.opt.v[j], before.opt.v[j]));
    }
  }
}

TEST(Agent, TargetSyncIsPolyak) {
  auto c = small_config();
  c.tau = 0.25;
  auto agent = make_agent(c);
  auto& critic = agent.critics()[0];
  for (auto& v : critic.online.theta) v += 1.0;
  const auto target_before = critic.target;
  agent.target_sync();
  for (std::size_t j = 0; j < target_before.size(); ++j)
    EXPECT_DOUBLE_EQ(critic.target[j], 0.25 * critic.online.theta[j] + 0.75 * target_before[j]);
}

TEST(Agent, TemperatureMovesTowardTargetEntropy) {
  auto agent = make_agent(small_config());
  const double start = agent.log_alpha();
  // log pi far above -target entropy: too little entropy, alpha must grow
  agent.temperature_update(Vector::Constant(8, 5.0));
  EXPECT_GT(agent.log_alpha(), start);
  const double mid = agent.log_alpha();
  agent.temperature_update(Vector::Constant(8, -10.0));
  EXPECT_LT(agent.log_alpha(), mid);
  EXPECT_THROW(agent.temperature_update(Vector()), std::invalid_argument);
}

TEST(Agent, ModesBuildExpectedCritics) {
  auto c = small_config();
  c.critic_mode = CriticMode::dense_double;
  EXPECT_EQ(SacAgent(c, 2, 2, 0.2, 1).critics().size(), 2u);
  c.critic_mode = CriticMode::dense_single;
  EXPECT_EQ(SacAgent(c, 2, 2, 0.2, 1).critics().size(), 1u);
  c.critic_mode = CriticMode::omnet;
  const SacAgent a(c, 2, 2, 0.2, 1);
  EXPECT_EQ(a.critic_masks()->count(), 5u);
  EXPECT_EQ(a.actor_masks()->count(), 5u);
}

TEST(Agent, InfinityModesRun) {
  auto c = small_config();
  c.critic_mode = CriticMode::infinity;
  c.actor_mode = ActorMode::infinity;
  auto agent = make_agent(c);
  const auto info = agent.critic_update(agent.sample_batch());
  EXPECT_TRUE(std::isfinite(info.loss));
  const auto a = agent.actor_update(agent.sample_batch());
  EXPECT_TRUE(std::isfinite(a.loss));
  const double obs[2] = {0.5, 0.5};
  EXPECT_THROW(agent.act(obs, {}, true), std::invalid_argument);
  EXPECT_NO_THROW(agent.act(obs, agent.begin_episode(), true));
}

TEST(Agent, InvalidConfigsThrow) {
  auto c = small_config();
  c.gamma = 1.0;
  EXPECT_THROW(SacAgent(c, 2, 2, 0.2, 1), std::invalid_argument);
  c = small_config();
  c.critic_sparsity = 1.0;
  EXPECT_THROW(SacAgent(c, 2, 2, 0.2, 1), std::invalid_argument);
  EXPECT_THROW(SacAgent(small_config(), 2, 0, 0.2, 1), std::invalid_argument);
}

TEST(Agent, SerializationResumesIdentically) {
  auto a = make_agent(small_config(), 4);
  for (int k = 0; k < 5; ++k) {
    a.critic_update(a.sample_batch());
    const auto info = a.actor_update(a.sample_batch());
    a.temperature_update(info.log_prob);
  }
  ByteWriter w;
  a.write(w);
  const auto bytes = w.take();
  SacAgent b(small_config(), 2, 2, 0.2, 999);
  ByteReader r(bytes);
  b.read(r);
  EXPECT_TRUE(r.at_end());
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(a.critic_update(a.sample_batch()).loss, b.critic_update(b.sample_batch()).loss);
    EXPECT_EQ(a.actor_update(a.sample_batch()).loss, b.actor_update(b.sample_batch()).loss);
  }
  EXPECT_EQ(a.critics()[0].online.theta, b.critics()[0].online.theta);

  auto other = small_config();
  other.critic_hidden = {4};
  SacAgent c(other, 2, 2, 0.2, 1);
  ByteReader r2(bytes);
  EXPECT_THROW(c.read(r2), FormatError);
}

TEST(Replay, RingBufferOverwritesOldest) {
  ReplayBuffer buf(3, 1, 1);
  for (int k = 0; k < 5; ++k) {
    const double s[1] = {double(k)}, a[1] = {0.0}, s2[1] = {double(k + 1)};
    buf.add(s, a, k, s2, false);
  }
  EXPECT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.inserted(), 5u);
  Rng rng(1);
  const auto b = buf.sample(200, rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) EXPECT_GE(b.r[i], 2.0);
  const double bad[2] = {0, 0};
  const double ok[1] = {0};
  EXPECT_THROW(buf.add(bad, ok, 0, ok, false), std::invalid_argument);
  ReplayBuffer empty(3, 1, 1);
  EXPECT_THROW(empty.sample(1, rng), std::exception);
}

TEST(Agent, TargetFollowsSoftMinFormula) {
  auto agent = make_agent(small_config());
  const auto batch = agent.sample_batch();
  const auto t = agent.td_target(batch);
  const double a = agent.alpha();
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const double soft = std::min(t.q1[i], t.q2[i]) - a * t.next_log_prob[i];
    EXPECT_DOUBLE_EQ(t.target[i], batch.r[i] + 0.99 * (1.0 - batch.done[i]) * soft);
    if (batch.done[i] == 1.0) {
      EXPECT_EQ(t.target[i], batch.r[i]);
    }
  }
}

TEST(Agent, ScalarTargetOfTwoEstimates) {
  // estimates 3 and 5, r = 0, gamma 0.99, entropy off
  auto c = small_config();
  c.entropy_off = true;
  c.critic_zero_head = true;
  c.critic_mode = CriticMode::dense_double;
  auto agent = make_agent(c);
  const double estimate[2] = {3.0, 5.0};
  for (int k = 0; k < 2; ++k) {
    auto& cr = agent.critics()[k];
    cr.target[cr.online.arch.offsets(cr.online.arch.layers() - 1).bias] = estimate[k];
  }
  Batch b;
  b.s = Matrix::Constant(2, 1, 0.5);
  b.a = Matrix::Zero(2, 1);
  b.s_next = b.s;
  b.r = Vector::Zero(1);
  b.done = Vector::Zero(1);
  EXPECT_NEAR(agent.td_target(b).target[0], 2.97, 1e-12);
  b.r[0] = 100.0;
  b.done[0] = 1.0;
  EXPECT_EQ(agent.td_target(b).target[0], 100.0);
}

TEST(Agent, CriticLossIsMeanSquaredTdError) {
  auto agent = make_agent(small_config());
  const auto batch = agent.sample_batch();
  const auto t = agent.td_target(batch);
  const auto& cr = agent.critics()[0];
  const BitVector& mask = (*agent.critic_masks())[1];
  const Matrix x = agent.critic_input(batch.s, agent.unit_actions(batch.a));
  const Matrix q = masked_forward(cr.online.arch, cr.online.theta, &mask, x).output();
  double expect = 0.0;
  for (Eigen::Index i = 0; i < batch.size(); ++i) expect += (q(0, i) - t.target[i]) * (q(0, i) - t.target[i]);
  expect /= static_cast<double>(batch.size());
  EXPECT_NEAR(agent.critic_loss(0, &mask, batch, t.target).first, expect, 1e-10 * std::max(1.0, expect));
  const Vector exact = q.row(0).transpose();
  const auto [zero, grad] = agent.critic_loss(0, &mask, batch, exact);
  EXPECT_EQ(zero, 0.0);
  for (double g : grad) EXPECT_EQ(g, 0.0);
}

TEST(Agent, ActorUpdateLeavesCriticsUnchanged) {
  auto agent = make_agent(small_config());
  const auto before = agent.critics();
  agent.actor_update(agent.sample_batch());
  for (std::size_t k = 0; k < before.size(); ++k) {
    EXPECT_EQ(agent.critics()[k].online.theta, before[k].online.theta);
    EXPECT_EQ(agent.critics()[k].target, before[k].target);
  }
}

TEST(Agent, SingleDenseSubnetMatchesPlainCritic) {
  // one subnet at zero sparsity reproduces a single dense critic step for step
  auto c = small_config();
  c.critic_subnets = 1;
  c.critic_sparsity = 0.0;
  c.actor_mode = ActorMode::dense;
  auto omnet_agent = make_agent(c, 4);
  c.critic_mode = CriticMode::dense_single;
  auto dense_agent = make_agent(c, 4);
  for (int k = 0; k < 10; ++k) {
    const auto a = omnet_agent.critic_update(omnet_agent.sample_batch());
    const auto b = dense_agent.critic_update(dense_agent.sample_batch());
    EXPECT_TRUE(bitwise_equal(a.loss, b.loss));
    const auto pa = omnet_agent.actor_update(omnet_agent.sample_batch());
    const auto pb = dense_agent.actor_update(dense_agent.sample_batch());
    EXPECT_TRUE(bitwise_equal(pa.loss, pb.loss));
  }
  EXPECT_EQ(omnet_agent.critics()[0].online.theta, dense_agent.critics()[0].online.theta);
}

TEST(Agent, TemperatureStillAtTargetEntropy) {
  auto agent = make_agent(small_config());
  const double start = agent.log_alpha();
  agent.temperature_update(Vector::Constant(8, -agent.target_entropy()));
  EXPECT_EQ(agent.log_alpha(), start);
}

TEST(Agent, TemperatureScalarStep) {
  // first Adam step moves log alpha by lr against the sign of the gradient
  auto c = small_config();
  c.alpha_lr = 1e-2;
  auto agent = make_agent(c);
  agent.temperature_update(Vector::Constant(4, 5.0));
  EXPECT_NEAR(agent.log_alpha(), 0.01, 1e-9);
  agent.temperature_update(Vector::Constant(4, -5.0));
  EXPECT_LT(agent.log_alpha(), 0.01);
}

TEST(Agent, FullTauCopiesOnline) {
  auto c = small_config();
  c.tau = 1.0;
  auto agent = make_agent(c);
  for (auto& v : agent.critics()[0].online.theta) v *= 3.0;
  agent.target_sync();
  EXPECT_EQ(agent.critics()[0].target, agent.critics()[0].online.theta);
}

TEST(Agent, EpisodeSubnetsChangeActions) {
  auto agent = make_agent(small_config());
  for (int k = 0; k < 30; ++k) agent.actor_update(agent.sample_batch());
  const double s[2] = {0.3, 0.7};
  const auto a0 = agent.act(s, agent.subnet_by_index(0), true);
  const auto a1 = agent.act(s, agent.subnet_by_index(1), true);
  EXPECT_NE(a0, a1);
}
