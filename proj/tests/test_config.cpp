#include <gtest/gtest.h>

#include <sstream>

#include "omnet/omnet.hpp"

using namespace omnet;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in, "test.ini");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(RunConfig, DefaultsWhenEmpty) {
  const auto c = parse("");
  EXPECT_EQ(c.total_env_steps, 2000u);
  EXPECT_EQ(c.eval_interval, 100u);
  EXPECT_EQ(c.eval_episodes, 10u);
  EXPECT_EQ(c.agent.replay_ratio, 20u);
  EXPECT_EQ(c.agent.critic_subnets, 5u);
  EXPECT_EQ(c.agent.critic_sparsity, 0.5);
  EXPECT_EQ(c.maze, MazeConfig::standard());
}

TEST(RunConfig, ParsesEveryKind) {
  const auto c = parse(
      "[agent]\n"
      "gamma = 0.95  # comment\n"
      "critic_hidden = 32 16\n"
      "critic_layer_norm = false\n"
      "critic_mode = dense_double\n"
      "actor_mode = infinity\n"
      "target_entropy = -1.5\n"
      "hidden_activation = tanh\n"
      "[run]\n"
      "seeds = 3 1 2\n"
      "noise_scale = 1/20\n"
      "[diagnostics]\n"
      "bias_states = 7\n");
  EXPECT_EQ(c.agent.gamma, 0.95);
  EXPECT_EQ(c.agent.critic_hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_FALSE(c.agent.critic_layer_norm);
  EXPECT_EQ(c.agent.critic_mode, CriticMode::dense_double);
  EXPECT_EQ(c.agent.actor_mode, ActorMode::infinity);
  EXPECT_EQ(*c.agent.target_entropy, -1.5);
  EXPECT_EQ(c.agent.hidden_activation, Activation::tanh);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 1, 2}));
  EXPECT_DOUBLE_EQ(c.noise_scale, 0.05);
  EXPECT_EQ(c.bias.n_states, 7u);
  EXPECT_EQ(c.bias.gamma, 0.95);
}

TEST(RunConfig, FormatRoundTrips) {
  auto c = parse("[agent]\ntarget_entropy = -0.7\ncritic_sparsity = 0.3\n[run]\nseeds = 4 9\n");
  const auto text = format_run_config(c);
  const auto back = parse(text);
  EXPECT_EQ(format_run_config(back), text);
  EXPECT_EQ(back.agent.critic_sparsity, 0.3);
  EXPECT_EQ(back.seeds, c.seeds);
}

TEST(RunConfig, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("[agent]\ngamma = 0.9\nlearning_rate = 1\n").find("test.ini:3"), std::string::npos);
  EXPECT_NE(error_of("[agent]\n\nbatch_size = -4\n").find("test.ini:3"), std::string::npos);
  EXPECT_NE(error_of("[nope]\n").find("test.ini:1"), std::string::npos);
  EXPECT_NE(error_of("gamma = 0.9\n").find("test.ini:1"), std::string::npos);
  EXPECT_NE(error_of("[agent]\ncritic_mode = triple\n").find("test.ini:2"), std::string::npos);
  EXPECT_NE(error_of("[agent]\nentropy_off = maybe\n").find("test.ini:2"), std::string::npos);
  EXPECT_NE(error_of("[run]\nmaze_config = /nonexistent/maze.cfg\n").find("test.ini:2"), std::string::npos);
}

TEST(RunConfig, InvariantsEnforced) {
  EXPECT_FALSE(error_of("[run]\nseeds = 1 1\n").empty());
  EXPECT_FALSE(error_of("[run]\nseeds =\n").empty());
  EXPECT_FALSE(error_of("[run]\ntotal_env_steps = 10\n").empty());
  EXPECT_FALSE(error_of("[run]\nnoise_scale = -0.1\n").empty());
  EXPECT_FALSE(error_of("[agent]\ngamma = 1.5\n").empty());
}

TEST(RunConfig, OverridesApplyAfterFile) {
  auto c = parse("[run]\nseeds = 1\n");
  apply_overrides(c, {"run.seeds=5 6", "agent.batch_size=32"});
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{5, 6}));
  EXPECT_EQ(c.agent.batch_size, 32u);
  EXPECT_THROW(apply_overrides(c, {"agent.nothing=1"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"no_equals"}), ConfigError);
}

TEST(RunConfig, ListsAcceptCommas) {
  std::istringstream in("[agent]\ncritic_hidden = 32, 16\n[run]\nseeds = 4,5 6\n");
  const auto c = parse_run_config(in, "lists.ini", ".");
  EXPECT_EQ(c.agent.critic_hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5, 6}));
}

TEST(RunConfig, ShippedMazeConfigLoads) {
  const auto c = load_run_config(OMNET_SOURCE_DIR "/configs/maze.ini");
  EXPECT_EQ(c.agent.critic_subnets, 5u);
  EXPECT_EQ(c.agent.replay_ratio, 20u);
  EXPECT_EQ(c.total_env_steps * c.agent.replay_ratio, 40000u);
  EXPECT_EQ(c.seeds.size(), 10u);
  EXPECT_EQ(c.maze, MazeConfig::standard());
}
