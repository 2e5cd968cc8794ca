#include <gtest/gtest.h>

#include <sstream>

#include "omnet/omnet.hpp"

using namespace omnet;

namespace {

MazeConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_maze_config(in);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Geometry, PointSegmentDistance) {
  const Segment s{{0, 0}, {1, 0}};
  EXPECT_DOUBLE_EQ(point_segment_distance({0.5, 0.3}, s), 0.3);
  EXPECT_DOUBLE_EQ(point_segment_distance({2, 0}, s), 1.0);
  EXPECT_DOUBLE_EQ(point_segment_distance({-3, 4}, s), 5.0);
  const Segment dot{{0.2, 0.2}, {0.2, 0.2}};
  EXPECT_DOUBLE_EQ(point_segment_distance({0.2, 0.5}, dot), 0.3);
}

TEST(Geometry, SegmentContact) {
  const Segment wall{{0.5, 0}, {0.5, 1}};
  EXPECT_TRUE(segments_touch({{0.4, 0.5}, {0.6, 0.5}}, wall));
  EXPECT_FALSE(segments_touch({{0.1, 0.5}, {0.4, 0.5}}, wall));
  EXPECT_TRUE(segments_touch({{0.3, 0.5}, {0.5, 0.5}}, wall));  // ends on the wall
  EXPECT_TRUE(segments_touch({{0.5, 1.2}, {0.5, 0.9}}, wall));   // collinear overlap
  EXPECT_FALSE(segments_touch({{0.5, 1.2}, {0.5, 1.1}}, wall));  // collinear, disjoint
}

TEST(Maze, ResetPlacesAgentAtStart) {
  MazeEnv env;
  Rng rng(1);
  const auto obs = env.reset(rng);
  EXPECT_EQ(obs.x, 0.5);
  EXPECT_EQ(obs.y, 0.5);
  EXPECT_EQ(env.state().step_count, 0);
}

TEST(Maze, ActionsAreClipped) {
  MazeEnv env;
  Rng rng(1);
  env.reset(rng);
  env.step({-5.0, 0.0});
  EXPECT_DOUBLE_EQ(env.state().position.x, 0.3);
  EXPECT_DOUBLE_EQ(env.state().position.y, 0.5);
}

TEST(Maze, WallsRejectMoves) {
  MazeEnv env;
  Rng rng(1);
  env.reset(rng);
  env.step({0.2, 0.0});  // x=2/3 wall
  EXPECT_EQ(env.state().position.x, 0.5);
  env.step({0.0, 0.2});  // y=2/3 wall
  EXPECT_EQ(env.state().position.y, 0.5);
  env.step({0.0, -0.2});  // y=1/3 wall
  EXPECT_EQ(env.state().position.y, 0.5);
  EXPECT_EQ(env.state().step_count, 3);
}

TEST(Maze, BoundaryIsAWall) {
  MazeConfig c;
  c.start = {0.1, 0.5};
  MazeEnv env(c);
  Rng rng(1);
  env.reset(rng);
  env.step({-0.1, 0.0});  // lands exactly on x = 0
  EXPECT_EQ(env.state().position.x, 0.1);
  env.step({-0.05, 0.0});
  EXPECT_DOUBLE_EQ(env.state().position.x, 0.05);
}

TEST(Maze, GoalGivesRewardAndEndsEpisode) {
  MazeConfig c;
  c.start = {0.7, 0.8};
  MazeEnv env(c);
  Rng rng(1);
  env.reset(rng);
  const auto r = env.step({0.1, 0.0});
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.truncated);
  EXPECT_EQ(r.reward, 100.0);
  EXPECT_THROW(env.step({0, 0}), std::logic_error);
}

TEST(Maze, TruncatesAtMaxSteps) {
  MazeEnv env;
  Rng rng(1);
  env.reset(rng);
  StepResult r;
  for (int k = 0; k < 50; ++k) {
    ASSERT_FALSE(r.truncated);
    r = env.step({0.0, 0.0});
    EXPECT_EQ(r.reward, 0.0);
  }
  EXPECT_TRUE(r.truncated);
  EXPECT_FALSE(r.done);
}

TEST(Maze, NonFiniteActionThrows) {
  MazeEnv env;
  Rng rng(1);
  env.reset(rng);
  EXPECT_THROW(env.step({std::nan(""), 0.0}), std::invalid_argument);
}

TEST(Maze, ObservationNoiseConstantWithinEpisode) {
  MazeEnv env(MazeConfig::standard(), 0.05);
  Rng rng(2);
  const auto o0 = env.reset(rng);
  const auto noise = env.state().noise;
  EXPECT_LE(std::abs(noise.x), 0.05);
  EXPECT_LE(std::abs(noise.y), 0.05);
  EXPECT_DOUBLE_EQ(o0.x, 0.5 + noise.x);
  const auto r = env.step({-0.1, 0.0});
  EXPECT_DOUBLE_EQ(r.observation.x, 0.4 + noise.x);
  env.reset(rng);
  EXPECT_NE(env.state().noise.x, noise.x);
}

TEST(Maze, RandomWalkSucceedsSometimes) {
  MazeEnv env;
  Rng rng(3);
  int successes = 0;
  const int episodes = 4000;
  for (int e = 0; e < episodes; ++e) {
    env.reset(rng);
    for (;;) {
      const auto r = env.step({rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)});
      if (r.done) ++successes;
      if (r.done || r.truncated) break;
    }
  }
  // uniform random walk success rate is about 0.117
  EXPECT_NEAR(successes / static_cast<double>(episodes), 0.117, 0.02);
}

TEST(MazeConfig, ParsesAndRoundTrips) {
  const auto c = parse(
      "# custom\n"
      "wall = 0.5 0 0.5 0.4\n"
      "wall = 1/3 2/3 2/3 2/3\n"
      "goal = 5/6 1/6\n"
      "max_steps = 30\n");
  ASSERT_EQ(c.walls.size(), 2u);
  EXPECT_DOUBLE_EQ(c.walls[1].a.x, 1.0 / 3);
  EXPECT_DOUBLE_EQ(c.goal.y, 1.0 / 6);
  EXPECT_EQ(c.max_steps, 30);
  EXPECT_EQ(parse(format_maze_config(c)), c);
  EXPECT_EQ(parse(format_maze_config(MazeConfig::standard())), MazeConfig::standard());
  EXPECT_TRUE(parse("walls = none\n").walls.empty());
  EXPECT_EQ(parse(""), MazeConfig::standard());
}

TEST(MazeConfig, ErrorsNameTheLine) {
  EXPECT_NE(error_of("start = 0.5 0.5\nbogus = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("\n\nwall = 0 0 1\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("goal_radius = abc\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("goal = 1/0 0.5\n").find("line 1"), std::string::npos);
  EXPECT_FALSE(error_of("start = 1.5 0.5\n").empty());
  EXPECT_FALSE(error_of("wall = 0.6 0.6 0.7 0.7\ngoal = 0.65 0.65\n").empty());
}

TEST(Maze, StandingNearGoalSucceeds) {
  MazeConfig c;
  c.start = {0.8, 0.8};
  MazeEnv env(c);
  Rng rng(1);
  env.reset(rng);
  const auto r = env.step({0.0, 0.0});
  EXPECT_EQ(r.reward, 100.0);
  EXPECT_TRUE(r.done);
}

TEST(Maze, StandingStillAtStart) {
  MazeEnv env;
  Rng rng(1);
  env.reset(rng);
  const auto r = env.step({0.0, 0.0});
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_FALSE(r.done);
  EXPECT_FALSE(r.truncated);
  EXPECT_EQ(env.state().position.x, 0.5);
  EXPECT_EQ(env.state().position.y, 0.5);
}

TEST(Maze, NoisyObservationStaysNearStart) {
  MazeEnv env(MazeConfig::standard(), 0.1);
  Rng rng(9);
  for (int k = 0; k < 200; ++k) {
    const auto o = env.reset(rng);
    EXPECT_GE(o.x, 0.4);
    EXPECT_LE(o.x, 0.6);
    EXPECT_GE(o.y, 0.4);
    EXPECT_LE(o.y, 0.6);
  }
}
