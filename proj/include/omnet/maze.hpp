#pragma once

// Sparse-reward continuous 2D maze on the unit square with zero-thickness walls
// and per-episode constant observation noise.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnet/rng.hpp"

namespace omnet {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct Segment {
  Vec2 a;
  Vec2 b;
  friend bool operator==(const Segment&, const Segment&) = default;
};

inline constexpr double kContactTolerance = 1e-12;

inline double point_segment_distance(Vec2 p, const Segment& s) {
  const Vec2 d = s.b - s.a;
  const double len2 = dot(d, d);
  double t = len2 > 0.0 ? dot(p - s.a, d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return norm(p - (s.a + t * d));
}

/// True when the two closed segments come within `tol` of each other.
inline bool segments_touch(const Segment& s, const Segment& t, double tol = kContactTolerance) {
  const double d1 = cross(s.b - s.a, t.a - s.a);
  const double d2 = cross(s.b - s.a, t.b - s.a);
  const double d3 = cross(t.b - t.a, s.a - t.a);
  const double d4 = cross(t.b - t.a, s.b - t.a);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  return std::min({point_segment_distance(s.a, t), point_segment_distance(s.b, t), point_segment_distance(t.a, s),
                   point_segment_distance(t.b, s)}) <= tol;
}

struct MazeConfig {
  std::vector<Segment> walls;
  Vec2 start{0.5, 0.5};
  Vec2 goal{5.0 / 6.0, 5.0 / 6.0};
  double goal_radius = 0.1;
  int max_steps = 50;
  double action_bound = 0.2;
  double success_reward = 100.0;

  /// Three-sided enclosure around the start, open on the left.
  static MazeConfig standard() {
    MazeConfig c;
    const double lo = 1.0 / 3.0, hi = 2.0 / 3.0;
    c.walls = {{{hi, lo}, {hi, hi}}, {{lo, lo}, {hi, lo}}, {{lo, hi}, {hi, hi}}};
    return c;
  }

  /// Walls plus the four sides of the unit square.
  std::vector<Segment> all_barriers() const {
    auto out = walls;
    out.push_back({{0, 0}, {1, 0}});
    out.push_back({{1, 0}, {1, 1}});
    out.push_back({{1, 1}, {0, 1}});
    out.push_back({{0, 1}, {0, 0}});
    return out;
  }

  void validate() const {
    auto inside = [](Vec2 p) { return p.x > 0.0 && p.x < 1.0 && p.y > 0.0 && p.y < 1.0; };
    if (!inside(start)) throw std::invalid_argument("maze: start must lie strictly inside the unit square");
    if (!inside(goal)) throw std::invalid_argument("maze: goal must lie strictly inside the unit square");
    if (!(goal_radius > 0.0)) throw std::invalid_argument("maze: goal_radius must be positive");
    if (max_steps < 1) throw std::invalid_argument("maze: max_steps must be >= 1");
    if (!(action_bound > 0.0)) throw std::invalid_argument("maze: action_bound must be positive");
    for (const auto& w : walls) {
      for (Vec2 p : {w.a, w.b})
        if (p.x < 0 || p.x > 1 || p.y < 0 || p.y > 1)
          throw std::invalid_argument("maze: wall endpoint outside the unit square");
      if (point_segment_distance(start, w) <= kContactTolerance)
        throw std::invalid_argument("maze: start lies on a wall");
      if (point_segment_distance(goal, w) < goal_radius)
        throw std::invalid_argument("maze: goal region intersects a wall");
    }
  }

  friend bool operator==(const MazeConfig&, const MazeConfig&) = default;
};

namespace detail {

/// Accepts plain decimals and simple fractions such as "5/6".
inline double parse_scalar(const std::string& tok, int line) {
  auto parse = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || !std::isfinite(v))
      throw std::invalid_argument("line " + std::to_string(line) + ": not a number: '" + tok + "'");
    return v;
  };
  const auto slash = tok.find('/');
  if (slash == std::string::npos) return parse(tok);
  const double den = parse(tok.substr(slash + 1));
  if (den == 0.0) throw std::invalid_argument("line " + std::to_string(line) + ": zero denominator");
  return parse(tok.substr(0, slash)) / den;
}

inline std::vector<double> parse_scalars(const std::string& value, int line) {
  std::istringstream is(value);
  std::vector<double> out;
  for (std::string tok; is >> tok;) out.push_back(parse_scalar(tok, line));
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Key-value maze description. `wall` may repeat; the first `wall` line
/// replaces the default geometry, and `walls = none` gives an empty maze.
inline MazeConfig parse_maze_config(std::istream& in) {
  MazeConfig c = MazeConfig::standard();
  bool walls_given = false;
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    auto line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    auto numbers = [&](std::size_t want) {
      auto v = detail::parse_scalars(value, line_no);
      if (v.size() != want)
        throw std::invalid_argument("line " + std::to_string(line_no) + ": '" + key + "' expects " +
                                    std::to_string(want) + " number(s)");
      return v;
    };
    if (key == "wall" || key == "walls") {
      if (!walls_given) c.walls.clear();
      walls_given = true;
      if (key == "walls" && value == "none") continue;
      const auto v = numbers(4);
      c.walls.push_back({{v[0], v[1]}, {v[2], v[3]}});
    } else if (key == "start") {
      const auto v = numbers(2);
      c.start = {v[0], v[1]};
    } else if (key == "goal") {
      const auto v = numbers(2);
      c.goal = {v[0], v[1]};
    } else if (key == "goal_radius") {
      c.goal_radius = numbers(1)[0];
    } else if (key == "max_steps") {
      const double v = numbers(1)[0];
      if (v != std::floor(v)) throw std::invalid_argument("line " + std::to_string(line_no) + ": max_steps must be an integer");
      c.max_steps = static_cast<int>(v);
    } else if (key == "action_bound") {
      c.action_bound = numbers(1)[0];
    } else if (key == "success_reward") {
      c.success_reward = numbers(1)[0];
    } else {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": unknown maze key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline MazeConfig load_maze_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open maze config '" + path + "'");
  try {
    return parse_maze_config(in);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

inline std::string format_maze_config(const MazeConfig& c) {
  std::ostringstream os;
  os.precision(17);
  if (c.walls.empty()) os << "walls = none\n";
  for (const auto& w : c.walls) os << "wall = " << w.a.x << ' ' << w.a.y << ' ' << w.b.x << ' ' << w.b.y << '\n';
  os << "start = " << c.start.x << ' ' << c.start.y << '\n'
     << "goal = " << c.goal.x << ' ' << c.goal.y << '\n'
     << "goal_radius = " << c.goal_radius << '\n'
     << "max_steps = " << c.max_steps << '\n'
     << "action_bound = " << c.action_bound << '\n'
     << "success_reward = " << c.success_reward << '\n';
  return os.str();
}

struct EnvState {
  Vec2 position;
  int step_count = 0;
  Vec2 noise;
  bool finished = false;
};

struct StepResult {
  Vec2 observation;
  double reward = 0.0;
  bool done = false;       // reached the goal
  bool truncated = false;  // ran out of steps
};

inline Vec2 observe(const EnvState& s) { return s.position + s.noise; }

inline EnvState reset(const MazeConfig& config, double noise_scale, Rng& rng) {
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("reset: noise scale must be >= 0");
  EnvState s;
  s.position = config.start;
  if (noise_scale > 0.0) s.noise = {rng.uniform(-noise_scale, noise_scale), rng.uniform(-noise_scale, noise_scale)};
  return s;
}

/// True when moving from `from` to `to` would contact any wall or the boundary.
inline bool move_blocked(const MazeConfig& config, Vec2 from, Vec2 to) {
  const Segment path{from, to};
  if (to.x <= 0.0 || to.x >= 1.0 || to.y <= 0.0 || to.y >= 1.0) return true;
  for (const auto& w : config.walls)
    if (segments_touch(path, w)) return true;
  return false;
}

inline StepResult step(EnvState& state, Vec2 action, const MazeConfig& config) {
  if (state.finished) throw std::logic_error("step: episode already finished; call reset first");
  if (!std::isfinite(action.x) || !std::isfinite(action.y)) throw std::invalid_argument("step: non-finite action");
  const double b = config.action_bound;
  const Vec2 clipped{std::clamp(action.x, -b, b), std::clamp(action.y, -b, b)};
  const Vec2 proposed = state.position + clipped;
  if (!move_blocked(config, state.position, proposed)) state.position = proposed;
  ++state.step_count;
  StepResult r;
  if (norm(state.position - config.goal) < config.goal_radius) {
    r.reward = config.success_reward;
    r.done = true;
  } else if (state.step_count >= config.max_steps) {
    r.truncated = true;
  }
  state.finished = r.done || r.truncated;
  r.observation = observe(state);
  return r;
}

/// Value-type environment bundling config, noise scale and episode state.
class MazeEnv {
 public:
  static constexpr std::size_t kObsDim = 2;
  static constexpr std::size_t kActDim = 2;

  MazeEnv() : MazeEnv(MazeConfig::standard()) {}
  explicit MazeEnv(MazeConfig config, double noise_scale = 0.0)
      : config_(std::move(config)), noise_scale_(noise_scale) {
    config_.validate();
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("MazeEnv: noise scale must be >= 0");
    state_.position = config_.start;
    state_.finished = true;
  }

  Vec2 reset(Rng& rng) {
    state_ = omnet::reset(config_, noise_scale_, rng);
    return observe(state_);
  }

  StepResult step(Vec2 action) { return omnet::step(state_, action, config_); }

  const MazeConfig& config() const noexcept { return config_; }
  const EnvState& state() const noexcept { return state_; }
  EnvState& state() noexcept { return state_; }
  double noise_scale() const noexcept { return noise_scale_; }
  double action_bound() const noexcept { return config_.action_bound; }
  Vec2 observation() const { return observe(state_); }

 private:
  MazeConfig config_;
  double noise_scale_ = 0.0;
  EnvState state_;
};

}  // namespace omnet
