// omnet: train and analyse masked-subnetwork SAC agents on the 2D maze.

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "omnet/omnet.hpp"

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::string s = text;
  for (auto& c : s)
    if (c == ',') c = ' ';
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

std::uint64_t to_u64(const std::string& tok, const char* what) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw omnet::ConfigError(std::string(what) + ": expected a non-negative integer, got '" + tok + "'");
  try {
    return std::stoull(tok);
  } catch (const std::exception&) {
    throw omnet::ConfigError(std::string(what) + ": integer out of range: '" + tok + "'");
  }
}

std::vector<std::size_t> to_sizes(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  for (const auto& t : split_list(text)) out.push_back(to_u64(t, what));
  return out;
}

std::vector<double> to_reals(const std::string& text, const char* what) {
  std::vector<double> out;
  for (const auto& t : split_list(text)) {
    try {
      out.push_back(omnet::detail::parse_scalar(t, 0));
    } catch (const std::invalid_argument&) {
      throw omnet::ConfigError(std::string(what) + ": not a number: '" + t + "'");
    }
  }
  return out;
}

struct Common {
  std::string config;
  std::string seeds;
  std::string out;
  std::size_t steps = 0;
  std::vector<std::string> overrides;
  bool quiet = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "run configuration file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seeds", seeds, "comma-separated seed list (overrides run.seeds)");
    cmd->add_option("--out", out, "output directory (overrides run.output_dir)");
    cmd->add_option("--steps", steps, "total environment steps (overrides run.total_env_steps)");
    cmd->add_option("--set", overrides, "section.key=value override, repeatable");
    cmd->add_flag("--quiet", quiet, "suppress progress lines");
  }

  omnet::RunConfig load() const {
    auto cfg = omnet::load_run_config(config);
    auto extra = overrides;
    if (!seeds.empty()) extra.push_back("run.seeds=" + std::string(seeds));
    if (!out.empty()) extra.push_back("run.output_dir=" + out);
    if (steps) extra.push_back("run.total_env_steps=" + std::to_string(steps));
    for (auto& e : extra)
      if (e.rfind("run.seeds=", 0) == 0)
        for (auto& c : e)
          if (c == ',') c = ' ';
    if (!extra.empty()) omnet::apply_overrides(cfg, extra);
    return cfg;
  }
  std::ostream* progress() const { return quiet ? nullptr : &std::cerr; }
};

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Masked-subnetwork soft actor-critic on a 2D maze"};
  app.require_subcommand(1);

  Common train_opts, ablate_opts, vis_opts, bias_opts, noise_opts;
  auto* train = app.add_subcommand("train", "train every seed and write run directories");
  train_opts.attach(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint deterministically");
  std::string checkpoint;
  std::size_t episodes = 0;
  eval->add_option("--checkpoint", checkpoint, "checkpoint.bin from a run directory")->required();
  eval->add_option("--episodes", episodes, "episodes per subnetwork (default: stored config)");

  auto* ablate = app.add_subcommand("ablate", "score a grid of sparsity, subnet-count or infinity-mode values");
  ablate_opts.attach(ablate);
  std::string axis, values;
  ablate->add_option("--axis", axis, "sparsity | subnet_count | infinity")->required();
  ablate->add_option("--values", values, "comma-separated values (default grid per axis)");

  auto* vis = app.add_subcommand("visitation", "post-warm-up visitation heatmaps, omnet vs dense actor");
  vis_opts.attach(vis);
  std::string budgets = "100,500,1000";
  vis->add_option("--budgets", budgets, "comma-separated post-warm-up step budgets");

  auto* bias = app.add_subcommand("valuebias", "value-estimation bias at scheduled env steps");
  bias_opts.attach(bias);
  std::string schedule;
  bias->add_option("--schedule", schedule, "comma-separated env steps")->required();

  auto* noise = app.add_subcommand("noise-sweep", "train and evaluate across observation-noise scales");
  noise_opts.attach(noise);
  std::string sigmas = "0,0.05,0.1";
  noise->add_option("--sigmas", sigmas, "comma-separated noise scales");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "omnet: error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*train) {
      const auto results = omnet::cmd_train(train_opts.load(), train_opts.progress());
      std::cout << omnet::summary_csv(results);
    } else if (*eval) {
      const auto r = omnet::cmd_eval(checkpoint, episodes);
      std::cout << omnet::eval_csv({r}, r.per_subnet.size());
    } else if (*ablate) {
      const auto cfg = ablate_opts.load();
      auto list = split_list(values);
      if (values.empty()) list = omnet::default_ablation_values(omnet::parse_ablation_axis(axis));
      std::cout << omnet::score_table_csv(axis, omnet::cmd_ablate(cfg, axis, list, ablate_opts.progress()));
    } else if (*vis) {
      const auto r = omnet::cmd_visitation(vis_opts.load(), to_sizes(budgets, "--budgets"), vis_opts.progress());
      std::cout << "variant,budget,covered_cells\n";
      for (const auto& row : r.rows) std::cout << row.variant << ',' << row.budget << ',' << row.covered_cells << '\n';
    } else if (*bias) {
      const auto curve = omnet::cmd_valuebias(bias_opts.load(), to_sizes(schedule, "--schedule"),
                                              bias_opts.progress(), &std::cerr);
      if (!curve.empty()) std::cout << omnet::value_bias_csv(curve);
    } else if (*noise) {
      std::cout << omnet::score_table_csv(
          "noise_scale",
          omnet::cmd_noise_sweep(noise_opts.load(), to_reals(sigmas, "--sigmas"), noise_opts.progress()));
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "omnet: error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "omnet: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
