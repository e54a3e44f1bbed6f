#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "bounce/artifacts.hpp"
#include "bounce/config.hpp"

namespace fs = std::filesystem;
using namespace bounce;

namespace {

int log_level() {
  const char* env = std::getenv("BOUNCE_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "error") return 0;
  if (v == "debug") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[bounce] " << msg << '\n';
}

std::vector<std::uint64_t> expand_seeds(std::uint64_t seed, const std::string& range) {
  if (range.empty()) return {seed};
  const auto dots = range.find("..");
  if (dots == std::string::npos)
    throw InvalidArgument("--seeds expects the form A..B");
  const std::uint64_t lo = std::stoull(range.substr(0, dots));
  const std::uint64_t hi = std::stoull(range.substr(dots + 2));
  if (hi < lo) throw InvalidArgument("--seeds range is empty");
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
  return seeds;
}

int run_plan(const Scenario& scenario, const fs::path& out_dir) {
  const OccupancyGrid grid = build_grid(scenario.map);
  const FlatState start{scenario.start, scenario.start_velocity};
  const PrimitivePath path = plan(start, scenario.goal, grid, scenario.search);
  write_plan_json((out_dir / "plan.json").string(), path, scenario.search.recovery_time);
  if (!path.found) {
    info("no plan: " + path.failure);
    return 1;
  }
  if (!path.edges.empty()) {
    RefineParams rp;
    rp.gto = scenario.gto;
    rp.robot_radius = scenario.arm.robot_radius;
    const auto traj = refine(start, path, grid, scenario.search, rp);
    write_trajectory_csv((out_dir / "trajectory.csv").string(), traj, scenario.control_rate);
  }
  info("plan: cost " + std::to_string(path.cost) + ", closed nodes " +
       std::to_string(path.closed_nodes));
  return 0;
}

int run_episodes(const Scenario& scenario, const std::vector<std::uint64_t>& seeds,
                 const fs::path& out_dir) {
  bool all_ok = true;
  for (const auto seed : seeds) {
    const EpisodeResult episode = run_episode(scenario, seed);
    const std::string tag = std::to_string(seed);
    write_episode_json((out_dir / ("episode_" + tag + ".json")).string(), episode);
    write_trace_csv((out_dir / ("trace_" + tag + ".csv")).string(), episode);
    info("episode seed " + tag + ": " +
         (episode.outcome == Outcome::Success
              ? "Success"
              : (episode.outcome == Outcome::Timeout ? "Timeout" : "Trapped")));
    all_ok = all_ok && episode.outcome == Outcome::Success;
  }
  return all_ok ? 0 : 1;
}

int run_bench(const std::vector<Scenario>& scenarios, const std::vector<std::uint64_t>& seeds,
              const fs::path& out_dir) {
  std::vector<BenchmarkRow> rows;
  for (const auto& scenario : scenarios) {
    for (const auto seed : seeds) {
      const EpisodeResult episode = run_episode(scenario, seed);
      rows.push_back({scenario.name, seed, episode.metrics});
      info("bench " + scenario.name + " seed " + std::to_string(seed) + ": " +
           (episode.metrics.success ? "success" : "failure"));
    }
  }
  write_benchmark_summary((out_dir / "summary.csv").string(), rows);
  write_benchmark_metrics((out_dir / "metrics.csv").string(), rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collision-inclusive planning and simulation toolkit"};
  std::vector<std::string> scenario_paths;
  std::string mode = "episode";
  std::uint64_t seed = 1;
  std::string seed_range;
  std::string out_dir_str = "out";
  std::vector<std::string> overrides;
  std::string plot_dir;

  app.add_option("--scenario", scenario_paths, "scenario file(s), JSON");
  app.add_option("--mode", mode, "plan | episode | bench")->check(CLI::IsMember({"plan", "episode", "bench"}));
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--seeds", seed_range, "seed range A..B (inclusive)");
  app.add_option("--out", out_dir_str, "output directory");
  app.add_option("--set", overrides, "override scenario keys, key.path=value (repeatable)");
  app.add_option("--plot-data", plot_dir, "write overlay CSVs for an artifacts directory and exit");
  CLI11_PARSE(app, argc, argv);

  try {
    if (!plot_dir.empty()) {
      export_plotdata(plot_dir);
      return 0;
    }
    if (scenario_paths.empty()) throw InvalidArgument("--scenario is required");

    std::map<std::string, std::string> override_map;
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw InvalidArgument("--set expects key=value: " + o);
      override_map[o.substr(0, eq)] = o.substr(eq + 1);
    }

    std::vector<Scenario> scenarios;
    for (const auto& path : scenario_paths) scenarios.push_back(load_scenario(path, override_map));

    const fs::path out_dir(out_dir_str);
    fs::create_directories(out_dir);
    std::ofstream((out_dir / "effective_config.json"))
        << dump_effective_config(scenarios.front()).dump(2) << '\n';

    const auto seeds = expand_seeds(seed, seed_range);
    if (mode == "plan") return run_plan(scenarios.front(), out_dir);
    if (mode == "episode") return run_episodes(scenarios.front(), seeds, out_dir);
    return run_bench(scenarios, seeds, out_dir);
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
