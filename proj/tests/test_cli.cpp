#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bounce/artifacts.hpp"
#include "bounce/config.hpp"

using namespace bounce;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json minimal_scenario_json() {
  json j;
  j["map"] = {{"bounds", {20.0, 20.0}},
              {"resolution", 1.0},
              {"obstacles", json::array({{{"type", "rect"}, {"min", {8, 8}}, {"max", {12, 10}}}})}};
  j["start"] = {4.0, 4.0};
  j["goal"] = {16.0, 16.0};
  return j;
}

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("bounce_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_json(const fs::path& file, const json& j) {
  std::ofstream(file) << j.dump(2);
  return file.string();
}

int run_cli(const std::string& args) {
  const char* bin = std::getenv("BOUNCE_BIN");
  const std::string cmd = std::string(bin ? bin : "../bounce") + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("scenario loading applies and documents defaults") {
  const auto dir = temp_dir("load");
  const auto file = write_json(dir / "s.json", minimal_scenario_json());
  const Scenario s = load_scenario(file);
  CHECK(s.search.v_max == 2.0);
  CHECK(s.replan_period == 5.0);
  CHECK(s.search.recovery_time == s.recovery.horizon);
  CHECK(s.search.flip_speed_limit > 0.0);

  const json dump = dump_effective_config(s);
  CHECK(dump.contains("search"));
  CHECK(dump.contains("gto"));
  CHECK(dump.contains("noise"));
  CHECK(dump["search"]["v_max"] == 2.0);
}

TEST_CASE("effective config round-trips") {
  const auto dir = temp_dir("roundtrip");
  const auto file = write_json(dir / "s.json", minimal_scenario_json());
  const Scenario s1 = load_scenario(file);
  const json d1 = dump_effective_config(s1);
  const auto file2 = write_json(dir / "s2.json", d1);
  const Scenario s2 = load_scenario(file2);
  CHECK(dump_effective_config(s2) == d1);
}

TEST_CASE("strict parsing rejects unknown keys and bad values") {
  const auto dir = temp_dir("strict");
  json bad = minimal_scenario_json();
  bad["serach"] = json::object();  // typo
  CHECK_THROWS_WITH_AS(load_scenario(write_json(dir / "a.json", bad)),
                       doctest::Contains("serach"), InvalidArgument);

  json typo = minimal_scenario_json();
  typo["search"] = {{"colision_weight", 10.0}};
  CHECK_THROWS_WITH_AS(load_scenario(write_json(dir / "b.json", typo)),
                       doctest::Contains("colision_weight"), InvalidArgument);

  json negative = minimal_scenario_json();
  negative["replan_period"] = -2.0;
  CHECK_THROWS_WITH_AS(load_scenario(write_json(dir / "c.json", negative)),
                       doctest::Contains("T_rep"), InvalidArgument);
}

TEST_CASE("overrides rewrite nested keys") {
  const auto dir = temp_dir("override");
  const auto file = write_json(dir / "s.json", minimal_scenario_json());
  const Scenario s =
      load_scenario(file, {{"search.collision_weight", "100"}, {"name", "patched"}});
  CHECK(s.search.collision_weight == 100.0);
  CHECK(s.name == "patched");
  CHECK(dump_effective_config(s)["search"]["collision_weight"] == 100.0);
}

TEST_CASE("plan and episode artifacts serialize") {
  const auto dir = temp_dir("artifacts");
  PrimitivePath path;
  path.found = true;
  path.cost = 12.5;
  path.closed_nodes = 42;
  PrimitiveEdge e;
  e.control = Vec2(1, 0);
  e.duration = 2.0;
  e.cost = 4.0;
  path.edges.push_back(e);
  write_plan_json((dir / "plan.json").string(), path, 0.5);
  json parsed;
  std::ifstream(dir / "plan.json") >> parsed;
  CHECK(parsed["N_p"] == 42);
  CHECK(parsed["edges"].size() == 1);
  CHECK(parsed["edges"][0]["zeta"] == 0);

  EpisodeResult episode;
  episode.outcome = Outcome::Success;
  episode.trace.push_back({0.0, Vec2(1, 1), Vec2(0, 0), Vec2(0, 0)});
  episode.trace.push_back({0.1, Vec2(1.1, 1), Vec2(1, 0), Vec2(0.5, 0)});
  episode.events.push_back({0.05, "collision", "contact", Vec2(1, 1)});
  episode.metrics = compute_metrics(episode, 0.1);
  episode.metrics.success = true;
  write_episode_json((dir / "episode_1.json").string(), episode);
  write_trace_csv((dir / "trace_1.csv").string(), episode);
  json ep;
  std::ifstream(dir / "episode_1.json") >> ep;
  CHECK(ep["outcome"] == "Success");
  CHECK(ep["events"].size() == 1);

  std::vector<BenchmarkRow> rows;
  rows.push_back({"map_a", 1, episode.metrics});
  rows.push_back({"map_a", 2, episode.metrics});
  write_benchmark_summary((dir / "summary.csv").string(), rows);
  write_benchmark_metrics((dir / "metrics.csv").string(), rows);
  std::ifstream summary(dir / "summary.csv");
  std::string header, row;
  std::getline(summary, header);
  CHECK(header.find("comp_time_mean_s") == 9);  // scenario, then Table-style order
  int data_rows = 0;
  while (std::getline(summary, row)) ++data_rows;
  CHECK(data_rows == 1);  // one scenario, aggregated over seeds
}

TEST_CASE("plot data export joins traces, outlines, and markers") {
  const auto dir = temp_dir("plotdata");
  const auto file = write_json(dir / "s.json", minimal_scenario_json());
  const Scenario s = load_scenario(file);
  std::ofstream(dir / "effective_config.json") << dump_effective_config(s).dump(2);

  EpisodeResult episode;
  episode.outcome = Outcome::Success;
  episode.trace.push_back({0.0, Vec2(4, 4), Vec2(0, 0), Vec2(0, 0)});
  episode.trace.push_back({0.1, Vec2(4.2, 4), Vec2(2, 0), Vec2(0, 0)});
  episode.events.push_back({0.05, "collision", "contact", Vec2(4.1, 4)});
  episode.metrics = compute_metrics(episode, 0.1);
  write_episode_json((dir / "episode_7.json").string(), episode);
  write_trace_csv((dir / "trace_7.csv").string(), episode);

  export_plotdata(dir.string());
  std::ifstream overlay(dir / "overlay_7.csv");
  REQUIRE(overlay.good());
  std::string line;
  bool has_traj = false, has_outline = false, has_marker = false;
  while (std::getline(overlay, line)) {
    has_traj = has_traj || line.rfind("trajectory,", 0) == 0;
    has_outline = has_outline || line.rfind("obstacle_outline,", 0) == 0;
    has_marker = has_marker || line.rfind("collision,", 0) == 0;
  }
  CHECK(has_traj);
  CHECK(has_outline);
  CHECK(has_marker);

  const auto empty = temp_dir("plotdata_empty");
  CHECK_THROWS_AS(export_plotdata(empty.string()), InvalidArgument);
}

TEST_CASE("command line modes and exit codes") {
  const auto dir = temp_dir("cli");
  json open_world = minimal_scenario_json();
  open_world["map"]["obstacles"] = json::array();
  const auto scenario = write_json(dir / "open.json", open_world);

  // plan mode: exit 0, plan + trajectory artifacts
  CHECK(run_cli("--scenario " + scenario + " --mode plan --out " + (dir / "plan_out").string()) ==
        0);
  CHECK(fs::exists(dir / "plan_out" / "plan.json"));
  CHECK(fs::exists(dir / "plan_out" / "trajectory.csv"));
  CHECK(fs::exists(dir / "plan_out" / "effective_config.json"));

  // episode mode on a sealed goal: exit 1, Trapped recorded
  json sealed = minimal_scenario_json();
  sealed["map"]["obstacles"] = json::array({
      {{"type", "rect"}, {"min", {12, 12}}, {"max", {18, 13}}},
      {{"type", "rect"}, {"min", {12, 17}}, {"max", {18, 18}}},
      {{"type", "rect"}, {"min", {12, 13}}, {"max", {13, 17}}},
      {{"type", "rect"}, {"min", {17, 13}}, {"max", {18, 17}}},
  });
  sealed["goal"] = {15.0, 15.0};
  sealed["timeout"] = 250.0;  // enough to circle the box and conclude Trapped
  sealed["search"] = {{"u_max", 1.0}, {"lattice_samples", 1}, {"primitive_duration", 2.0},
                      {"v_max", 1.0}, {"a_max", 2.0}};
  sealed["noise"] = {{"recovery_velocity_halfwidth", 0.0},
                     {"planner_position_variance", 0.0},
                     {"planner_velocity_variance", 0.0}};
  const auto sealed_file = write_json(dir / "sealed.json", sealed);
  CHECK(run_cli("--scenario " + sealed_file + " --mode episode --seed 1 --out " +
                (dir / "ep_out").string()) == 1);
  json ep;
  std::ifstream(dir / "ep_out" / "episode_1.json") >> ep;
  CHECK(ep["outcome"] == "Trapped");

  // bench mode: summary with one row, three seeds
  CHECK(run_cli("--scenario " + scenario + " --mode bench --seeds 1..3 --out " +
                (dir / "bench_out").string()) == 0);
  std::ifstream metrics(dir / "bench_out" / "metrics.csv");
  int lines = 0;
  std::string line;
  while (std::getline(metrics, line)) ++lines;
  CHECK(lines == 4);  // header + 3 episodes

  // config errors exit with 2
  json broken = minimal_scenario_json();
  broken["unknown_key"] = 1;
  const auto broken_file = write_json(dir / "broken.json", broken);
  CHECK(run_cli("--scenario " + broken_file + " --mode plan --out " + (dir / "x").string()) == 2);
  CHECK(run_cli("--mode plan") == 2);
}
