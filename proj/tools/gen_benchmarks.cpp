// Regenerates the shipped benchmark scenario files (scenarios/).
// Deterministic: fixed seeds, no wall-clock input.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "bounce/config.hpp"
#include "bounce/jps.hpp"
#include "bounce/sim.hpp"
#include "bounce/world.hpp"

using namespace bounce;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json base_scenario(const std::string& name) {
  json j;
  j["name"] = name;
  j["search"] = {{"u_max", 5.0},      {"lattice_samples", 5}, {"primitive_duration", 5.0},
                 {"time_weight", 1.0}, {"collision_weight", 1.0}, {"v_max", 2.0},
                 {"a_max", 5.0},      {"position_key_resolution", 1.0},
                 {"velocity_key_resolution", 0.1}, {"jump_points", true}};
  j["noise"] = {{"recovery_velocity_halfwidth", 0.1},
                {"planner_position_variance", 0.3},
                {"planner_position_bound", 0.9},
                {"planner_velocity_variance", 0.1},
                {"planner_velocity_bound", 0.3},
                {"seed", 1}};
  j["replan_period"] = 5.0;
  j["timeout"] = 150.0;
  return j;
}

json rect(double x0, double y0, double x1, double y1) {
  return {{"type", "rect"}, {"min", {x0, y0}}, {"max", {x1, y1}}};
}

json double_corridor() {
  json j = base_scenario("double_corridor");
  j["map"] = {{"bounds", {70.0, 70.0}},
              {"resolution", 1.0},
              {"corner_radius", 0.3},
              {"obstacles",
               json::array({
                   rect(1, 1, 69, 22),    // below the lower corridor
                   rect(1, 30, 52, 38),   // divider between the corridors
                   rect(1, 46, 69, 69),   // above the upper corridor
                   rect(62, 22, 69, 46),  // right end wall (the U-turn pocket)
               })}};
  j["start"] = {30.0, 26.0};
  j["goal"] = {30.0, 42.0};
  return j;
}

json density_map(const std::string& name, double target_fraction, std::uint64_t seed) {
  json j = base_scenario(name);
  const double w = 70.0, h = 70.0;
  const Vec2 start(5.0, 35.0), goal(65.0, 35.0);

  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng(seed + attempt * 1000003ull);
    MapSpec spec;
    spec.width_m = w;
    spec.height_m = h;
    spec.resolution = 1.0;
    spec.corner_radius = 0.3;
    json obstacles = json::array();

    double fraction = 0.0;
    int guard = 0;
    while (fraction < target_fraction && guard++ < 4000) {
      const double r = rng.uniform(1.5, 3.0);
      const Vec2 c(rng.uniform(r + 1.5, w - r - 1.5), rng.uniform(r + 1.5, h - r - 1.5));
      if ((c - start).norm() < r + 5.0 || (c - goal).norm() < r + 5.0) continue;
      spec.obstacles.emplace_back(CircleObstacle{c, r});
      const OccupancyGrid grid = build_grid(spec);
      fraction = static_cast<double>(grid.count(CellState::Occupied)) /
                 (grid.cols() * grid.rows());
      if (fraction > target_fraction + 0.004) {
        spec.obstacles.pop_back();
        continue;
      }
      obstacles.push_back({{"type", "circle"}, {"center", {c.x(), c.y()}}, {"radius", r}});
    }

    const OccupancyGrid grid = build_grid(spec);
    if (!grid.is_free(start) || !grid.is_free(goal)) continue;
    if (!jps_path(grid, start, goal)) continue;
    const double achieved =
        static_cast<double>(grid.count(CellState::Occupied)) / (grid.cols() * grid.rows());
    if (std::abs(achieved - target_fraction) > 0.006) continue;

    j["map"] = {{"bounds", {w, h}},
                {"resolution", 1.0},
                {"corner_radius", 0.3},
                {"obstacles", obstacles}};
    j["start"] = {start.x(), start.y()};
    j["goal"] = {goal.x(), goal.y()};
    std::cout << name << ": occupancy fraction " << achieved << " with " << obstacles.size()
              << " discs\n";
    return j;
  }
  throw RuntimeFault("could not generate density map " + name);
}

json nonconvex_u() {
  json j = base_scenario("nonconvex_u");
  j["map"] = {{"bounds", {40.0, 40.0}},
              {"resolution", 1.0},
              {"corner_radius", 0.3},
              {"obstacles",
               json::array({
                   rect(18, 12, 20, 28),  // closed back of the U
                   rect(20, 26, 26, 28),  // upper arm
                   rect(20, 12, 26, 14),  // lower arm
               })}};
  j["start"] = {8.0, 20.0};
  j["goal"] = {32.0, 20.0};
  j["timeout"] = 120.0;
  return j;
}

json nonconvex_l() {
  json j = base_scenario("nonconvex_l");
  j["map"] = {{"bounds", {40.0, 40.0}},
              {"resolution", 1.0},
              {"corner_radius", 0.3},
              {"obstacles",
               json::array({
                   rect(18, 12, 20, 28),
                   rect(20, 12, 28, 14),
               })}};
  j["start"] = {8.0, 20.0};
  j["goal"] = {32.0, 20.0};
  j["timeout"] = 120.0;
  return j;
}

void write(const fs::path& dir, const json& j) {
  const fs::path file = dir / (j.at("name").get<std::string>() + ".json");
  std::ofstream out(file);
  out << j.dump(2) << '\n';
  // parse back through the strict loader as a self-check
  load_scenario(file.string());
  std::cout << "wrote " << file.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? argv[1] : "scenarios";
  fs::create_directories(dir);
  write(dir, double_corridor());
  write(dir, density_map("density_093", 0.093, 11));
  write(dir, density_map("density_135", 0.135, 12));
  write(dir, density_map("density_207", 0.207, 13));
  write(dir, nonconvex_u());
  write(dir, nonconvex_l());
  return 0;
}
