#include "bounce/config.hpp"

#include <fstream>
#include <set>

#include "bounce/recovery.hpp"

namespace bounce {

using nlohmann::json;

namespace {

// Tracks key consumption so unknown keys are rejected with their full path.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument(path_ + ": expected an object");
  }
  ~StrictObject() = default;

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    consumed_.insert(key);
    if (!j_.contains(key)) return fallback;
    return read<T>(key);
  }
  template <typename T>
  T require(const std::string& key) {
    consumed_.insert(key);
    if (!j_.contains(key)) throw InvalidArgument(path_ + "." + key + ": required key missing");
    return read<T>(key);
  }
  const json& raw(const std::string& key) {
    consumed_.insert(key);
    return j_.at(key);
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!consumed_.count(it.key()))
        throw InvalidArgument(path_ + "." + it.key() + ": unknown key");
    }
  }

 private:
  template <typename T>
  T read(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidArgument(path_ + "." + key + ": " + e.what());
    }
  }
  const json& j_;
  std::string path_;
  std::set<std::string> consumed_;
};

Vec2 read_vec2(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2)
    throw InvalidArgument(path + ": expected [x, y]");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

ExpCost read_exp_cost(const json& j, const std::string& path, const ExpCost& fallback) {
  StrictObject o(j, path);
  ExpCost c;
  c.magnitude = o.get("magnitude", fallback.magnitude);
  c.threshold = o.get("threshold", fallback.threshold);
  c.rise_rate = o.get("rise_rate", fallback.rise_rate);
  o.finish();
  return c;
}

json exp_cost_to_json(const ExpCost& c) {
  return {{"magnitude", c.magnitude}, {"threshold", c.threshold}, {"rise_rate", c.rise_rate}};
}

}  // namespace

MapSpec map_spec_from_json(const json& j) {
  StrictObject o(j, "map");
  MapSpec spec;
  const json bounds = o.raw("bounds");
  if (!bounds.is_array() || bounds.size() != 2)
    throw InvalidArgument("map.bounds: expected [width, height]");
  spec.width_m = bounds[0].get<double>();
  spec.height_m = bounds[1].get<double>();
  spec.resolution = o.get("resolution", 1.0);
  spec.corner_radius = o.get("corner_radius", 0.3);
  if (o.has("obstacles")) {
    const json& obs = o.raw("obstacles");
    if (!obs.is_array()) throw InvalidArgument("map.obstacles: expected an array");
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const std::string path = "map.obstacles[" + std::to_string(i) + "]";
      StrictObject oo(obs[i], path);
      const std::string type = oo.require<std::string>("type");
      if (type == "rect") {
        RectObstacle r;
        r.min = read_vec2(oo.raw("min"), path + ".min");
        r.max = read_vec2(oo.raw("max"), path + ".max");
        spec.obstacles.emplace_back(r);
      } else if (type == "circle") {
        CircleObstacle c;
        c.center = read_vec2(oo.raw("center"), path + ".center");
        c.radius = oo.require<double>("radius");
        spec.obstacles.emplace_back(c);
      } else if (type == "polygon") {
        PolygonObstacle p;
        const json& verts = oo.raw("vertices");
        if (!verts.is_array()) throw InvalidArgument(path + ".vertices: expected an array");
        for (std::size_t k = 0; k < verts.size(); ++k)
          p.vertices.push_back(read_vec2(verts[k], path + ".vertices[" + std::to_string(k) + "]"));
        spec.obstacles.emplace_back(p);
      } else {
        throw InvalidArgument(path + ".type: unknown obstacle type '" + type + "'");
      }
      oo.finish();
    }
  }
  o.finish();
  return spec;
}

json map_spec_to_json(const MapSpec& spec) {
  json obstacles = json::array();
  for (const auto& obs : spec.obstacles) {
    std::visit(
        [&](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, RectObstacle>) {
            obstacles.push_back({{"type", "rect"},
                                 {"min", {o.min.x(), o.min.y()}},
                                 {"max", {o.max.x(), o.max.y()}}});
          } else if constexpr (std::is_same_v<T, CircleObstacle>) {
            obstacles.push_back({{"type", "circle"},
                                 {"center", {o.center.x(), o.center.y()}},
                                 {"radius", o.radius}});
          } else {
            json verts = json::array();
            for (const auto& v : o.vertices) verts.push_back({v.x(), v.y()});
            obstacles.push_back({{"type", "polygon"}, {"vertices", verts}});
          }
        },
        obs);
  }
  return {{"bounds", {spec.width_m, spec.height_m}},
          {"resolution", spec.resolution},
          {"corner_radius", spec.corner_radius},
          {"obstacles", obstacles}};
}

Scenario scenario_from_json(const json& j) {
  StrictObject o(j, "scenario");
  Scenario s;
  s.name = o.get<std::string>("name", "scenario");
  s.map = map_spec_from_json(o.raw("map"));
  s.start = read_vec2(o.raw("start"), "scenario.start");
  s.goal = read_vec2(o.raw("goal"), "scenario.goal");
  if (o.has("start_velocity"))
    s.start_velocity = read_vec2(o.raw("start_velocity"), "scenario.start_velocity");
  s.replan_period = o.get("replan_period", s.replan_period);
  s.timeout = o.get("timeout", s.timeout);
  s.control_rate = o.get("control_rate", s.control_rate);
  s.scan_beams = o.get("scan_beams", s.scan_beams);
  s.scan_range = o.get("scan_range", s.scan_range);
  s.explore_distance = o.get("explore_distance", s.explore_distance);
  s.stop_rule = o.get("stop_rule", s.stop_rule);
  s.track_kp = o.get("track_kp", s.track_kp);
  s.track_kd = o.get("track_kd", s.track_kd);

  if (o.has("arm")) {
    StrictObject a(o.raw("arm"), "scenario.arm");
    s.arm.mass = a.get("mass", s.arm.mass);
    s.arm.spring_constant = a.get("spring_constant", s.arm.spring_constant);
    s.arm.damping = a.get("damping", s.arm.damping);
    s.arm.neutral_length = a.get("neutral_length", s.arm.neutral_length);
    s.arm.pretension_length = a.get("pretension_length", s.arm.pretension_length);
    s.arm.max_load_length = a.get("max_load_length", s.arm.max_load_length);
    s.arm.friction = a.get("friction", s.arm.friction);
    s.arm.robot_radius = a.get("robot_radius", s.arm.robot_radius);
    s.arm.max_input_accel = a.get("max_input_accel", s.arm.max_input_accel);
    s.arm.max_flip_angle = a.get("max_flip_angle_deg", s.arm.max_flip_angle * 180.0 / M_PI) *
                           M_PI / 180.0;
    s.arm.arm_count = a.get("arm_count", s.arm.arm_count);
    a.finish();
  }
  if (o.has("recovery")) {
    StrictObject r(o.raw("recovery"), "scenario.recovery");
    s.recovery.displacement_weight = r.get("displacement_weight", s.recovery.displacement_weight);
    s.recovery.input_weight = r.get("input_weight", s.recovery.input_weight);
    s.recovery.sample_rate = r.get("sample_rate", s.recovery.sample_rate);
    s.recovery.horizon = r.get("horizon", s.recovery.horizon);
    r.finish();
  }
  if (o.has("orientation")) {
    StrictObject g(o.raw("orientation"), "scenario.orientation");
    s.orientation.k_r = g.get("k_r", s.orientation.k_r);
    s.orientation.k_omega = g.get("k_omega", s.orientation.k_omega);
    g.finish();
  }
  if (o.has("search")) {
    StrictObject c(o.raw("search"), "scenario.search");
    SearchConfig& sc = s.search;
    sc.u_max = c.get("u_max", sc.u_max);
    sc.lattice_samples = c.get("lattice_samples", sc.lattice_samples);
    sc.primitive_duration = c.get("primitive_duration", sc.primitive_duration);
    sc.time_weight = c.get("time_weight", sc.time_weight);
    sc.collision_weight = c.get("collision_weight", sc.collision_weight);
    sc.collision_cost_floor = c.get("collision_cost_floor", sc.collision_cost_floor);
    sc.v_max = c.get("v_max", sc.v_max);
    sc.a_max = c.get("a_max", sc.a_max);
    sc.flip_speed_limit = c.get("flip_speed_limit", -1.0);
    sc.recovery_time = c.get("recovery_time", -1.0);
    sc.position_key_resolution = c.get("position_key_resolution", sc.position_key_resolution);
    sc.velocity_key_resolution = c.get("velocity_key_resolution", sc.velocity_key_resolution);
    sc.heuristic_inflation = c.get("heuristic_inflation", sc.heuristic_inflation);
    sc.jump_points = c.get("jump_points", sc.jump_points);
    sc.collisions_enabled = c.get("collisions_enabled", sc.collisions_enabled);
    sc.saturate_primitives = c.get("saturate_primitives", sc.saturate_primitives);
    sc.goal_tolerance = c.get("goal_tolerance", sc.goal_tolerance);
    sc.max_expansions = c.get("max_expansions", sc.max_expansions);
    c.finish();
  } else {
    s.search.flip_speed_limit = -1.0;
    s.search.recovery_time = -1.0;
  }
  if (o.has("gto")) {
    StrictObject g(o.raw("gto"), "scenario.gto");
    GtoParams& gp = s.gto;
    gp.smoothness_weight = g.get("smoothness_weight", gp.smoothness_weight);
    gp.obstacle_weight = g.get("obstacle_weight", gp.obstacle_weight);
    gp.dynamics_weight = g.get("dynamics_weight", gp.dynamics_weight);
    if (g.has("obstacle")) gp.obstacle = read_exp_cost(g.raw("obstacle"), "scenario.gto.obstacle", gp.obstacle);
    if (g.has("velocity")) gp.velocity = read_exp_cost(g.raw("velocity"), "scenario.gto.velocity", gp.velocity);
    if (g.has("accel")) gp.accel = read_exp_cost(g.raw("accel"), "scenario.gto.accel", gp.accel);
    gp.samples_per_segment = g.get("samples_per_segment", gp.samples_per_segment);
    gp.max_iterations = g.get("max_iterations", gp.max_iterations);
    gp.gradient_tol = g.get("gradient_tol", gp.gradient_tol);
    g.finish();
  }
  if (o.has("noise")) {
    StrictObject n(o.raw("noise"), "scenario.noise");
    NoiseModel& nm = s.noise;
    nm.recovery_velocity_halfwidth = n.get("recovery_velocity_halfwidth", nm.recovery_velocity_halfwidth);
    nm.planner_position_variance = n.get("planner_position_variance", nm.planner_position_variance);
    nm.planner_position_bound = n.get("planner_position_bound", nm.planner_position_bound);
    nm.planner_velocity_variance = n.get("planner_velocity_variance", nm.planner_velocity_variance);
    nm.planner_velocity_bound = n.get("planner_velocity_bound", nm.planner_velocity_bound);
    nm.seed = n.get("seed", nm.seed);
    n.finish();
  }
  o.finish();

  // Derived defaults: the flip bound comes from the arm model, the recovery
  // time from the controller horizon, unless the file pins them.
  if (s.search.recovery_time <= 0) s.search.recovery_time = s.recovery.horizon;
  if (s.search.flip_speed_limit <= 0) s.search.flip_speed_limit = flip_velocity_bound(s.arm);
  s.gto.v_max = s.search.v_max;
  s.gto.a_max = s.search.a_max;
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path, const std::map<std::string, std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open scenario file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidArgument("scenario parse error in " + path + ": " + e.what());
  }
  for (const auto& [key, value] : overrides) apply_override(j, key, value);
  return scenario_from_json(j);
}

void apply_override(json& j, const std::string& dotted_key, const std::string& value) {
  json* node = &j;
  std::size_t pos = 0;
  std::string key = dotted_key;
  while ((pos = key.find('.')) != std::string::npos) {
    const std::string head = key.substr(0, pos);
    if (!node->contains(head)) (*node)[head] = json::object();
    node = &(*node)[head];
    key = key.substr(pos + 1);
  }
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // plain string
  (*node)[key] = parsed;
}

json dump_effective_config(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["map"] = map_spec_to_json(s.map);
  j["start"] = {s.start.x(), s.start.y()};
  j["goal"] = {s.goal.x(), s.goal.y()};
  j["start_velocity"] = {s.start_velocity.x(), s.start_velocity.y()};
  j["replan_period"] = s.replan_period;
  j["timeout"] = s.timeout;
  j["control_rate"] = s.control_rate;
  j["scan_beams"] = s.scan_beams;
  j["scan_range"] = s.scan_range;
  j["explore_distance"] = s.explore_distance;
  j["stop_rule"] = s.stop_rule;
  j["track_kp"] = s.track_kp;
  j["track_kd"] = s.track_kd;
  j["arm"] = {{"mass", s.arm.mass},
              {"spring_constant", s.arm.spring_constant},
              {"damping", s.arm.damping},
              {"neutral_length", s.arm.neutral_length},
              {"pretension_length", s.arm.pretension_length},
              {"max_load_length", s.arm.max_load_length},
              {"friction", s.arm.friction},
              {"robot_radius", s.arm.robot_radius},
              {"max_input_accel", s.arm.max_input_accel},
              {"max_flip_angle_deg", s.arm.max_flip_angle * 180.0 / M_PI},
              {"arm_count", s.arm.arm_count}};
  j["recovery"] = {{"displacement_weight", s.recovery.displacement_weight},
                   {"input_weight", s.recovery.input_weight},
                   {"sample_rate", s.recovery.sample_rate},
                   {"horizon", s.recovery.horizon}};
  j["orientation"] = {{"k_r", s.orientation.k_r}, {"k_omega", s.orientation.k_omega}};
  j["search"] = {{"u_max", s.search.u_max},
                 {"lattice_samples", s.search.lattice_samples},
                 {"primitive_duration", s.search.primitive_duration},
                 {"time_weight", s.search.time_weight},
                 {"collision_weight", s.search.collision_weight},
                 {"collision_cost_floor", s.search.effective_cost_floor()},
                 {"v_max", s.search.v_max},
                 {"a_max", s.search.a_max},
                 {"flip_speed_limit", s.search.flip_speed_limit},
                 {"recovery_time", s.search.recovery_time},
                 {"position_key_resolution", s.search.position_key_resolution},
                 {"velocity_key_resolution", s.search.velocity_key_resolution},
                 {"heuristic_inflation", s.search.heuristic_inflation},
                 {"jump_points", s.search.jump_points},
                 {"collisions_enabled", s.search.collisions_enabled},
                 {"saturate_primitives", s.search.saturate_primitives},
                 {"goal_tolerance", s.search.goal_tolerance},
                 {"max_expansions", s.search.max_expansions}};
  j["gto"] = {{"smoothness_weight", s.gto.smoothness_weight},
              {"obstacle_weight", s.gto.obstacle_weight},
              {"dynamics_weight", s.gto.dynamics_weight},
              {"obstacle", exp_cost_to_json(s.gto.obstacle)},
              {"velocity", exp_cost_to_json(s.gto.velocity)},
              {"accel", exp_cost_to_json(s.gto.accel)},
              {"samples_per_segment", s.gto.samples_per_segment},
              {"max_iterations", s.gto.max_iterations},
              {"gradient_tol", s.gto.gradient_tol}};
  j["noise"] = {{"recovery_velocity_halfwidth", s.noise.recovery_velocity_halfwidth},
                {"planner_position_variance", s.noise.planner_position_variance},
                {"planner_position_bound", s.noise.planner_position_bound},
                {"planner_velocity_variance", s.noise.planner_velocity_variance},
                {"planner_velocity_bound", s.noise.planner_velocity_bound},
                {"seed", s.noise.seed}};
  return j;
}

}  // namespace bounce
