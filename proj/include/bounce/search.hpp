#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bounce/core.hpp"
#include "bounce/traj.hpp"
#include "bounce/world.hpp"

namespace bounce {

// Differentially-flat state for the acceleration-controlled lattice (q = 2).
struct FlatState {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
};

struct SearchConfig {
  double u_max = 5.0;                  // lattice control bound, m/s^2
  int lattice_samples = 5;             // r: samples per half axis, M = (2r+1)^2
  double primitive_duration = 5.0;     // tau_f, s
  double time_weight = 1.0;            // rho_t
  double collision_weight = 1.0;       // rho_c
  double collision_cost_floor = -1.0;  // J_c lower bound; < 0 derives 0.1 v_max^2 / T_r
  double v_max = 2.0;                  // per-axis velocity bound, m/s
  double a_max = 5.0;                  // per-axis acceleration bound, m/s^2
  double flip_speed_limit = 0.575;     // v_max_c, from the recovery module
  double recovery_time = 0.5;          // T_r, s
  double position_key_resolution = 1.0;
  double velocity_key_resolution = 0.1;
  double heuristic_inflation = 1.0;  // epsilon_h >= 1
  bool jump_points = true;
  bool collisions_enabled = true;    // false: pure collision-avoidance mode
  bool saturate_primitives = true;   // false: prune cap-violating primitives (stress mode)
  double goal_tolerance = 1.0;
  int max_expansions = 2000000;
  bool record_closed_states = false;  // fill PrimitivePath::closed_states (test introspection)

  double effective_cost_floor() const {
    return collision_cost_floor >= 0 ? collision_cost_floor
                                     : 0.1 * v_max * v_max / recovery_time;
  }
  void validate() const;
};

// Lattice of constant controls with components in {-u_max, ..., 0, ..., u_max},
// step u_max/r, in deterministic (x-major) order.
std::vector<Vec2> control_lattice(double u_max, int samples_per_axis);

// Closed-form motion primitive: constant acceleration per axis, switching to
// zero on an axis when its velocity reaches the cap (and exactly pinning the
// cap afterwards). With saturate = false the control never switches and the
// caps may be violated (the caller prunes).
class EdgeTrajectory {
 public:
  EdgeTrajectory() = default;
  EdgeTrajectory(const FlatState& start, const Vec2& control, double duration, double v_cap,
                 bool saturate);

  FlatState at(double t) const;
  double duration() const { return duration_; }
  const Vec2& control() const { return control_; }
  bool within_velocity_cap(double v_cap) const;

  // integral of ||u~(t)||^2 over [0, until]: each axis charges its control
  // only while it is active (before the saturation switch).
  double control_energy(double until) const;

 private:
  struct Axis {
    double p0, v0, u;
    double t_switch;  // control turns off here (>= duration when no switch)
    double v_cap_hit; // velocity value held after the switch
  };
  double axis_p(const Axis& a, double t) const;
  double axis_v(const Axis& a, double t) const;
  Axis axes_[2];
  Vec2 control_ = Vec2::Zero();
  double duration_ = 0.0;
  bool saturate_ = true;
};

EdgeTrajectory propagate(const FlatState& start, const Vec2& control, double duration,
                         double v_cap, bool saturate = true);

enum class EdgeCheck { Free, Collision, Malformed };

struct CheckResult {
  EdgeCheck status = EdgeCheck::Free;
  double collision_time = 0.0;   // t_i
  FlatState pre_collision;       // state at t_i
  CellState hit_state = CellState::Occupied;
  Vec2 entry_point = Vec2::Zero();   // where the sample chord crosses the hit cell
  Vec2 entry_normal = Vec2::Zero();  // outward face normal of the hit cell
};

// Sample the edge at spacing <= eps_map / v_max and classify it. A leading
// run of Infeasible samples at the start is traversable (post-recovery states
// can sit inside the corner region).
CheckResult check_edge(const EdgeTrajectory& edge, const OccupancyGrid& grid, double v_max);

struct PrimitiveEdge {
  Vec2 control = Vec2::Zero();   // u_m
  double duration = 0.0;         // tau (includes tau_add when jump-collapsed)
  bool collides = false;         // zeta
  int behavior = 0;              // xi
  FlatState start;
  FlatState end;
  std::optional<FlatState> pre_collision;   // s^-
  std::optional<FlatState> post_collision;  // s^+
  std::optional<Vec2> detour_point;         // p_add
  double collision_cost_value = 0.0;        // J_c
  double cost = 0.0;
  bool jump_collapsed = false;  // end moved onto p_add (xi = 2 with jump points)
};

struct PostCollisionOutcome {
  FlatState state;  // s^+ (world frame)
  int behavior = 1;
  std::optional<Vec2> detour_point;
};

// Alg.-style post-collision synthesis: head for the goal at the pace of one
// primitive, detour via a grid-path waypoint when the goal is behind the
// surface. nullopt = prune (no grid path to the goal).
std::optional<PostCollisionOutcome> post_collision_state(const FlatState& pre,
                                                         const CollisionFrame& frame,
                                                         const Vec2& goal,
                                                         const OccupancyGrid& grid,
                                                         const SearchConfig& cfg);

// J_c = max(floor, ((|v+_x| - |v-_x|)^2 + (v+_y - v-_y)^2) / T_r), collision frame.
double collision_cost(const Vec2& v_minus_cf, const Vec2& v_plus_cf, double recovery_time,
                      double cost_floor);

// T_v lower bound: ||dp||_inf / v_max.
double lower_bound_time(const Vec2& p0, const Vec2& goal, double v_max);

// Per-axis minimum time for a double integrator between (p0,v0) and (p1,v1)
// under |a| <= a_max (closed-form bang-bang). Exposed for tests; the planner
// heuristic uses the velocity bound only.
double axis_min_time_accel(double dp, double v0, double v1, double a_max);

struct LqmtSolution {
  double horizon = 0.0;     // T*
  double cost = 0.0;        // h
  Vec2 defect = Vec2::Zero();    // position defect dp - v0 T* (state defect delta_T)
  double gramian_pp = 0.0;       // position block of the controllability Gramian, T*^3/3
};

// Relaxed minimum-effort-plus-time cost-to-go for the acceleration-controlled
// system with free terminal velocity, targeting the goal ball of the given
// radius:
//   h = min_{T >= T_v} 3 max(0, ||dp - v0 T|| - r_goal)^2 / T^3 + rho_t T.
LqmtSolution lqmt_heuristic(const FlatState& s, const Vec2& goal, double time_weight,
                            double v_max, double goal_radius = 0.0);

// The velocity-control closed form h = min_{T >= T_v} ||dp||^2/T + rho_t T.
// Kept for reference and tests; not admissible for the acceleration lattice.
LqmtSolution lqmt_velocity_form(const Vec2& p0, const Vec2& goal, double time_weight,
                                double v_max);

// Planner heuristic: single leg, or the two-leg sum through p_add for detour
// states.
double heuristic(const FlatState& s, const Vec2& goal, const SearchConfig& cfg,
                 const std::optional<Vec2>& p_add = std::nullopt);

// Collapse a detour edge onto its added waypoint (xi = 2): end moves to
// p_add, tau grows by |p_add - p_e^-| / |v^+|, the time cost is charged on
// the extended duration. Throws when ||v+|| = 0.
PrimitiveEdge apply_jump_points(const PrimitiveEdge& edge, const SearchConfig& cfg);

struct PrimitivePath {
  bool found = false;
  std::string failure;
  std::vector<PrimitiveEdge> edges;
  double cost = 0.0;
  long closed_nodes = 0;  // N_p
  long expansions = 0;
  double compute_time_s = 0.0;
  std::vector<FlatState> closed_states;  // populated when record_closed_states is set

  double total_time(double recovery_time) const;
};

// Weighted A* over the hybrid lattice graph.
PrimitivePath plan(const FlatState& start, const Vec2& goal, const OccupancyGrid& grid,
                   const SearchConfig& cfg);

// Waypoint sequence extracted from a PrimitivePath for refinement.
struct PathWaypoint {
  Vec2 position = Vec2::Zero();
  int behavior = 0;   // xi of the collision that created this waypoint
  Vec2 pre_velocity = Vec2::Zero();
  Vec2 post_velocity = Vec2::Zero();
  Vec2 pre_accel = Vec2::Zero();  // control at the collision, for q >= 3 pins
  double duration_to_here = 0.0;  // segment duration from the previous waypoint
};

std::vector<PathWaypoint> extract_waypoints(const FlatState& start, const PrimitivePath& path);

// Delete redundant reflection waypoints: when p_i is grid-visible from both
// p_{i-2} and p_{i+1}, p_{i-1} is removed (one left-to-right pass); durations
// of merged segments add.
std::vector<PathWaypoint> merge_collision_states(const std::vector<PathWaypoint>& seq,
                                                 const OccupancyGrid& grid);

struct RefineParams {
  GtoParams gto;
  double robot_radius = 0.3;
  int derivative_order = 2;  // q of the refined trajectory
};

// Full §-refinement: waypoints + durations from the path, collision waypoints
// relocated flush with their obstacle, collided obstacles dropped from the
// potential field, then per sub-trajectory QP -> GTO -> time scaling.
PiecewisePolynomialTrajectory refine(const FlatState& start, const PrimitivePath& path,
                                     const OccupancyGrid& grid, const SearchConfig& cfg,
                                     const RefineParams& params);

}  // namespace bounce
