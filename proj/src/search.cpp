#include "bounce/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>
#include <unordered_map>

#include "bounce/jps.hpp"

namespace bounce {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void SearchConfig::validate() const {
  if (u_max <= 0) throw InvalidArgument("u_max must be > 0");
  if (lattice_samples < 1) throw InvalidArgument("lattice_samples must be >= 1");
  if (primitive_duration <= 0) throw InvalidArgument("primitive_duration must be > 0");
  if (time_weight <= 0) throw InvalidArgument("time_weight must be > 0");
  if (collision_weight < 0) throw InvalidArgument("collision_weight must be >= 0");
  if (v_max <= 0 || a_max <= 0) throw InvalidArgument("v_max and a_max must be > 0");
  if (heuristic_inflation < 1.0) throw InvalidArgument("heuristic_inflation must be >= 1");
  if (recovery_time <= 0) throw InvalidArgument("recovery_time must be > 0");
  if (goal_tolerance <= 0) throw InvalidArgument("goal_tolerance must be > 0");
}

std::vector<Vec2> control_lattice(double u_max, int samples_per_axis) {
  if (samples_per_axis < 1) throw InvalidArgument("lattice needs >= 1 sample per half axis");
  const double du = u_max / samples_per_axis;
  std::vector<Vec2> controls;
  controls.reserve((2 * samples_per_axis + 1) * (2 * samples_per_axis + 1));
  for (int ix = -samples_per_axis; ix <= samples_per_axis; ++ix)
    for (int iy = -samples_per_axis; iy <= samples_per_axis; ++iy)
      controls.emplace_back(ix * du, iy * du);
  return controls;
}

EdgeTrajectory::EdgeTrajectory(const FlatState& start, const Vec2& control, double duration,
                               double v_cap, bool saturate)
    : control_(control), duration_(duration), saturate_(saturate) {
  for (int axis = 0; axis < 2; ++axis) {
    Axis& a = axes_[axis];
    a.p0 = start.position(axis);
    a.v0 = start.velocity(axis);
    a.u = control(axis);
    a.t_switch = duration + 1.0;
    a.v_cap_hit = a.v0;
    if (!saturate || a.u == 0.0) continue;
    const double target = a.u > 0 ? v_cap : -v_cap;
    const double t_hit = (target - a.v0) / a.u;
    if (t_hit <= 0.0) {
      // already at or beyond the cap with the control pushing outward
      if ((a.u > 0 && a.v0 >= v_cap) || (a.u < 0 && a.v0 <= -v_cap)) {
        a.t_switch = 0.0;
        a.v_cap_hit = a.v0;
      }
    } else if (t_hit < duration) {
      a.t_switch = t_hit;
      a.v_cap_hit = target;
    }
  }
}

double EdgeTrajectory::axis_v(const Axis& a, double t) const {
  if (t <= a.t_switch) return a.v0 + a.u * t;
  return a.v_cap_hit;
}

double EdgeTrajectory::axis_p(const Axis& a, double t) const {
  if (t <= a.t_switch) return a.p0 + a.v0 * t + 0.5 * a.u * t * t;
  const double ts = a.t_switch;
  const double p_s = a.p0 + a.v0 * ts + 0.5 * a.u * ts * ts;
  return p_s + a.v_cap_hit * (t - ts);
}

FlatState EdgeTrajectory::at(double t) const {
  FlatState s;
  for (int axis = 0; axis < 2; ++axis) {
    s.position(axis) = axis_p(axes_[axis], t);
    s.velocity(axis) = axis_v(axes_[axis], t);
  }
  return s;
}

double EdgeTrajectory::control_energy(double until) const {
  double total = 0.0;
  for (int axis = 0; axis < 2; ++axis)
    total += axes_[axis].u * axes_[axis].u * std::min(until, std::max(0.0, axes_[axis].t_switch));
  return total;
}

bool EdgeTrajectory::within_velocity_cap(double v_cap) const {
  // Velocity is monotone per axis under constant control; endpoints suffice.
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(axis_v(axes_[axis], 0.0)) > v_cap + 1e-9) return false;
    if (std::abs(axis_v(axes_[axis], duration_)) > v_cap + 1e-9) return false;
  }
  return true;
}

EdgeTrajectory propagate(const FlatState& start, const Vec2& control, double duration,
                         double v_cap, bool saturate) {
  if (duration <= 0) throw InvalidArgument("primitive duration must be > 0");
  return EdgeTrajectory(start, control, duration, v_cap, saturate);
}

CheckResult check_edge(const EdgeTrajectory& edge, const OccupancyGrid& grid, double v_max) {
  CheckResult result;
  const double tau = edge.duration();
  // spacing v_max * dt <= eps/2: tighter than the one-cell bound, matching
  // the conservative sampling used for segment freeness
  const int samples =
      std::max(1, static_cast<int>(std::ceil(2.0 * tau * v_max / grid.resolution())));
  const double dt = tau / samples;

  // Infeasible (corner-region) cells are free space and traversable; what
  // they forbid is colliding from inside them (the P^inf prune below).
  auto state_of = [&](const Vec2& p) -> CellState {
    if (!grid.in_extent(p)) return CellState::Occupied;
    return grid.state_at(p);
  };

  const Vec2 p_start = edge.at(0.0).position;
  if (state_of(p_start) == CellState::Occupied) {
    result.status = EdgeCheck::Malformed;
    return result;
  }
  Vec2 prev_point = p_start;
  CellState prev_state = state_of(p_start);
  double prev_t = 0.0;

  for (int i = 1; i <= samples; ++i) {
    const double t = i * dt;
    const Vec2 p = edge.at(t).position;
    const CellState s = state_of(p);
    if (s == CellState::Occupied) {
      result.status = EdgeCheck::Collision;
      // colliding out of the corner region is pruned by the caller
      result.hit_state = prev_state == CellState::Infeasible ? CellState::Infeasible
                                                             : CellState::Occupied;
      result.collision_time = prev_t;
      result.pre_collision = edge.at(prev_t);
      // entry face of the hit cell along the last sample chord
      const int cx = grid.cell_x(std::clamp(p.x(), 0.0, grid.width_m() - 1e-9));
      const int cy = grid.cell_y(std::clamp(p.y(), 0.0, grid.height_m() - 1e-9));
      const Vec2 lo(cx * grid.resolution(), cy * grid.resolution());
      const Vec2 hi = lo + Vec2(grid.resolution(), grid.resolution());
      const Vec2 d = p - prev_point;
      double t_entry = 0.0;
      Vec2 normal(0, 0);
      for (int axis = 0; axis < 2; ++axis) {
        if (std::abs(d(axis)) < 1e-15) continue;
        const double bound = d(axis) > 0 ? lo(axis) : hi(axis);
        const double tc = (bound - prev_point(axis)) / d(axis);
        if (tc > t_entry && tc <= 1.0 + 1e-12) {
          t_entry = tc;
          normal = Vec2::Zero();
          normal(axis) = d(axis) > 0 ? -1.0 : 1.0;
        }
      }
      if (normal.isZero()) {
        const Vec2 dir = d.norm() > 1e-12 ? Vec2(-d.normalized()) : Vec2(1, 0);
        normal = std::abs(dir.x()) >= std::abs(dir.y()) ? Vec2(dir.x() > 0 ? 1 : -1, 0)
                                                        : Vec2(0, dir.y() > 0 ? 1 : -1);
      }
      result.entry_point = prev_point + std::clamp(t_entry, 0.0, 1.0) * d;
      result.entry_normal = normal;
      return result;
    }
    prev_state = s;
    prev_point = p;
    prev_t = t;
  }
  result.status = EdgeCheck::Free;
  return result;
}

std::optional<PostCollisionOutcome> post_collision_state(const FlatState& pre,
                                                         const CollisionFrame& frame,
                                                         const Vec2& goal,
                                                         const OccupancyGrid& grid,
                                                         const SearchConfig& cfg) {
  PostCollisionOutcome out;
  Vec2 v_plus = (goal - pre.position) / cfg.primitive_duration;
  Vec2 v_cf = frame.to_frame(v_plus);
  if (v_cf.x() < 0) {
    out.behavior = 2;
    const auto path = jps_path(grid, pre.position, goal);
    if (!path || path->size() < 2) return std::nullopt;  // prune: no way around
    std::optional<Vec2> p_add;
    for (std::size_t k = 1; k < path->size(); ++k) {
      if (grid.segment_free(pre.position, (*path)[k]))
        p_add = (*path)[k];
      else
        break;
    }
    if (!p_add) return std::nullopt;
    out.detour_point = p_add;
    v_plus = (*p_add - pre.position) / cfg.primitive_duration;
    v_cf = frame.to_frame(v_plus);
    if (v_cf.x() < 0) {
      v_cf.x() = 0;
      v_plus = frame.to_world(v_cf);
    }
  } else {
    out.behavior = 1;
  }
  for (int axis = 0; axis < 2; ++axis)
    v_plus(axis) = std::clamp(v_plus(axis), -cfg.v_max, cfg.v_max);
  out.state.position = pre.position;
  out.state.velocity = v_plus;
  return out;
}

double collision_cost(const Vec2& v_minus_cf, const Vec2& v_plus_cf, double recovery_time,
                      double cost_floor) {
  if (recovery_time <= 0) throw InvalidArgument("recovery_time must be > 0");
  const double dx = std::abs(v_plus_cf.x()) - std::abs(v_minus_cf.x());
  const double dy = v_plus_cf.y() - v_minus_cf.y();
  return std::max(cost_floor, (dx * dx + dy * dy) / recovery_time);
}

double lower_bound_time(const Vec2& p0, const Vec2& goal, double v_max) {
  if (v_max <= 0) throw InvalidArgument("v_max must be > 0");
  return (goal - p0).lpNorm<Eigen::Infinity>() / v_max;
}

double axis_min_time_accel(double dp, double v0, double v1, double a_max) {
  if (a_max <= 0) throw InvalidArgument("a_max must be > 0");
  double best = kInf;
  // accelerate at +a then -a (peak v_p >= max(v0, v1)), and the mirror case
  for (const double s : {1.0, -1.0}) {
    const double vp2 = 0.5 * (v0 * v0 + v1 * v1) + s * a_max * dp;
    if (vp2 < 0) continue;
    const double vp = s * std::sqrt(vp2);
    const double t1 = (vp - v0) / (s * a_max);
    const double t2 = (vp - v1) / (s * a_max);
    if (t1 >= -1e-12 && t2 >= -1e-12) best = std::min(best, std::max(0.0, t1 + t2));
  }
  return best;
}

namespace {

// min over T >= t_lower of 3 max(0, ||dp - v0 T|| - r_goal)^2 / T^3 + rho_t T.
// The goal-region shrink keeps the bound admissible for paths that stop
// anywhere inside the goal ball.
LqmtSolution minimize_free_velocity_cost(const Vec2& dp, const Vec2& v0, double rho_t,
                                         double t_lower, double r_goal) {
  LqmtSolution sol;
  const double A = dp.squaredNorm();
  const double B = dp.dot(v0);
  const double Cv = v0.squaredNorm();
  if ((A < 1e-18 || std::sqrt(A) <= r_goal) && Cv < 1e-18) {
    sol.horizon = t_lower;
    sol.cost = rho_t * t_lower;
    return sol;
  }
  auto shrunk = [&](double T) {
    return std::max(0.0, (dp - v0 * T).norm() - r_goal);
  };
  auto cost_at = [&](double T) {
    const double s = shrunk(T);
    return 3.0 * s * s / (T * T * T) + rho_t * T;
  };
  auto slope_at = [&](double T) {
    const double n2 = A - 2.0 * B * T + Cv * T * T;
    const double n = std::sqrt(std::max(n2, 1e-30));
    if (n <= r_goal) return rho_t;  // flat region: pure time cost
    const double n_dot = (Cv * T - B) / n;
    const double s = n - r_goal;
    return 3.0 * s * (2.0 * n_dot * T - 3.0 * s) / (T * T * T * T) + rho_t;
  };

  const double t_floor = std::max(t_lower, 1e-9);
  const double t_hi = 10.0 * (std::sqrt(3.0 * std::sqrt(A) / std::sqrt(rho_t)) +
                              std::sqrt(Cv / rho_t) + t_floor + 1.0);
  std::vector<double> candidates = {t_floor, t_hi};
  // ball-entry boundaries ||dp - v0 T|| = r_goal
  if (Cv > 1e-18) {
    const double disc = B * B - Cv * (A - r_goal * r_goal);
    if (disc >= 0) {
      for (double root : {(B - std::sqrt(disc)) / Cv, (B + std::sqrt(disc)) / Cv})
        if (root >= t_floor && root <= t_hi) candidates.push_back(root);
    }
  }
  // stationary points of the unshrunk cost seed the bracketing scan
  Eigen::VectorXd quartic(5);
  quartic << -9.0 * A, 12.0 * B, -3.0 * Cv, 0.0, rho_t;
  for (double r : poly_real_roots(quartic, t_floor, t_hi)) candidates.push_back(r);
  std::sort(candidates.begin(), candidates.end());
  // bisect C' = 0 between consecutive candidates
  std::vector<double> stationary;
  for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
    double lo = candidates[i], hi = candidates[i + 1];
    if (hi - lo < 1e-12) continue;
    double s_lo = slope_at(lo), s_hi = slope_at(hi);
    if (s_lo == 0.0) stationary.push_back(lo);
    if (s_lo * s_hi >= 0.0) continue;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double s_mid = slope_at(mid);
      if (s_lo * s_mid <= 0.0)
        hi = mid;
      else {
        lo = mid;
        s_lo = s_mid;
      }
    }
    stationary.push_back(0.5 * (lo + hi));
  }
  candidates.insert(candidates.end(), stationary.begin(), stationary.end());

  double best_t = t_floor;
  double best_c = cost_at(t_floor);
  for (double t : candidates) {
    const double c = cost_at(t);
    if (c < best_c) {
      best_c = c;
      best_t = t;
    }
  }
  sol.horizon = best_t;
  sol.cost = best_c;
  sol.defect = dp - v0 * best_t;
  sol.gramian_pp = best_t * best_t * best_t / 3.0;
  return sol;
}

}  // namespace

LqmtSolution lqmt_heuristic(const FlatState& s, const Vec2& goal, double time_weight,
                            double v_max, double goal_radius) {
  const Vec2 dp = goal - s.position;
  const double t_lower =
      std::max(0.0, dp.lpNorm<Eigen::Infinity>() - goal_radius) / v_max;
  return minimize_free_velocity_cost(dp, s.velocity, time_weight, t_lower, goal_radius);
}

LqmtSolution lqmt_velocity_form(const Vec2& p0, const Vec2& goal, double time_weight,
                                double v_max) {
  LqmtSolution sol;
  const double dist2 = (goal - p0).squaredNorm();
  if (dist2 < 1e-18) return sol;
  const double t_lower = lower_bound_time(p0, goal, v_max);
  const double t_star = std::max(std::sqrt(dist2) / std::sqrt(time_weight), t_lower);
  sol.horizon = t_star;
  sol.cost = dist2 / t_star + time_weight * t_star;
  sol.defect = goal - p0;
  sol.gramian_pp = t_star;
  return sol;
}

double heuristic(const FlatState& s, const Vec2& goal, const SearchConfig& cfg,
                 const std::optional<Vec2>& p_add) {
  if (!p_add)
    return lqmt_heuristic(s, goal, cfg.time_weight, cfg.v_max, cfg.goal_tolerance).cost;
  const LqmtSolution leg1 = lqmt_heuristic(s, *p_add, cfg.time_weight, cfg.v_max);
  const FlatState rest{*p_add, Vec2::Zero()};
  const LqmtSolution leg2 =
      lqmt_heuristic(rest, goal, cfg.time_weight, cfg.v_max, cfg.goal_tolerance);
  return leg1.cost + leg2.cost;
}

PrimitiveEdge apply_jump_points(const PrimitiveEdge& edge, const SearchConfig& cfg) {
  if (!cfg.jump_points || edge.behavior != 2 || !edge.detour_point) return edge;
  const double speed = edge.post_collision->velocity.norm();
  if (speed < 1e-12) throw InvalidArgument("jump point collapse needs ||v+|| > 0");
  PrimitiveEdge out = edge;
  const double tau_add = (*edge.detour_point - edge.pre_collision->position).norm() / speed;
  out.duration += tau_add;
  out.cost += cfg.time_weight * tau_add;
  out.end.position = *edge.detour_point;
  out.end.velocity = edge.post_collision->velocity;
  out.jump_collapsed = true;
  return out;
}

double PrimitivePath::total_time(double recovery_time) const {
  double t = 0.0;
  for (const auto& e : edges) t += e.duration + (e.collides ? recovery_time : 0.0);
  return t;
}

namespace {

struct NodeKey {
  long px, py, vx, vy;
  bool detour;
  long ax, ay;  // quantized p_add for detour states
  bool operator==(const NodeKey&) const = default;
};

struct NodeKeyHash {
  std::size_t operator()(const NodeKey& k) const {
    std::size_t h = 1469598103934665603ull;
    auto mix = [&h](long v) {
      h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    };
    mix(k.px);
    mix(k.py);
    mix(k.vx);
    mix(k.vy);
    mix(k.detour ? 1 : 0);
    mix(k.ax);
    mix(k.ay);
    return h;
  }
};

struct NodeRec {
  FlatState state;
  double g = kInf;
  double h = 0.0;
  int parent = -1;
  PrimitiveEdge incoming;  // undefined for the start node
  bool has_incoming = false;
  bool closed = false;
  std::optional<Vec2> detour_point;
  NodeKey key;
};

struct OpenEntry {
  double f;
  double h;
  NodeKey key;
  int node;
  double g;
  bool operator>(const OpenEntry& o) const {
    if (f != o.f) return f > o.f;
    if (h != o.h) return h > o.h;
    const auto lhs = std::tie(key.px, key.py, key.vx, key.vy, key.detour, key.ax, key.ay);
    const auto rhs =
        std::tie(o.key.px, o.key.py, o.key.vx, o.key.vy, o.key.detour, o.key.ax, o.key.ay);
    return lhs > rhs;
  }
};

long quantize(double v, double res) { return std::llround(v / res); }

}  // namespace

PrimitivePath plan(const FlatState& start, const Vec2& goal, const OccupancyGrid& grid,
                   const SearchConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  PrimitivePath result;
  auto finish = [&](bool found, const std::string& why) {
    result.found = found;
    result.failure = why;
    result.compute_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
  };

  if (!grid.in_extent(start.position) || grid.state_at(start.position) == CellState::Occupied)
    throw InvalidArgument("plan start must be inside the map and outside obstacles");

  if ((start.position - goal).norm() <= cfg.goal_tolerance) return finish(true, "");

  const std::vector<Vec2> lattice = control_lattice(cfg.u_max, cfg.lattice_samples);
  const double cost_floor = cfg.effective_cost_floor();

  auto make_key = [&](const FlatState& s, const std::optional<Vec2>& p_add) {
    NodeKey k;
    k.px = quantize(s.position.x(), cfg.position_key_resolution);
    k.py = quantize(s.position.y(), cfg.position_key_resolution);
    k.vx = quantize(s.velocity.x(), cfg.velocity_key_resolution);
    k.vy = quantize(s.velocity.y(), cfg.velocity_key_resolution);
    k.detour = p_add.has_value();
    k.ax = p_add ? quantize(p_add->x(), cfg.position_key_resolution) : 0;
    k.ay = p_add ? quantize(p_add->y(), cfg.position_key_resolution) : 0;
    return k;
  };

  std::vector<NodeRec> nodes;
  std::unordered_map<NodeKey, int, NodeKeyHash> index;
  std::priority_queue<OpenEntry, std::vector<OpenEntry>, std::greater<OpenEntry>> open;

  NodeRec root;
  root.state = start;
  root.g = 0.0;
  root.h = heuristic(start, goal, cfg);
  root.key = make_key(start, std::nullopt);
  nodes.push_back(root);
  index[root.key] = 0;
  open.push({cfg.heuristic_inflation * root.h, root.h, root.key, 0, 0.0});

  int goal_node = -1;
  while (!open.empty()) {
    const OpenEntry top = open.top();
    open.pop();
    NodeRec& node = nodes[top.node];
    if (node.closed || top.g > node.g + 1e-12) continue;
    node.closed = true;
    ++result.closed_nodes;
    if (cfg.record_closed_states) result.closed_states.push_back(node.state);

    const bool goal_eligible =
        !node.has_incoming || !node.incoming.collides || node.incoming.jump_collapsed;
    if (goal_eligible && (node.state.position - goal).norm() <= cfg.goal_tolerance) {
      goal_node = top.node;
      break;
    }
    if (result.closed_nodes > cfg.max_expansions)
      return finish(false, "expansion limit reached");

    const FlatState state = node.state;  // copy: nodes may reallocate below
    const double node_g = node.g;
    const int node_id = top.node;

    for (const Vec2& u : lattice) {
      ++result.expansions;
      const EdgeTrajectory traj =
          propagate(state, u, cfg.primitive_duration, cfg.v_max, cfg.saturate_primitives);
      if (!cfg.saturate_primitives && !traj.within_velocity_cap(cfg.v_max)) continue;
      const CheckResult check = check_edge(traj, grid, cfg.v_max);
      if (check.status == EdgeCheck::Malformed) continue;

      PrimitiveEdge edge;
      edge.control = u;
      edge.start = state;
      std::optional<Vec2> successor_detour;

      if (check.status == EdgeCheck::Free) {
        edge.duration = cfg.primitive_duration;
        edge.end = traj.at(cfg.primitive_duration);
        edge.cost = traj.control_energy(edge.duration) + cfg.time_weight * edge.duration;
      } else {
        if (!cfg.collisions_enabled) continue;
        if (check.hit_state == CellState::Infeasible) continue;  // P^inf prune
        CollisionFrame frame;
        frame.origin = check.pre_collision.position;
        frame.normal = check.entry_normal;
        frame.tangent = rot90(check.entry_normal);
        const Vec2 v_minus_cf = frame.to_frame(check.pre_collision.velocity);
        if (std::abs(v_minus_cf.x()) > cfg.flip_speed_limit) continue;  // flip bound
        const auto post = post_collision_state(check.pre_collision, frame, goal, grid, cfg);
        if (!post) continue;
        edge.collides = true;
        edge.behavior = post->behavior;
        edge.duration = check.collision_time;
        edge.pre_collision = check.pre_collision;
        edge.post_collision = post->state;
        edge.detour_point = post->detour_point;
        edge.end = post->state;
        const Vec2 v_plus_cf = frame.to_frame(post->state.velocity);
        edge.collision_cost_value =
            collision_cost(v_minus_cf, v_plus_cf, cfg.recovery_time, cost_floor);
        edge.cost = traj.control_energy(edge.duration) +
                    cfg.time_weight * (edge.duration + cfg.recovery_time) +
                    cfg.collision_weight * edge.collision_cost_value;
        if (edge.behavior == 2) {
          if (cfg.jump_points) {
            if (post->state.velocity.norm() < 1e-12) continue;
            edge = apply_jump_points(edge, cfg);
          } else {
            successor_detour = edge.detour_point;
          }
        }
      }

      const NodeKey key = make_key(edge.end, successor_detour);
      const double g_new = node_g + edge.cost;
      auto it = index.find(key);
      int succ_id;
      if (it == index.end()) {
        NodeRec rec;
        rec.state = edge.end;
        rec.h = heuristic(edge.end, goal, cfg, successor_detour);
        rec.key = key;
        rec.detour_point = successor_detour;
        succ_id = static_cast<int>(nodes.size());
        nodes.push_back(rec);
        index.emplace(key, succ_id);
      } else {
        succ_id = it->second;
        if (g_new >= nodes[succ_id].g - 1e-12) continue;
        // the relaxation heuristic is admissible but not provably consistent:
        // reopen closed nodes on a strictly better g to keep optimality
        nodes[succ_id].closed = false;
      }
      NodeRec& succ = nodes[succ_id];
      succ.g = g_new;
      succ.parent = node_id;
      succ.incoming = edge;
      succ.has_incoming = true;
      open.push({g_new + cfg.heuristic_inflation * succ.h, succ.h, key, succ_id, g_new});
    }
  }

  if (goal_node < 0) return finish(false, "open set exhausted");

  std::vector<PrimitiveEdge> edges;
  for (int n = goal_node; nodes[n].parent >= 0; n = nodes[n].parent)
    edges.push_back(nodes[n].incoming);
  std::reverse(edges.begin(), edges.end());
  result.edges = std::move(edges);
  result.cost = nodes[goal_node].g;
  return finish(true, "");
}

std::vector<PathWaypoint> extract_waypoints(const FlatState& start, const PrimitivePath& path) {
  std::vector<PathWaypoint> wps;
  PathWaypoint first;
  first.position = start.position;
  first.post_velocity = start.velocity;
  wps.push_back(first);
  for (const auto& e : path.edges) {
    if (!e.collides) {
      PathWaypoint w;
      w.position = e.end.position;
      w.pre_velocity = w.post_velocity = e.end.velocity;
      w.duration_to_here = e.duration;
      wps.push_back(w);
      continue;
    }
    PathWaypoint w;
    w.position = e.pre_collision->position;
    w.behavior = e.behavior;
    w.pre_velocity = e.pre_collision->velocity;
    w.post_velocity = e.post_collision->velocity;
    w.pre_accel = e.control;
    double tau_add = 0.0;
    if (e.jump_collapsed) {
      const double speed = e.post_collision->velocity.norm();
      tau_add = (*e.detour_point - e.pre_collision->position).norm() / speed;
    }
    w.duration_to_here = e.duration - tau_add;
    wps.push_back(w);
    if (e.jump_collapsed) {
      PathWaypoint wa;
      wa.position = *e.detour_point;
      wa.pre_velocity = wa.post_velocity = e.end.velocity;
      wa.duration_to_here = tau_add;
      wps.push_back(wa);
    }
  }
  return wps;
}

std::vector<PathWaypoint> merge_collision_states(const std::vector<PathWaypoint>& seq,
                                                 const OccupancyGrid& grid) {
  std::vector<PathWaypoint> out = seq;
  std::size_t i = 2;
  while (i + 1 < out.size()) {
    // Fig.-6 pattern only: a redundant reflection waypoint squeezed between
    // collision states. Plain route waypoints are never dropped.
    const bool candidate = out[i].behavior >= 1 && out[i - 1].behavior == 0;
    const bool visible = candidate && grid.in_extent(out[i].position) &&
                         grid.in_extent(out[i - 2].position) &&
                         grid.in_extent(out[i + 1].position) &&
                         grid.segment_free(out[i - 2].position, out[i].position) &&
                         grid.segment_free(out[i].position, out[i + 1].position);
    if (visible) {
      out[i].duration_to_here += out[i - 1].duration_to_here;
      out.erase(out.begin() + (i - 1));
      // indices shifted left; re-test at the same position
    } else {
      ++i;
    }
  }
  return out;
}

PiecewisePolynomialTrajectory refine(const FlatState& start, const PrimitivePath& path,
                                     const OccupancyGrid& grid, const SearchConfig& cfg,
                                     const RefineParams& params) {
  if (path.edges.empty()) throw InvalidArgument("cannot refine an empty path");
  const int q = params.derivative_order;
  auto wps = merge_collision_states(extract_waypoints(start, path), grid);

  // Relocate planned-collision waypoints flush with their obstacle and record
  // which obstacle components to drop from the potential field.
  DistanceField full_field(grid);
  std::vector<int> excluded;
  for (auto& w : wps) {
    if (w.behavior < 1) continue;
    const double d = full_field.boundary_distance(w.position);
    if (d > params.robot_radius) {
      const Vec2 np = full_field.nearest_boundary_point(w.position);
      const Vec2 dir = (w.position - np).normalized();
      w.position = np + params.robot_radius * (1.0 - 1e-6) * dir;
    }
    const auto [cx, cy] = full_field.nearest_occupied_cell(w.position);
    if (cx >= 0) {
      const int comp = grid.component_at(cx, cy);
      if (std::find(excluded.begin(), excluded.end(), comp) == excluded.end())
        excluded.push_back(comp);
    }
  }
  const DistanceField field(grid, excluded);

  // Split at collision joints; each sub-trajectory is QP -> GTO -> time scale.
  PiecewisePolynomialTrajectory out(q, {});
  std::size_t lo = 0;
  while (lo + 1 < wps.size()) {
    std::size_t hi = lo + 1;
    while (hi + 1 < wps.size() && wps[hi].behavior < 1) ++hi;

    std::vector<Vec2> positions;
    std::vector<double> durations;
    for (std::size_t k = lo; k <= hi; ++k) {
      positions.push_back(wps[k].position);
      if (k > lo) durations.push_back(std::max(wps[k].duration_to_here, 0.05));
    }
    BoundaryState bstart, bend;
    bstart.derivs = {positions.front(), wps[lo].post_velocity};
    if (q >= 3 && wps[lo].behavior >= 1) bstart.derivs.push_back(Vec2::Zero());
    // the search leaves terminal derivatives free; refinement pins the goal
    // to rest, while collision joints keep their pre-collision state
    const bool final_sub = hi + 1 == wps.size();
    bend.derivs = {positions.back(), final_sub ? Vec2(Vec2::Zero()) : wps[hi].pre_velocity};
    if (q >= 3) bend.derivs.push_back(wps[hi].behavior >= 1 ? wps[hi].pre_accel : Vec2::Zero());

    auto sub = solve_min_derivative_qp(positions, durations, bstart, bend, q);
    std::vector<bool> pinned(sub.size() + 1, false);
    pinned.front() = pinned.back() = true;
    sub = optimize_gto(sub, field, params.gto, pinned);
    sub = time_scale(sub, cfg.v_max, cfg.a_max);
    sub.segments().back().ends_in_collision = wps[hi].behavior >= 1;
    out.append(sub);
    lo = hi;
  }
  return out;
}

}  // namespace bounce
