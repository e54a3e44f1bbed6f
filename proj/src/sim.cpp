#include "bounce/sim.hpp"

#include <algorithm>
#include <cmath>

namespace bounce {

void NoiseModel::validate() const {
  if (recovery_velocity_halfwidth < 0) throw InvalidArgument("noise half-width must be >= 0");
  if (planner_position_variance < 0 || planner_velocity_variance < 0)
    throw InvalidArgument("noise variances must be >= 0");
  if (planner_position_bound < 0 || planner_velocity_bound < 0)
    throw InvalidArgument("noise truncation bounds must be >= 0");
}

void Scenario::validate() const {
  search.validate();
  gto.validate();
  arm.validate();
  recovery.validate();
  noise.validate();
  if (replan_period <= 0) throw InvalidArgument("T_rep must be > 0");
  if (timeout <= 0) throw InvalidArgument("timeout must be > 0");
  if (control_rate <= 0) throw InvalidArgument("control_rate must be > 0");
  if (scan_beams < 1) throw InvalidArgument("scan_beams must be >= 1");
  if (scan_range <= 0) throw InvalidArgument("scan_range must be > 0");
  // no-tunneling guard: one control step must move less than the body radius
  if (search.v_max / control_rate >= arm.robot_radius)
    throw InvalidArgument("v_max / control_rate must stay below the robot radius (tunneling)");
}

FlatState step(const FlatState& state, const Vec2& command, double dt) {
  if (dt <= 0) throw InvalidArgument("dt must be > 0");
  FlatState next;
  next.position = state.position + state.velocity * dt + 0.5 * dt * dt * command;
  next.velocity = state.velocity + dt * command;
  return next;
}

namespace {

// A fitted run endpoint counts as perceived when the sweep sees past it: the
// neighboring beam either misses or lands distinctly farther.
bool endpoint_perceived(const Scan& scan, int beam, int direction, double gap) {
  const int n = static_cast<int>(scan.beams.size());
  if (n < 2) return false;
  const int nb = ((beam + direction) % n + n) % n;
  const Beam& edge = scan.beams[beam];
  const Beam& next = scan.beams[nb];
  if (!next.hit) return true;
  return next.range > edge.range + gap;
}

bool surface_fully_visible(const Scan& scan, const SurfaceSegment& seg, double gap) {
  return endpoint_perceived(scan, seg.first_beam, -1, gap) &&
         endpoint_perceived(scan, seg.last_beam, +1, gap);
}

}  // namespace

std::optional<CollisionEvent> detect_collision(const FlatState& state, const OccupancyGrid& grid,
                                               double robot_radius,
                                               const std::vector<SurfaceSegment>& surfaces,
                                               const Scan* scan) {
  if (!grid.in_extent(state.position))
    throw RuntimeFault("simulation fault: robot left the map extent");
  if (grid.state_at(state.position) == CellState::Occupied)
    throw RuntimeFault("simulation fault: robot center inside an obstacle (tunneling; dt too large)");

  // exact disc-vs-occupied-cells test: with r_rob < resolution every cell
  // within reach lies in the local neighborhood of the robot's cell
  const double res = grid.resolution();
  const int reach = static_cast<int>(std::ceil(robot_radius / res)) + 1;
  const int rx = grid.cell_x(state.position.x()), ry = grid.cell_y(state.position.y());
  double d = std::numeric_limits<double>::infinity();
  Vec2 contact = state.position;
  for (int cy = ry - reach; cy <= ry + reach; ++cy) {
    for (int cx = rx - reach; cx <= rx + reach; ++cx) {
      if (!grid.valid_cell(cx, cy) || grid.at(cx, cy) != CellState::Occupied) continue;
      const Vec2 lo(cx * res, cy * res);
      const Vec2 closest(std::clamp(state.position.x(), lo.x(), lo.x() + res),
                         std::clamp(state.position.y(), lo.y(), lo.y() + res));
      const double dist = (state.position - closest).norm();
      if (dist < d) {
        d = dist;
        contact = closest;
      }
    }
  }
  if (d > robot_radius) return std::nullopt;

  CollisionEvent event;
  event.contact = contact;
  event.infeasible_region = grid.state_at(state.position) == CellState::Infeasible;

  const SurfaceSegment* best = nullptr;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& seg : surfaces) {
    const Vec2 ab = seg.b - seg.a;
    const double len = ab.norm();
    const Vec2 t = len > 1e-12 ? Vec2(ab / len) : seg.tangent;
    const double s = (event.contact - seg.a).dot(t);
    if (s < -robot_radius || s > len + robot_radius) continue;
    const double dist = std::abs((event.contact - seg.a).dot(seg.normal));
    if (dist < best_dist) {
      best_dist = dist;
      best = &seg;
    }
  }
  if (best && best_dist <= 2.0 * grid.resolution()) {
    event.surface = *best;
    event.frame = collision_frame(*best, event.contact, robot_radius);
    if ((state.position - event.contact).dot(event.frame.normal) < 0) {
      event.frame.normal = -event.frame.normal;
      event.frame.tangent = rot90(event.frame.normal);
    }
    if (scan)
      event.surface_fully_visible =
          surface_fully_visible(*scan, *best, 2.0 * grid.resolution());
  } else {
    Vec2 n = state.position - event.contact;
    if (n.norm() < 1e-9) n = Vec2(1, 0);
    event.frame.origin = event.contact;
    event.frame.normal = n.normalized();
    event.frame.tangent = rot90(event.frame.normal);
    event.surface_fully_visible = false;
  }
  return event;
}

FlatState noisy_recovery(const CollisionEvent& event, const FlatState& pre_state,
                         const Vec2& v_t_ref_cf, const NoiseModel& noise, double robot_radius,
                         Rng& rng) {
  (void)pre_state;
  const double hw = noise.recovery_velocity_halfwidth;
  Vec2 v_cf = v_t_ref_cf;
  v_cf.x() += rng.uniform(-hw, hw);
  v_cf.y() += rng.uniform(-hw, hw);
  if (v_cf.x() < 0) v_cf.x() = 0;  // normal component never back into the wall

  FlatState post;
  // detached to arm rest length, plus a small margin so the contact clears
  post.position = event.contact + (robot_radius + 0.05) * event.frame.normal;
  post.velocity = event.frame.to_world(v_cf);
  return post;
}

Metrics compute_metrics(const EpisodeResult& episode, double control_dt) {
  Metrics m;
  for (std::size_t i = 1; i < episode.trace.size(); ++i)
    m.path_length += (episode.trace[i].position - episode.trace[i - 1].position).norm();
  for (const auto& s : episode.trace) m.control_energy += s.command.squaredNorm() * control_dt;
  if (!episode.trace.empty()) m.trajectory_time = episode.trace.back().t;
  m.compute_time = episode.planner_compute_time;
  m.closed_nodes = episode.planner_closed_nodes;
  m.success = episode.outcome == Outcome::Success;
  return m;
}

namespace {

struct LocalTrajectory {
  PiecewisePolynomialTrajectory traj;
  double elapsed = 0.0;
  bool valid = false;
};

void apply_scan(OccupancyGrid& known, const Scan& scan) {
  bool changed = false;
  for (const auto& beam : scan.beams) {
    if (!beam.hit) continue;
    const Vec2 dir(std::cos(beam.angle), std::sin(beam.angle));
    const Vec2 hit = scan.origin + (beam.range + 1e-6) * dir;
    if (!known.in_extent(hit)) continue;
    const int cx = known.cell_x(hit.x()), cy = known.cell_y(hit.y());
    if (known.at(cx, cy) != CellState::Occupied) {
      known.set(cx, cy, CellState::Occupied);
      changed = true;
    }
  }
  if (changed) known.mark_infeasible_corners();
}

struct SegmentLocator {
  std::size_t index = 0;
  double start_time = 0.0;
  double duration = 0.0;
};

SegmentLocator locate_segment(const PiecewisePolynomialTrajectory& traj, double t) {
  SegmentLocator loc;
  double start = 0.0;
  const auto& segs = traj.segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (t < start + segs[i].duration || i + 1 == segs.size()) {
      loc.index = i;
      loc.start_time = start;
      loc.duration = segs[i].duration;
      return loc;
    }
    start += segs[i].duration;
  }
  return loc;
}

}  // namespace

EpisodeResult run_episode(const Scenario& scenario, std::uint64_t rng_seed) {
  scenario.validate();
  const OccupancyGrid true_grid = build_grid(scenario.map);
  if (!true_grid.in_extent(scenario.start) || !true_grid.is_free(scenario.start))
    throw InvalidArgument("scenario start must be in free space");
  if (!true_grid.in_extent(scenario.goal) || !true_grid.is_free(scenario.goal))
    throw InvalidArgument("scenario goal must be in free space");

  OccupancyGrid known(scenario.map.width_m, scenario.map.height_m, scenario.map.resolution,
                      scenario.map.corner_radius);
  for (int cx = 0; cx < known.cols(); ++cx) {
    known.set(cx, 0, CellState::Occupied);
    known.set(cx, known.rows() - 1, CellState::Occupied);
  }
  for (int cy = 0; cy < known.rows(); ++cy) {
    known.set(0, cy, CellState::Occupied);
    known.set(known.cols() - 1, cy, CellState::Occupied);
  }

  Rng rng(rng_seed);
  EpisodeResult episode;
  const double dt = 1.0 / scenario.control_rate;
  const bool use_drr = scenario.search.collisions_enabled;

  FlatState state{scenario.start, scenario.start_velocity};
  double t = 0.0;
  double since_replan = scenario.replan_period;  // plan immediately
  bool plan_now = true;
  int consecutive_no_plan = 0;
  Vec2 last_failed_pose = Vec2::Zero();
  LocalTrajectory current;
  bool on_local_repair = false;
  std::optional<Vec2> pending_detour;
  std::vector<SurfaceSegment> current_surfaces;
  Scan current_scan;
  bool have_scan = false;

  auto record = [&](const Vec2& cmd) {
    episode.trace.push_back({t, state.position, state.velocity, cmd});
  };
  auto add_event = [&](const std::string& type, const std::string& detail) {
    episode.events.push_back({t, type, detail, state.position});
  };
  auto at_goal = [&]() {
    return (state.position - scenario.goal).norm() <= scenario.search.goal_tolerance;
  };

  record(Vec2::Zero());
  if (at_goal()) {
    episode.outcome = Outcome::Success;
    episode.metrics = compute_metrics(episode, dt);
    return episode;
  }

  auto noisy_plan_state = [&]() {
    FlatState s = state;
    const double sp = std::sqrt(scenario.noise.planner_position_variance);
    const double sv = std::sqrt(scenario.noise.planner_velocity_variance);
    for (int attempt = 0; attempt < 16; ++attempt) {
      FlatState cand = state;
      cand.position.x() += rng.truncated_gauss(sp, scenario.noise.planner_position_bound);
      cand.position.y() += rng.truncated_gauss(sp, scenario.noise.planner_position_bound);
      cand.velocity.x() += rng.truncated_gauss(sv, scenario.noise.planner_velocity_bound);
      cand.velocity.y() += rng.truncated_gauss(sv, scenario.noise.planner_velocity_bound);
      cand.velocity.x() = std::clamp(cand.velocity.x(), -scenario.search.v_max, scenario.search.v_max);
      cand.velocity.y() = std::clamp(cand.velocity.y(), -scenario.search.v_max, scenario.search.v_max);
      if (known.in_extent(cand.position) &&
          known.state_at(cand.position) != CellState::Occupied)
        return cand;
    }
    return s;
  };

  auto global_replan = [&]() {
    current_scan = raycast_scan(true_grid, state.position, scenario.scan_beams,
                                scenario.scan_range);
    have_scan = true;
    apply_scan(known, current_scan);
    current_surfaces =
        fit_surfaces(true_grid, current_scan, SurfaceFitParams::defaults_for(true_grid.resolution()));

    const FlatState plan_state = noisy_plan_state();
    PrimitivePath path;
    try {
      path = plan(plan_state, scenario.goal, known, scenario.search);
    } catch (const InvalidArgument& e) {
      path.found = false;
      path.failure = e.what();  // e.g. start squeezed against a newly-mapped cell
    }
    episode.planner_compute_time += path.compute_time_s;
    episode.planner_closed_nodes += path.closed_nodes;
    add_event("replan", path.found ? "global" : "no plan: " + path.failure);

    if (!path.found) {
      if (consecutive_no_plan > 0 &&
          (state.position - last_failed_pose).norm() < scenario.search.position_key_resolution) {
        ++consecutive_no_plan;
      } else {
        consecutive_no_plan = 1;
        last_failed_pose = state.position;
      }
      current.valid = false;
      plan_now = true;  // retry right away; a repeat from the same pose traps
      return;
    }
    consecutive_no_plan = 0;
    if (path.edges.empty()) {
      current.valid = false;
      return;
    }
    RefineParams rp;
    rp.gto = scenario.gto;
    rp.gto.v_max = scenario.search.v_max;
    rp.gto.a_max = scenario.search.a_max;
    rp.robot_radius = scenario.arm.robot_radius;
    current.traj = refine(plan_state, path, known, scenario.search, rp);
    current.elapsed = 0.0;
    current.valid = true;
    on_local_repair = false;
    pending_detour.reset();
  };

  auto local_repair = [&](const CollisionEvent& event) -> bool {
    if (!current.valid) return false;
    const SegmentLocator loc = locate_segment(current.traj, current.elapsed);
    WaypointList list;
    const auto& segs = current.traj.segments();
    Waypoint w0;
    w0.position = current.traj.eval_segment(0, 0.0, 0);
    list.entries.push_back(w0);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      Waypoint w;
      w.position = current.traj.eval_segment(i, segs[i].duration, 0);
      list.entries.push_back(w);
    }
    AdjustTiming timing;
    for (std::size_t i = loc.index; i < segs.size(); ++i)
      timing.original_durations.push_back(segs[i].duration);
    timing.elapsed_in_segment = current.elapsed - loc.start_time;
    timing.v_max = scenario.search.v_max;
    timing.a_max = scenario.search.a_max;

    const AdjustResult adj =
        adjust_waypoints(state.position, list, event.frame, loc.index, known,
                         scenario.explore_distance, event.surface_fully_visible, timing);
    if (adj.status == AdjustStatus::Trapped) return false;

    const Vec2 end_velocity =
        current.traj.eval(current.traj.total_duration(), 1);
    BoundaryState bstart, bend;
    bstart.derivs = {state.position, state.velocity};
    bend.derivs = {adj.waypoints.back(), end_velocity};
    try {
      auto traj = solve_min_derivative_qp(adj.waypoints, adj.durations, bstart, bend,
                                          current.traj.derivative_order());
      std::vector<bool> pinned(traj.size() + 1, false);
      pinned.front() = pinned.back() = true;
      GtoParams gto = scenario.gto;
      gto.v_max = scenario.search.v_max;
      gto.a_max = scenario.search.a_max;
      traj = optimize_gto(traj, DistanceField(known), gto, pinned);
      traj = time_scale(traj, scenario.search.v_max, scenario.search.a_max);
      current.traj = std::move(traj);
    } catch (const std::exception&) {
      return false;
    }
    current.elapsed = 0.0;
    current.valid = true;
    on_local_repair = true;
    pending_detour =
        adj.status == AdjustStatus::Inserted ? std::optional<Vec2>(adj.waypoints[1]) : std::nullopt;
    return true;
  };

  while (t < scenario.timeout) {
    if (plan_now || since_replan >= scenario.replan_period - 1e-9) {
      plan_now = false;
      global_replan();  // may re-arm plan_now on failure
      since_replan = 0.0;
      if (consecutive_no_plan >= 2) {
        episode.outcome = Outcome::Trapped;
        add_event("stop", "trapped: no plan twice from the same pose");
        break;
      }
    }

    Vec2 cmd;
    if (current.valid) {
      const double total = current.traj.total_duration();
      const double tt = std::min(current.elapsed, total);
      const Vec2 p_ref = current.traj.eval(tt, 0);
      const Vec2 v_ref = current.traj.eval(tt, 1);
      const Vec2 a_ref = current.traj.eval(tt, 2);
      cmd = a_ref + scenario.track_kp * (p_ref - state.position) +
            scenario.track_kd * (v_ref - state.velocity);
    } else {
      cmd = -scenario.track_kd * state.velocity;  // brake while waiting for a plan
    }
    cmd.x() = std::clamp(cmd.x(), -scenario.search.a_max, scenario.search.a_max);
    cmd.y() = std::clamp(cmd.y(), -scenario.search.a_max, scenario.search.a_max);

    state = step(state, cmd, dt);
    t += dt;
    since_replan += dt;
    if (current.valid) current.elapsed += dt;
    record(cmd);

    if (at_goal()) {
      episode.outcome = Outcome::Success;
      break;
    }

    const auto event = detect_collision(state, true_grid, scenario.arm.robot_radius,
                                        current_surfaces, have_scan ? &current_scan : nullptr);
    if (event) {
      add_event("collision", event->infeasible_region ? "infeasible-region contact" : "contact");
      const bool stop_triggered = scenario.stop_rule && on_local_repair;
      Vec2 v_t_cf = Vec2::Zero();
      if (use_drr && !stop_triggered && current.valid) {
        const SegmentLocator loc = locate_segment(current.traj, current.elapsed);
        const Vec2 p_next = current.traj.eval_segment(loc.index, loc.duration, 0);
        const double elapsed_in_seg =
            std::clamp(current.elapsed - loc.start_time, 0.0, loc.duration - 1e-3);
        v_t_cf = terminal_velocity(p_next, state.position, loc.duration, elapsed_in_seg,
                                   scenario.search.v_max, event->frame.rotation_world_from_frame());
      }
      state = noisy_recovery(*event, state, v_t_cf, scenario.noise, scenario.arm.robot_radius, rng);
      t += scenario.recovery.horizon;
      record(Vec2::Zero());
      add_event("recover", use_drr && !stop_triggered ? "drr" : "stop-and-replan");

      if (use_drr && !stop_triggered) {
        if (!local_repair(*event)) {
          add_event("stop", "local repair unavailable; escalating to global replan");
          current.valid = false;
          plan_now = true;
        }
      } else {
        if (stop_triggered) add_event("stop", "repeated collision on locally-revised segment");
        current.valid = false;
        on_local_repair = false;
        plan_now = true;
      }
      continue;
    }

    if (pending_detour &&
        (state.position - *pending_detour).norm() <= scenario.search.goal_tolerance) {
      pending_detour.reset();
      plan_now = true;  // reached p_add: replan with the latest map
    }
    if (current.valid && current.elapsed >= current.traj.total_duration() + 1e-9)
      plan_now = true;  // trajectory exhausted without reaching the goal
  }

  if (episode.outcome != Outcome::Success && episode.outcome != Outcome::Trapped)
    episode.outcome = t >= scenario.timeout ? Outcome::Timeout : episode.outcome;
  episode.metrics = compute_metrics(episode, dt);
  return episode;
}

}  // namespace bounce
