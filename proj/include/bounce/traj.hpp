#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <vector>

#include "bounce/core.hpp"
#include "bounce/world.hpp"

namespace bounce {

// One polynomial segment, monomial basis in segment-local time:
// p(t) = sum_j coeff[j] t^j, t in [0, duration].
struct PolySegment {
  Eigen::VectorXd coeff_x;
  Eigen::VectorXd coeff_y;
  double duration = 0.0;
  bool ends_in_collision = false;  // continuity is intentionally broken at the end joint
};

class PiecewisePolynomialTrajectory {
 public:
  PiecewisePolynomialTrajectory() = default;
  PiecewisePolynomialTrajectory(int derivative_order, std::vector<PolySegment> segments)
      : order_(derivative_order), segments_(std::move(segments)) {}

  int derivative_order() const { return order_; }
  const std::vector<PolySegment>& segments() const { return segments_; }
  std::vector<PolySegment>& segments() { return segments_; }
  std::size_t size() const { return segments_.size(); }
  double total_duration() const;

  // Derivative of the given order at global time t. Segment lookup is
  // left-closed/right-open with the final instant included.
  Vec2 eval(double t, int order = 0) const;

  // Derivative at local time within one segment.
  Vec2 eval_segment(std::size_t segment, double local_t, int order) const;

  // Per-axis extrema of the given derivative order over the whole trajectory
  // (exact, via polynomial root finding).
  double max_abs_derivative(int order) const;

  void append(const PiecewisePolynomialTrajectory& tail);

 private:
  int order_ = 2;
  std::vector<PolySegment> segments_;
};

// Waypoint list fed to the post-impact replanner / refinement QP.
struct Waypoint {
  Vec2 position = Vec2::Zero();
  int behavior = 0;                   // xi: 0 none, 1 reflect, 2 detour
  std::vector<Vec2> pre_derivs;       // s^- derivatives (order 1..q-1), present iff behavior >= 1
  std::vector<Vec2> post_derivs;      // s^+ derivatives (order 1..q-1)
  std::optional<Vec2> detour_point;   // p_add
};

struct WaypointList {
  std::vector<Waypoint> entries;  // last entry is the goal
  void validate() const;
};

// Trapezoidal (or triangular) rest-to-rest traversal time per chord.
// Durations are floored at t_min to keep the QP cost matrices regular.
std::vector<double> allocate_times(const std::vector<Vec2>& waypoints, double v_max, double a_max,
                                   double t_min = 0.1);

// Boundary derivative pins for the minimum-derivative QP: derivs[0] is the
// position, derivs[k] the k-th derivative; only the provided orders are
// constrained.
struct BoundaryState {
  std::vector<Vec2> derivs;
};

// Equality-constrained minimum-derivative QP through the waypoints (exact KKT
// solve). Throws RuntimeFault naming the segment on a singular system.
PiecewisePolynomialTrajectory solve_min_derivative_qp(const std::vector<Vec2>& waypoints,
                                                      const std::vector<double>& durations,
                                                      const BoundaryState& start,
                                                      const BoundaryState& end, int q);

// Exponential soft-cost shape: for distances, cost(d) = m * exp(-(d - t)/r);
// for limit margins, cost(x) = m * exp((x - (limit - t))/r).
struct ExpCost {
  double magnitude = 1.0;
  double threshold = 0.5;
  double rise_rate = 0.3;
};

struct GtoParams {
  double smoothness_weight = 0.5;   // lambda_s
  double obstacle_weight = 1.0;     // lambda_o
  double dynamics_weight = 10.0;    // lambda_d
  ExpCost obstacle{1.0, 0.5, 0.3};
  ExpCost velocity{1.0, 0.0, 0.05};
  ExpCost accel{1.0, 0.0, 0.25};
  double v_max = 2.0;
  double a_max = 5.0;
  int samples_per_segment = 50;
  int max_iterations = 60;
  double gradient_tol = 1e-6;

  void validate() const;
};

struct CostWithGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;  // w.r.t. the free joint-derivative variables
};

// Joint-derivative parameterization of a trajectory: positions and
// derivatives 1..q-1 at each joint; segment coefficients follow by a Hermite
// map. The free-variable layout is shared by the GTO costs below.
class JointParameterization {
 public:
  struct FreeVar {
    int joint;
    int order;  // 1..q-1 (positions stay pinned)
    int axis;
  };

  JointParameterization(const PiecewisePolynomialTrajectory& traj,
                        const std::vector<bool>& fully_pinned_joints);

  Eigen::VectorXd pack() const;                       // current free variables
  PiecewisePolynomialTrajectory unpack(const Eigen::VectorXd& x) const;
  int free_count() const { return static_cast<int>(free_vars_.size()); }
  const std::vector<FreeVar>& free_vars() const { return free_vars_; }

 private:
  int q_ = 2;
  std::vector<double> durations_;
  std::vector<Eigen::MatrixXd> joint_derivs_;  // per joint: q x 2 (order, axis)
  std::vector<FreeVar> free_vars_;
};

// Obstacle clearance cost J_o and its gradient w.r.t. the trajectory's free
// joint derivatives (all interior joint derivatives of order >= 1 free).
CostWithGradient cost_obstacle(const PiecewisePolynomialTrajectory& traj,
                               const DistanceField& field, const GtoParams& params);

// Velocity / acceleration limit penalties J_v, J_a and gradients.
std::pair<CostWithGradient, CostWithGradient> cost_dynamics(
    const PiecewisePolynomialTrajectory& traj, double v_max, double a_max,
    const GtoParams& params);

// Two-step gradient-based refinement: waypoint positions against J_o, then
// trust-region Newton on lambda_s J_s + lambda_o J_o + lambda_d (J_v + J_a)
// over the free joint derivatives. fully_pinned_joints marks joints whose
// position and derivatives must not move (boundaries, collision joints).
PiecewisePolynomialTrajectory optimize_gto(const PiecewisePolynomialTrajectory& traj_init,
                                           const DistanceField& field, const GtoParams& params,
                                           const std::vector<bool>& fully_pinned_joints);

// Uniform time dilation pulling per-axis velocity/acceleration extrema inside
// their bounds; the geometric path is unchanged.
PiecewisePolynomialTrajectory time_scale(const PiecewisePolynomialTrajectory& traj, double v_max,
                                         double a_max);

enum class AdjustStatus { Unchanged, Inserted, Trapped };

struct AdjustResult {
  AdjustStatus status = AdjustStatus::Unchanged;
  std::vector<Vec2> waypoints;      // post-recovery route: p_r, [p_add], p_next, ...
  std::vector<double> durations;    // matching segment durations
};

struct AdjustTiming {
  std::vector<double> original_durations;  // durations of segments i_c..end
  double elapsed_in_segment = 0.0;         // tau_c - t_{i_c}
  double v_max = 2.0;
  double a_max = 5.0;
};

// Post-impact waypoint adjustment: keep the route when the next waypoint is
// still reachable in a straight line; otherwise insert a detour waypoint from
// a grid shortest path (surface fully perceived) or an exploration step along
// the collision tangent (surface not fully perceived).
AdjustResult adjust_waypoints(const Vec2& p_r, const WaypointList& list,
                              const CollisionFrame& frame, std::size_t i_c,
                              const OccupancyGrid& grid, double explore_distance,
                              bool surface_fully_visible, const AdjustTiming& timing);

// Trajectory export: one row per sample, (t, x, y, vx, vy, ax, ay,
// segment_id, zeta_flag).
void export_trajectory_csv(const PiecewisePolynomialTrajectory& traj, double sample_rate,
                           std::ostream& out);

// Real roots of a monomial-basis polynomial inside [lo, hi].
std::vector<double> poly_real_roots(const Eigen::VectorXd& coeff, double lo, double hi);

// Smoothness cost sum_i integral ||p^(q)||^2 of the trajectory.
double smoothness_cost(const PiecewisePolynomialTrajectory& traj);

}  // namespace bounce
