#include "bounce/recovery.hpp"

#include <cmath>

#include "bounce/qp.hpp"

namespace bounce {

void ArmParams::validate() const {
  if (mass <= 0) throw InvalidArgument("mass must be > 0");
  if (spring_constant <= 0) throw InvalidArgument("spring_constant must be > 0");
  if (damping < 0) throw InvalidArgument("damping must be >= 0");
  if (friction < 0) throw InvalidArgument("friction must be >= 0");
  if (!(max_load_length < pretension_length && pretension_length < neutral_length))
    throw InvalidArgument("spring lengths must satisfy l_e < l_s < l_0");
  if (robot_radius <= 0) throw InvalidArgument("robot_radius must be > 0");
  if (arm_count < 1) throw InvalidArgument("arm_count must be >= 1");
}

void RecoveryWeights::validate() const {
  if (displacement_weight < 0) throw InvalidArgument("displacement_weight must be >= 0");
  if (input_weight <= 0) throw InvalidArgument("input_weight must be > 0");
  if (sample_rate <= 0 || horizon <= 0) throw InvalidArgument("sample_rate and horizon must be > 0");
  const double n = sample_rate * horizon;
  if (n < 1 || std::abs(n - std::llround(n)) > 1e-9)
    throw InvalidArgument("sample_rate * horizon must be an integer >= 1");
}

double flip_velocity_bound(const ArmParams& p, double gravity) {
  const double spring = p.spring_constant *
                        (std::pow(p.max_load_length - p.neutral_length, 2) -
                         std::pow(p.pretension_length - p.neutral_length, 2)) /
                        (2.0 * p.mass);
  const double gravity_term = gravity * (p.robot_radius - p.pretension_length + p.max_load_length) *
                              std::sin(p.max_flip_angle);
  const double input_term = p.max_input_accel * (p.pretension_length - p.max_load_length);
  const double radicand = spring + gravity_term + input_term;
  if (radicand < 0) throw InvalidArgument("parameters admit no safe collision speed");
  return std::sqrt(radicand);
}

double deformation_from_sensors(const std::vector<Vec2>& deflections_body, const Mat2& R_wb,
                                const Mat2& R_wc) {
  if (deflections_body.empty()) throw InvalidArgument("no arm deflections provided");
  Vec2 compound = Vec2::Zero();
  for (const Vec2& d : deflections_body) compound += d;
  if (compound.norm() < 1e-9)
    throw InvalidArgument("collision frame undefined: compound deformation vector is zero");
  const double p_0x = -(R_wc.transpose() * R_wb * compound).x();
  if (p_0x > 1e-9)
    throw InvalidArgument("compound deformation points into the surface (p_0x > 0)");
  return std::min(p_0x, 0.0);
}

Vec2 terminal_velocity(const Vec2& p_next_world, const Vec2& p_collision_world,
                       double segment_duration, double collision_time, double v_max,
                       const Mat2& R_wc) {
  if (segment_duration <= collision_time)
    throw InvalidArgument("segment duration must exceed the collision time");
  const Vec2 v_world = (p_next_world - p_collision_world) / (segment_duration - collision_time);
  Vec2 v = R_wc.transpose() * v_world;
  if (v.x() < 0) v.x() = 0;  // never back into the wall
  const double norm = v.norm();
  if (norm > v_max && norm > 0) v *= v_max / norm;
  return v;
}

std::pair<Vec2, Vec2> RecoveryResult::post_state_world(
    const CollisionFrame& frame, const Vec2& robot_position_at_collision) const {
  const RecoveryState& s0 = states.front();
  const RecoveryState& sN = states.back();
  // The robot sits at frame coordinates (p_0x, 0) at the collision instant.
  const Vec2 dp(sN(0) - s0(0), sN(1) - s0(1));
  const Vec2 p = robot_position_at_collision + frame.to_world(dp);
  const Vec2 v = frame.to_world(Vec2(sN(2), sN(3)));
  return {p, v};
}

RecoveryResult solve_recovery_qp(double p_0x, const Vec2& v_0, const Vec2& v_T, double theta,
                                 const ArmParams& params, const RecoveryWeights& weights,
                                 double qp_tol) {
  params.validate();
  weights.validate();
  const double lower = -params.max_compression() * std::cos(theta);
  if (p_0x < lower - 1e-12 || p_0x > 1e-12)
    throw InvalidArgument("p_0x outside the contact box");

  RecoveryResult result;
  const int n_steps = weights.steps();
  const double dt = 1.0 / weights.sample_rate;

  // A terminal velocity into the surface would re-penetrate immediately after
  // p_x reaches 0; reject up front (Alg-level clamping normally prevents it).
  if (v_T.x() < 0) {
    result.violated_constraints.push_back("terminal v_x must be >= 0 (p_x <= 0 would be violated)");
    return result;
  }

  Eigen::Matrix4d F = Eigen::Matrix4d::Zero();
  F(0, 2) = 1;
  F(1, 3) = 1;
  F(2, 0) = -params.spring_constant / params.mass;
  F(2, 2) = -params.damping / params.mass;
  Eigen::Matrix<double, 4, 2> G = Eigen::Matrix<double, 4, 2>::Zero();
  G(2, 0) = 1;
  G(3, 1) = 1;
  const Eigen::Matrix4d A_d = Eigen::Matrix4d::Identity() + dt * F;
  const Eigen::Matrix<double, 4, 2> B_d = dt * G;

  const int n_vars = 2 * n_steps;
  RecoveryState s0;
  s0 << p_0x, 0.0, v_0.x(), v_0.y();

  // s_k = offsets[k] + maps[k] * x with x the stacked controls.
  std::vector<Eigen::MatrixXd> maps(n_steps + 1, Eigen::MatrixXd::Zero(4, n_vars));
  std::vector<RecoveryState> offsets(n_steps + 1);
  offsets[0] = s0;
  for (int k = 0; k < n_steps; ++k) {
    offsets[k + 1] = A_d * offsets[k];
    maps[k + 1] = A_d * maps[k];
    maps[k + 1].block(0, 2 * k, 4, 2) += B_d;
  }

  // The Euler position update lags the control by two steps, so the box on
  // p_x at k <= 1 is decided entirely by the initial condition.
  for (int k : {0, 1}) {
    if (k > n_steps) break;
    const double p_k = offsets[k](0);
    if (p_k < lower - 1e-12)
      result.violated_constraints.push_back("p_x at step " + std::to_string(k) +
                                            " below contact box (uncontrollable prefix)");
    if (p_k > 1e-12)
      result.violated_constraints.push_back("p_x at step " + std::to_string(k) +
                                            " above 0 (uncontrollable prefix)");
  }
  if (!result.violated_constraints.empty()) return result;

  Eigen::Matrix4d gamma = Eigen::Matrix4d::Zero();
  gamma(0, 0) = gamma(1, 1) = weights.displacement_weight;

  QpProblem qp;
  qp.P = Eigen::MatrixXd::Zero(n_vars, n_vars);
  qp.q = Eigen::VectorXd::Zero(n_vars);
  for (int k = 0; k < n_steps; ++k) {
    qp.P += 2.0 * dt * maps[k].transpose() * gamma * maps[k];
    qp.q += 2.0 * dt * maps[k].transpose() * gamma * offsets[k];
    qp.P.block(2 * k, 2 * k, 2, 2) +=
        2.0 * dt * weights.input_weight * Eigen::Matrix2d::Identity();
  }

  qp.A_eq = Eigen::MatrixXd::Zero(3, n_vars);
  qp.b_eq = Eigen::VectorXd::Zero(3);
  qp.A_eq.row(0) = maps[n_steps].row(0);
  qp.b_eq(0) = -offsets[n_steps](0);  // p_x(T_r) = 0
  qp.A_eq.row(1) = maps[n_steps].row(2);
  qp.b_eq(1) = v_T.x() - offsets[n_steps](2);
  qp.A_eq.row(2) = maps[n_steps].row(3);
  qp.b_eq(2) = v_T.y() - offsets[n_steps](3);

  const int n_box = std::max(0, n_steps - 2);
  qp.A_in = Eigen::MatrixXd::Zero(2 * n_box, n_vars);
  qp.b_in = Eigen::VectorXd::Zero(2 * n_box);
  for (int k = 2; k < n_steps; ++k) {
    const int row = 2 * (k - 2);
    qp.A_in.row(row) = maps[k].row(0);
    qp.b_in(row) = -offsets[k](0);  // p_x,k <= 0
    qp.A_in.row(row + 1) = -maps[k].row(0);
    qp.b_in(row + 1) = offsets[k](0) - lower;  // p_x,k >= lower
  }

  const QpSolution sol = solve_qp(qp, qp_tol);
  if (!sol.feasible) {
    result.violated_constraints.push_back("contact box unsatisfiable with terminal conditions");
    return result;
  }

  result.feasible = true;
  result.kkt_residual = sol.kkt_residual;
  result.controls.resize(n_steps);
  result.states.resize(n_steps + 1);
  for (int k = 0; k < n_steps; ++k) result.controls[k] = sol.x.segment<2>(2 * k);
  for (int k = 0; k <= n_steps; ++k) result.states[k] = offsets[k] + maps[k] * sol.x;
  // Snap the terminal equalities exactly (they are active by construction).
  result.states[n_steps](0) = 0.0;
  result.states[n_steps](2) = v_T.x();
  result.states[n_steps](3) = v_T.y();

  double objective = 0.0;
  for (int k = 0; k < n_steps; ++k) {
    objective += dt * (result.states[k].dot(gamma * result.states[k]) +
                       weights.input_weight * result.controls[k].squaredNorm());
  }
  result.objective = objective;
  return result;
}

Vec2 feedback_linearize(const Vec2& nu, const RecoveryState& state, double theta,
                        const ArmParams& params) {
  if (std::abs(theta) >= M_PI / 2) throw InvalidArgument("|theta| must be < pi/2");
  const double p_x = state(0), v_x = state(2), v_y = state(3);
  const double s = sign_pos(v_y);
  const double slope = params.friction * s + std::tan(theta);
  const double f_0 =
      params.friction * params.spring_constant * s * (params.pretension_length - params.neutral_length);
  const double correction = (params.spring_constant * slope * p_x + f_0) / params.mass +
                            params.damping * slope * v_x / params.mass;
  return Vec2(nu.x(), nu.y() + correction);
}

double orientation_control(double theta, double theta_desired, double omega_z,
                           const OrientationGains& gains) {
  return -gains.k_r * std::sin(theta - theta_desired) - gains.k_omega * omega_z;
}

}  // namespace bounce
