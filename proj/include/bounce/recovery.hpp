#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "bounce/core.hpp"
#include "bounce/world.hpp"

namespace bounce {

// Compliant-arm and robot constants for the deformation-recovery controller.
struct ArmParams {
  double mass = 6.0;               // kg
  double spring_constant = 2310.0; // N/m
  double damping = 5.0;            // N s/m
  double neutral_length = 0.0415;  // l_0, m
  double pretension_length = 0.030;  // l_s, m
  double max_load_length = 0.015;    // l_e, m
  double friction = 0.3;             // mu
  double robot_radius = 0.3;         // m
  double max_input_accel = 5.0;      // a_in,max, m/s^2
  double max_flip_angle = 3.0 * M_PI / 180.0;  // sigma_max, rad
  int arm_count = 8;

  void validate() const;
  // Maximum arm compression measured from the pre-tensioned length.
  double max_compression() const { return std::abs(max_load_length - pretension_length); }
};

struct RecoveryWeights {
  double displacement_weight = 1.0;  // gamma
  double input_weight = 1.0;         // h
  double sample_rate = 10.0;         // f, Hz
  double horizon = 0.5;              // T_r, s

  void validate() const;
  int steps() const { return static_cast<int>(std::llround(sample_rate * horizon)); }
};

struct OrientationGains {
  double k_r = 4.0;
  double k_omega = 2.0;
};

// Safe pre-collision speed bound from the energy-balance argument. Throws
// when the parameters admit no safe collision speed (negative radicand).
double flip_velocity_bound(const ArmParams& params, double gravity = 9.81);

// Compound deformation from per-arm deflection vectors (body frame, each the
// arm's compression along its tip-to-center direction), mapped into the
// collision frame. Returns p_0x <= 0. Throws "collision frame undefined" when
// the vector sum is (numerically) zero, e.g. two opposite arms equally
// compressed; the caller reports this, it is not resolved here.
double deformation_from_sensors(const std::vector<Vec2>& deflections_body, const Mat2& R_wb,
                                const Mat2& R_wc);

// Reference detach velocity in the collision frame: head toward the next
// waypoint at the rate that keeps the original schedule, never back into the
// surface, capped at v_max.
Vec2 terminal_velocity(const Vec2& p_next_world, const Vec2& p_collision_world,
                       double segment_duration, double collision_time, double v_max,
                       const Mat2& R_wc);

using RecoveryState = Eigen::Vector4d;  // [p_x p_y v_x v_y] in the collision frame

struct RecoveryResult {
  bool feasible = false;
  std::vector<std::string> violated_constraints;  // populated when infeasible
  std::vector<Vec2> controls;          // nu_k, k = 0..N-1
  std::vector<RecoveryState> states;   // s_k, k = 0..N
  double objective = 0.0;
  double kkt_residual = 0.0;

  // Post state of the robot in the world frame given the collision frame and
  // the robot's world position at the collision instant.
  std::pair<Vec2, Vec2> post_state_world(const CollisionFrame& frame,
                                         const Vec2& robot_position_at_collision) const;
};

// Fixed-horizon constrained LQ recovery: minimize the discretized
// displacement + input cost over the Euler-discretized spring-contact
// dynamics, keeping the arm in contact (box on p_x) and meeting the terminal
// detach conditions p_x(T_r) = 0, v(T_r) = v_T.
RecoveryResult solve_recovery_qp(double p_0x, const Vec2& v_0, const Vec2& v_T, double theta,
                                 const ArmParams& params, const RecoveryWeights& weights,
                                 double qp_tol = 1e-8);

// Invert the contact nonlinearity so the closed loop matches the linear
// model the QP plans with.
Vec2 feedback_linearize(const Vec2& nu, const RecoveryState& state, double theta,
                        const ArmParams& params);

double orientation_control(double theta, double theta_desired, double omega_z,
                           const OrientationGains& gains);

}  // namespace bounce
