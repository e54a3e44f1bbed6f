#include "bounce/traj.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "bounce/jps.hpp"

namespace bounce {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double falling_factorial(int j, int order) {
  double f = 1.0;
  for (int k = 0; k < order; ++k) f *= (j - k);
  return f;
}

// Row vector mapping monomial coefficients to the order-th derivative at t.
Eigen::RowVectorXd basis_row(int n_coeff, double t, int order) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n_coeff);
  for (int j = order; j < n_coeff; ++j)
    row(j) = falling_factorial(j, order) * std::pow(t, j - order);
  return row;
}

double eval_poly(const Eigen::VectorXd& coeff, double t, int order) {
  double acc = 0.0;
  // Horner on the derivative coefficients.
  for (int j = static_cast<int>(coeff.size()) - 1; j >= order; --j)
    acc = acc * t + coeff(j) * falling_factorial(j, order);
  return acc;
}

// Hessian of integral ||p^(q)(t)||^2 dt over [0, T] in coefficient space.
Eigen::MatrixXd min_derivative_cost_matrix(int n_coeff, int q, double T) {
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n_coeff, n_coeff);
  for (int j = q; j < n_coeff; ++j) {
    for (int k = q; k < n_coeff; ++k) {
      const int power = j + k - 2 * q + 1;
      Q(j, k) = falling_factorial(j, q) * falling_factorial(k, q) * std::pow(T, power) / power;
    }
  }
  return Q;
}

// Hermite map: coefficients from (start derivs 0..q-1, end derivs 0..q-1).
Eigen::MatrixXd hermite_inverse(int q, double T) {
  const int n = 2 * q;
  Eigen::MatrixXd H(n, n);
  for (int a = 0; a < q; ++a) {
    H.row(a) = basis_row(n, 0.0, a);
    H.row(q + a) = basis_row(n, T, a);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
  if (!lu.isInvertible()) throw RuntimeFault("degenerate segment duration in Hermite map");
  return lu.inverse();
}

Eigen::VectorXd derivative_coeffs(const Eigen::VectorXd& coeff, int order) {
  const int n = static_cast<int>(coeff.size());
  if (order >= n) return Eigen::VectorXd::Zero(1);
  Eigen::VectorXd out(n - order);
  for (int j = order; j < n; ++j) out(j - order) = coeff(j) * falling_factorial(j, order);
  return out;
}

}  // namespace

std::vector<double> poly_real_roots(const Eigen::VectorXd& coeff, double lo, double hi) {
  int degree = static_cast<int>(coeff.size()) - 1;
  const double scale = coeff.cwiseAbs().maxCoeff();
  if (scale < 1e-300) return {};
  while (degree > 0 && std::abs(coeff(degree)) < 1e-12 * scale) --degree;
  if (degree < 1) return {};
  if (degree == 1) {
    const double r = -coeff(0) / coeff(1);
    if (r >= lo && r <= hi) return {r};
    return {};
  }
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < degree; ++i) companion(i, degree - 1) = -coeff(i) / coeff(degree);
  Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const auto z = es.eigenvalues()(i);
    if (std::abs(z.imag()) > 1e-8 * (1.0 + std::abs(z.real()))) continue;
    const double r = std::clamp(z.real(), lo, hi);
    if (z.real() >= lo - 1e-9 && z.real() <= hi + 1e-9) roots.push_back(r);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

double PiecewisePolynomialTrajectory::total_duration() const {
  double total = 0.0;
  for (const auto& s : segments_) total += s.duration;
  return total;
}

Vec2 PiecewisePolynomialTrajectory::eval_segment(std::size_t segment, double local_t,
                                                 int order) const {
  const auto& s = segments_[segment];
  return Vec2(eval_poly(s.coeff_x, local_t, order), eval_poly(s.coeff_y, local_t, order));
}

Vec2 PiecewisePolynomialTrajectory::eval(double t, int order) const {
  if (segments_.empty()) throw InvalidArgument("empty trajectory");
  const double total = total_duration();
  const double tol = 1e-9 * std::max(1.0, total);
  if (t < -tol || t > total + tol) throw InvalidArgument("eval time outside trajectory span");
  t = std::clamp(t, 0.0, total);
  double start = 0.0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const double end = start + segments_[i].duration;
    if (t < end || i + 1 == segments_.size()) return eval_segment(i, t - start, order);
    start = end;
  }
  return eval_segment(segments_.size() - 1, segments_.back().duration, order);
}

double PiecewisePolynomialTrajectory::max_abs_derivative(int order) const {
  double best = 0.0;
  for (const auto& s : segments_) {
    for (const auto* coeff : {&s.coeff_x, &s.coeff_y}) {
      const Eigen::VectorXd d = derivative_coeffs(*coeff, order);
      best = std::max(best, std::abs(eval_poly(*coeff, 0.0, order)));
      best = std::max(best, std::abs(eval_poly(*coeff, s.duration, order)));
      const Eigen::VectorXd dd = derivative_coeffs(*coeff, order + 1);
      for (double r : poly_real_roots(dd, 0.0, s.duration)) {
        double v = 0.0;
        for (int j = static_cast<int>(d.size()) - 1; j >= 0; --j) v = v * r + d(j);
        best = std::max(best, std::abs(v));
      }
    }
  }
  return best;
}

void PiecewisePolynomialTrajectory::append(const PiecewisePolynomialTrajectory& tail) {
  segments_.insert(segments_.end(), tail.segments_.begin(), tail.segments_.end());
}

void WaypointList::validate() const {
  if (entries.size() < 2) throw InvalidArgument("waypoint list needs at least start and goal");
  if (entries.front().behavior != 0 || entries.back().behavior != 0)
    throw InvalidArgument("first and last waypoints must have behavior 0");
  for (const auto& w : entries) {
    if (w.behavior >= 1 && (w.pre_derivs.empty() || w.post_derivs.empty()))
      throw InvalidArgument("collision waypoint must carry pre and post derivatives");
  }
}

void GtoParams::validate() const {
  if (smoothness_weight < 0 || obstacle_weight < 0 || dynamics_weight < 0)
    throw InvalidArgument("GTO weights must be >= 0");
  for (const ExpCost* c : {&obstacle, &velocity, &accel}) {
    if (c->magnitude <= 0 || c->rise_rate <= 0)
      throw InvalidArgument("exponential cost magnitude and rise rate must be > 0");
  }
  if (samples_per_segment < 1) throw InvalidArgument("samples_per_segment must be >= 1");
}

std::vector<double> allocate_times(const std::vector<Vec2>& waypoints, double v_max, double a_max,
                                   double t_min) {
  if (waypoints.size() < 2) throw InvalidArgument("need at least two waypoints");
  if (v_max <= 0 || a_max <= 0) throw InvalidArgument("limits must be > 0");
  std::vector<double> durations;
  durations.reserve(waypoints.size() - 1);
  for (std::size_t i = 0; i + 1 < waypoints.size(); ++i) {
    const double length = (waypoints[i + 1] - waypoints[i]).norm();
    double t;
    if (length <= 1e-12)
      t = t_min;
    else if (length >= v_max * v_max / a_max)
      t = length / v_max + v_max / a_max;  // trapezoidal
    else
      t = 2.0 * std::sqrt(length / a_max);  // triangular
    durations.push_back(std::max(t, t_min));
  }
  return durations;
}

PiecewisePolynomialTrajectory solve_min_derivative_qp(const std::vector<Vec2>& waypoints,
                                                      const std::vector<double>& durations,
                                                      const BoundaryState& start,
                                                      const BoundaryState& end, int q) {
  const int n_seg = static_cast<int>(durations.size());
  if (n_seg < 1 || waypoints.size() != durations.size() + 1)
    throw InvalidArgument("waypoint/duration count mismatch");
  if (q < 1 || q > 4) throw InvalidArgument("derivative order q must be in [1, 4]");
  if (start.derivs.empty() || end.derivs.empty())
    throw InvalidArgument("boundary states must pin at least the position");
  for (int i = 0; i < n_seg; ++i) {
    if (durations[i] <= 0.0)
      throw RuntimeFault("min-derivative QP singular: segment " + std::to_string(i) +
                         " has non-positive duration");
  }

  const int n_coeff = 2 * q;
  const int n_vars = n_coeff * n_seg;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n_vars, n_vars);
  for (int i = 0; i < n_seg; ++i)
    Q.block(i * n_coeff, i * n_coeff, n_coeff, n_coeff) =
        min_derivative_cost_matrix(n_coeff, q, durations[i]);

  const int n_start = std::min<int>(static_cast<int>(start.derivs.size()), q);
  const int n_end = std::min<int>(static_cast<int>(end.derivs.size()), q);
  const int n_rows = n_start + n_end + (n_seg - 1) * (2 + (q - 1));
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n_rows, n_vars);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n_rows, 2);

  int row = 0;
  for (int a = 0; a < n_start; ++a, ++row) {
    A.block(row, 0, 1, n_coeff) = basis_row(n_coeff, 0.0, a);
    b.row(row) << start.derivs[a].x(), start.derivs[a].y();
  }
  for (int a = 0; a < n_end; ++a, ++row) {
    A.block(row, (n_seg - 1) * n_coeff, 1, n_coeff) =
        basis_row(n_coeff, durations.back(), a);
    b.row(row) << end.derivs[a].x(), end.derivs[a].y();
  }
  for (int i = 0; i + 1 < n_seg; ++i) {
    const Vec2& w = waypoints[i + 1];
    A.block(row, i * n_coeff, 1, n_coeff) = basis_row(n_coeff, durations[i], 0);
    b.row(row) << w.x(), w.y();
    ++row;
    A.block(row, (i + 1) * n_coeff, 1, n_coeff) = basis_row(n_coeff, 0.0, 0);
    b.row(row) << w.x(), w.y();
    ++row;
    for (int a = 1; a < q; ++a, ++row) {
      A.block(row, i * n_coeff, 1, n_coeff) = basis_row(n_coeff, durations[i], a);
      A.block(row, (i + 1) * n_coeff, 1, n_coeff) -= basis_row(n_coeff, 0.0, a);
    }
  }

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n_vars + n_rows, n_vars + n_rows);
  kkt.topLeftCorner(n_vars, n_vars) = 2.0 * Q;
  kkt.block(n_vars, 0, n_rows, n_vars) = A;
  kkt.block(0, n_vars, n_vars, n_rows) = A.transpose();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n_vars + n_rows, 2);
  rhs.bottomRows(n_rows) = b;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) {
    for (int i = 0; i + 1 < n_seg; ++i) {
      if ((waypoints[i + 1] - waypoints[i]).norm() < 1e-12)
        throw RuntimeFault("min-derivative QP singular: duplicate waypoints at segment " +
                           std::to_string(i));
    }
    throw RuntimeFault("min-derivative QP singular KKT system");
  }
  const Eigen::MatrixXd sol = lu.solve(rhs);
  const double residual = (A * sol.topRows(n_vars) - b).cwiseAbs().maxCoeff();
  if (residual > 1e-6)
    throw RuntimeFault("min-derivative QP constraint residual too large");

  std::vector<PolySegment> segments(n_seg);
  for (int i = 0; i < n_seg; ++i) {
    segments[i].coeff_x = sol.col(0).segment(i * n_coeff, n_coeff);
    segments[i].coeff_y = sol.col(1).segment(i * n_coeff, n_coeff);
    segments[i].duration = durations[i];
  }
  return PiecewisePolynomialTrajectory(q, std::move(segments));
}

double smoothness_cost(const PiecewisePolynomialTrajectory& traj) {
  double cost = 0.0;
  const int q = traj.derivative_order();
  for (const auto& s : traj.segments()) {
    const Eigen::MatrixXd Q =
        min_derivative_cost_matrix(static_cast<int>(s.coeff_x.size()), q, s.duration);
    cost += s.coeff_x.dot(Q * s.coeff_x) + s.coeff_y.dot(Q * s.coeff_y);
  }
  return cost;
}

JointParameterization::JointParameterization(const PiecewisePolynomialTrajectory& traj,
                                             const std::vector<bool>& fully_pinned_joints)
    : q_(traj.derivative_order()) {
  const std::size_t n_seg = traj.size();
  const std::size_t n_joints = n_seg + 1;
  if (fully_pinned_joints.size() != n_joints)
    throw InvalidArgument("pinned-joint mask size must equal joint count");
  durations_.resize(n_seg);
  joint_derivs_.assign(n_joints, Eigen::MatrixXd::Zero(q_, 2));
  for (std::size_t i = 0; i < n_seg; ++i) {
    durations_[i] = traj.segments()[i].duration;
    for (int a = 0; a < q_; ++a) {
      const Vec2 v = traj.eval_segment(i, 0.0, a);
      joint_derivs_[i](a, 0) = v.x();
      joint_derivs_[i](a, 1) = v.y();
    }
  }
  for (int a = 0; a < q_; ++a) {
    const Vec2 v = traj.eval_segment(n_seg - 1, durations_.back(), a);
    joint_derivs_[n_joints - 1](a, 0) = v.x();
    joint_derivs_[n_joints - 1](a, 1) = v.y();
  }
  // Positions stay pinned everywhere; interior derivative orders >= 1 are the
  // free variables. Boundary joints and masked joints are fully pinned.
  for (std::size_t j = 1; j + 1 < n_joints; ++j) {
    if (fully_pinned_joints[j]) continue;
    for (int a = 1; a < q_; ++a)
      for (int axis = 0; axis < 2; ++axis)
        free_vars_.push_back({static_cast<int>(j), a, axis});
  }
}

Eigen::VectorXd JointParameterization::pack() const {
  Eigen::VectorXd x(free_vars_.size());
  for (std::size_t i = 0; i < free_vars_.size(); ++i)
    x(i) = joint_derivs_[free_vars_[i].joint](free_vars_[i].order, free_vars_[i].axis);
  return x;
}

PiecewisePolynomialTrajectory JointParameterization::unpack(const Eigen::VectorXd& x) const {
  auto derivs = joint_derivs_;
  for (std::size_t i = 0; i < free_vars_.size(); ++i)
    derivs[free_vars_[i].joint](free_vars_[i].order, free_vars_[i].axis) = x(i);
  std::vector<PolySegment> segments(durations_.size());
  for (std::size_t i = 0; i < durations_.size(); ++i) {
    const Eigen::MatrixXd hinv = hermite_inverse(q_, durations_[i]);
    Eigen::VectorXd bx(2 * q_), by(2 * q_);
    bx.head(q_) = derivs[i].col(0);
    bx.tail(q_) = derivs[i + 1].col(0);
    by.head(q_) = derivs[i].col(1);
    by.tail(q_) = derivs[i + 1].col(1);
    segments[i].coeff_x = hinv * bx;
    segments[i].coeff_y = hinv * by;
    segments[i].duration = durations_[i];
  }
  return PiecewisePolynomialTrajectory(q_, std::move(segments));
}

namespace {

// Accumulates d(cost)/d(sample derivative) contributions back onto the free
// joint-derivative variables of a trajectory.
class SampleBackprop {
 public:
  SampleBackprop(const PiecewisePolynomialTrajectory& traj, int q)
      : q_(q), n_seg_(traj.size()) {
    hinv_.reserve(n_seg_);
    for (const auto& s : traj.segments()) hinv_.push_back(hermite_inverse(q, s.duration));
    grad_ = Eigen::MatrixXd::Zero(q * (n_seg_ + 1), 2);
  }

  // weight * d/d(joint derivs) of D^order p_axis(segment, t).
  void add(std::size_t segment, double t, int order, int axis, double weight) {
    const Eigen::RowVectorXd g =
        basis_row(2 * q_, t, order) * hinv_[segment];  // 1 x 2q in joint coords
    for (int k = 0; k < q_; ++k) {
      grad_(segment * q_ + k, axis) += weight * g(k);
      grad_((segment + 1) * q_ + k, axis) += weight * g(q_ + k);
    }
  }

  Eigen::VectorXd project(const std::vector<JointParameterization::FreeVar>& free_vars) const {
    Eigen::VectorXd out(free_vars.size());
    for (std::size_t i = 0; i < free_vars.size(); ++i)
      out(i) = grad_(free_vars[i].joint * q_ + free_vars[i].order, free_vars[i].axis);
    return out;
  }

  const Eigen::MatrixXd& raw() const { return grad_; }

 private:
  int q_;
  std::size_t n_seg_;
  std::vector<Eigen::MatrixXd> hinv_;
  Eigen::MatrixXd grad_;
};

std::vector<JointParameterization::FreeVar> all_interior_free_vars(std::size_t n_joints, int q) {
  std::vector<JointParameterization::FreeVar> vars;
  for (std::size_t j = 1; j + 1 < n_joints; ++j)
    for (int a = 1; a < q; ++a)
      for (int axis = 0; axis < 2; ++axis) vars.push_back({static_cast<int>(j), a, axis});
  return vars;
}

double exp_distance_cost(const ExpCost& c, double d, double* slope = nullptr) {
  const double v = c.magnitude * std::exp(-(d - c.threshold) / c.rise_rate);
  if (slope) *slope = -v / c.rise_rate;
  return v;
}

double exp_limit_cost(const ExpCost& c, double x, double limit, double* slope = nullptr) {
  const double v = c.magnitude * std::exp((x - (limit - c.threshold)) / c.rise_rate);
  if (slope) *slope = v / c.rise_rate;
  return v;
}

}  // namespace

CostWithGradient cost_obstacle(const PiecewisePolynomialTrajectory& traj,
                               const DistanceField& field, const GtoParams& params) {
  const int q = traj.derivative_order();
  SampleBackprop bp(traj, q);
  double total = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double T = traj.segments()[i].duration;
    const double dt = T / params.samples_per_segment;
    for (int k = 0; k < params.samples_per_segment; ++k) {
      const double t = (k + 0.5) * dt;
      const Vec2 p = traj.eval_segment(i, t, 0);
      const Vec2 v = traj.eval_segment(i, t, 1);
      const double speed = v.norm();
      double slope = 0.0;
      const double c = exp_distance_cost(params.obstacle, field.distance(p), &slope);
      total += c * speed * dt;
      const Vec2 dp = slope * field.gradient(p) * speed * dt;
      bp.add(i, t, 0, 0, dp.x());
      bp.add(i, t, 0, 1, dp.y());
      if (speed > 1e-12) {
        const Vec2 dv = c * (v / speed) * dt;
        bp.add(i, t, 1, 0, dv.x());
        bp.add(i, t, 1, 1, dv.y());
      }
    }
  }
  CostWithGradient out;
  out.value = total;
  out.gradient = bp.project(all_interior_free_vars(traj.size() + 1, q));
  return out;
}

std::pair<CostWithGradient, CostWithGradient> cost_dynamics(
    const PiecewisePolynomialTrajectory& traj, double v_max, double a_max,
    const GtoParams& params) {
  const int q = traj.derivative_order();
  SampleBackprop bp_v(traj, q), bp_a(traj, q);
  double total_v = 0.0, total_a = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double T = traj.segments()[i].duration;
    const double dt = T / params.samples_per_segment;
    for (int k = 0; k < params.samples_per_segment; ++k) {
      const double t = (k + 0.5) * dt;
      const Vec2 v = traj.eval_segment(i, t, 1);
      const Vec2 a = traj.eval_segment(i, t, 2);
      const Vec2 jerk = traj.eval_segment(i, t, 3);
      for (int axis = 0; axis < 2; ++axis) {
        double slope_v = 0.0;
        const double cv = exp_limit_cost(params.velocity, std::abs(v(axis)), v_max, &slope_v);
        total_v += cv * std::abs(a(axis)) * dt;
        bp_v.add(i, t, 1, axis, slope_v * sign_pos(v(axis)) * std::abs(a(axis)) * dt);
        if (std::abs(a(axis)) > 1e-12) bp_v.add(i, t, 2, axis, cv * sign_pos(a(axis)) * dt);

        double slope_a = 0.0;
        const double ca = exp_limit_cost(params.accel, std::abs(a(axis)), a_max, &slope_a);
        total_a += ca * std::abs(jerk(axis)) * dt;
        bp_a.add(i, t, 2, axis, slope_a * sign_pos(a(axis)) * std::abs(jerk(axis)) * dt);
        if (std::abs(jerk(axis)) > 1e-12) bp_a.add(i, t, 3, axis, ca * sign_pos(jerk(axis)) * dt);
      }
    }
  }
  const auto vars = all_interior_free_vars(traj.size() + 1, q);
  CostWithGradient jv, ja;
  jv.value = total_v;
  jv.gradient = bp_v.project(vars);
  ja.value = total_a;
  ja.gradient = bp_a.project(vars);
  return {jv, ja};
}

namespace {

// Trust-region Newton with dogleg steps and a Cauchy-point fallback when the
// model Hessian is indefinite.
template <typename Func, typename Grad>
Eigen::VectorXd trust_region_newton(Eigen::VectorXd x, Func f, Grad grad, int max_iters,
                                    double gtol) {
  if (x.size() == 0) return x;
  double radius = 1.0;
  double fx = f(x);
  if (!std::isfinite(fx)) throw RuntimeFault("GTO objective non-finite at the initial point");
  const int n = static_cast<int>(x.size());

  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::VectorXd g = grad(x);
    if (g.lpNorm<Eigen::Infinity>() <= gtol) break;

    Eigen::MatrixXd H(n, n);
    const double h_eps = 1e-5;
    for (int j = 0; j < n; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp(j) += h_eps;
      xm(j) -= h_eps;
      H.col(j) = (grad(xp) - grad(xm)) / (2.0 * h_eps);
    }
    H = 0.5 * (H + H.transpose());

    Eigen::VectorXd step;
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    bool have_newton = false;
    if (llt.info() == Eigen::Success) {
      step = llt.solve(-g);
      have_newton = true;
    }
    if (have_newton && step.norm() > radius) {
      // dogleg between the Cauchy point and the Newton step
      const double ghg = g.dot(H * g);
      Eigen::VectorXd cauchy =
          (ghg > 0) ? Eigen::VectorXd(-(g.squaredNorm() / ghg) * g) : Eigen::VectorXd(-g);
      if (cauchy.norm() >= radius) {
        step = -(radius / g.norm()) * g;
      } else {
        const Eigen::VectorXd d = step - cauchy;
        const double a = d.squaredNorm();
        const double bq = 2.0 * cauchy.dot(d);
        const double c = cauchy.squaredNorm() - radius * radius;
        const double tau = (-bq + std::sqrt(std::max(0.0, bq * bq - 4 * a * c))) / (2 * a);
        step = cauchy + tau * d;
      }
    } else if (!have_newton) {
      // indefinite Hessian: Cauchy point
      const double ghg = g.dot(H * g);
      double t = radius / g.norm();
      if (ghg > 0) t = std::min(t, g.squaredNorm() / ghg);
      step = -t * g;
    }

    const double predicted = -(g.dot(step) + 0.5 * step.dot(H * step));
    const double f_new = f(x + step);
    if (!std::isfinite(f_new))
      throw RuntimeFault("GTO objective non-finite (trajectory escaped the map?)");
    const double actual = fx - f_new;
    const double rho = predicted > 1e-18 ? actual / predicted : (actual > 0 ? 1.0 : -1.0);

    if (rho < 0.25)
      radius *= 0.25;
    else if (rho > 0.75 && step.norm() > 0.99 * radius)
      radius *= 2.0;
    if (rho > 1e-4 && actual > 0) {
      x += step;
      fx = f_new;
    }
    if (radius < 1e-12) break;
  }
  return x;
}

}  // namespace

PiecewisePolynomialTrajectory optimize_gto(const PiecewisePolynomialTrajectory& traj_init,
                                           const DistanceField& field, const GtoParams& params,
                                           const std::vector<bool>& fully_pinned_joints) {
  params.validate();
  const int q = traj_init.derivative_order();
  const std::size_t n_seg = traj_init.size();
  const std::size_t n_joints = n_seg + 1;
  if (fully_pinned_joints.size() != n_joints)
    throw InvalidArgument("pinned-joint mask size must equal joint count");

  // Step 1: move free interior waypoints against the obstacle cost of the
  // piecewise-linear path through them.
  std::vector<Vec2> waypoints(n_joints);
  for (std::size_t i = 0; i < n_seg; ++i) waypoints[i] = traj_init.eval_segment(i, 0.0, 0);
  waypoints[n_seg] = traj_init.eval_segment(n_seg - 1, traj_init.segments().back().duration, 0);

  std::vector<std::size_t> movable;
  for (std::size_t j = 1; j + 1 < n_joints; ++j)
    if (!fully_pinned_joints[j]) movable.push_back(j);

  if (!movable.empty() && params.obstacle_weight > 0 && !field.empty()) {
    auto path_cost = [&](const std::vector<Vec2>& wps) {
      double total = 0.0;
      const int n = params.samples_per_segment;
      for (std::size_t i = 0; i + 1 < wps.size(); ++i) {
        const double ds = (wps[i + 1] - wps[i]).norm() / n;
        for (int k = 0; k < n; ++k) {
          const Vec2 p = wps[i] + (k + 0.5) / n * (wps[i + 1] - wps[i]);
          total += exp_distance_cost(params.obstacle, field.distance(p)) * ds;
        }
      }
      return total;
    };
    Eigen::VectorXd x0(2 * movable.size());
    for (std::size_t i = 0; i < movable.size(); ++i) x0.segment<2>(2 * i) = waypoints[movable[i]];
    auto assemble = [&](const Eigen::VectorXd& x) {
      auto wps = waypoints;
      for (std::size_t i = 0; i < movable.size(); ++i) wps[movable[i]] = x.segment<2>(2 * i);
      return wps;
    };
    auto f = [&](const Eigen::VectorXd& x) { return path_cost(assemble(x)); };
    auto g = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd grad(x.size());
      const double eps = 1e-6;
      for (int j = 0; j < x.size(); ++j) {
        Eigen::VectorXd xp = x, xm = x;
        xp(j) += eps;
        xm(j) -= eps;
        grad(j) = (f(xp) - f(xm)) / (2 * eps);
      }
      return grad;
    };
    const Eigen::VectorXd x_opt =
        trust_region_newton(x0, f, g, params.max_iterations, params.gradient_tol);
    waypoints = assemble(x_opt);
  }

  // Step 2: revise segment durations in proportion to the moved chord
  // lengths, re-solve the QP, then trust-region Newton over the free joint
  // derivatives of the full objective.
  std::vector<double> durations(n_seg);
  bool moved = false;
  for (std::size_t i = 0; i < n_seg; ++i) {
    durations[i] = traj_init.segments()[i].duration;
    const Vec2 old_a = traj_init.eval_segment(i, 0.0, 0);
    const Vec2 old_b = traj_init.eval_segment(i, traj_init.segments()[i].duration, 0);
    const double old_len = (old_b - old_a).norm();
    const double new_len = (waypoints[i + 1] - waypoints[i]).norm();
    if (old_len > 1e-9 && std::abs(new_len - old_len) > 1e-12) {
      durations[i] *= new_len / old_len;
      moved = true;
    }
  }

  PiecewisePolynomialTrajectory current = traj_init;
  if (moved) {
    BoundaryState start, end;
    for (int a = 0; a < q; ++a) {
      start.derivs.push_back(traj_init.eval_segment(0, 0.0, a));
      end.derivs.push_back(
          traj_init.eval_segment(n_seg - 1, traj_init.segments().back().duration, a));
    }
    start.derivs[0] = waypoints.front();
    end.derivs[0] = waypoints.back();
    current = solve_min_derivative_qp(waypoints, durations, start, end, q);
  }

  JointParameterization param(current, fully_pinned_joints);
  if (param.free_count() == 0) return current;

  auto objective_parts = [&](const PiecewisePolynomialTrajectory& traj) {
    double value = params.smoothness_weight * smoothness_cost(traj);
    if (params.obstacle_weight > 0 && !field.empty())
      value += params.obstacle_weight * cost_obstacle(traj, field, params).value;
    if (params.dynamics_weight > 0) {
      const auto [jv, ja] = cost_dynamics(traj, params.v_max, params.a_max, params);
      value += params.dynamics_weight * (jv.value + ja.value);
    }
    return value;
  };
  auto project = [&](const Eigen::VectorXd& full) {
    const auto& fvs = param.free_vars();
    Eigen::VectorXd out(fvs.size());
    for (std::size_t i = 0; i < fvs.size(); ++i) {
      const auto& fv = fvs[i];
      out(i) = full((fv.joint * q + fv.order) * 2 + fv.axis);
    }
    return out;
  };
  auto full_gradient = [&](const PiecewisePolynomialTrajectory& traj) {
    // Gradient over all joint derivatives, flattened (joint, order, axis).
    Eigen::VectorXd full = Eigen::VectorXd::Zero(static_cast<int>(n_joints) * q * 2);
    SampleBackprop bp(traj, q);
    // smoothness: d/d(eta) eta'Q eta = 2 Q eta, mapped into joint coords
    for (std::size_t i = 0; i < n_seg; ++i) {
      const auto& s = traj.segments()[i];
      const Eigen::MatrixXd Q = min_derivative_cost_matrix(2 * q, q, s.duration);
      const Eigen::MatrixXd hinv = hermite_inverse(q, s.duration);
      for (int axis = 0; axis < 2; ++axis) {
        const Eigen::VectorXd eta = axis == 0 ? s.coeff_x : s.coeff_y;
        const Eigen::VectorXd gj = 2.0 * hinv.transpose() * (Q * eta);
        for (int k = 0; k < q; ++k) {
          full((i * q + k) * 2 + axis) += params.smoothness_weight * gj(k);
          full(((i + 1) * q + k) * 2 + axis) += params.smoothness_weight * gj(q + k);
        }
      }
    }
    auto fold = [&](const Eigen::VectorXd& g, double w) {
      const auto vars = all_interior_free_vars(n_joints, q);
      for (std::size_t i = 0; i < vars.size(); ++i)
        full((vars[i].joint * q + vars[i].order) * 2 + vars[i].axis) += w * g(i);
    };
    if (params.obstacle_weight > 0 && !field.empty())
      fold(cost_obstacle(traj, field, params).gradient, params.obstacle_weight);
    if (params.dynamics_weight > 0) {
      const auto [jv, ja] = cost_dynamics(traj, params.v_max, params.a_max, params);
      fold(jv.gradient, params.dynamics_weight);
      fold(ja.gradient, params.dynamics_weight);
    }
    return full;
  };

  auto f = [&](const Eigen::VectorXd& x) { return objective_parts(param.unpack(x)); };
  auto g = [&](const Eigen::VectorXd& x) { return project(full_gradient(param.unpack(x))); };
  const Eigen::VectorXd x_opt =
      trust_region_newton(param.pack(), f, g, params.max_iterations, params.gradient_tol);
  auto result = param.unpack(x_opt);
  for (std::size_t i = 0; i < n_seg; ++i)
    result.segments()[i].ends_in_collision = traj_init.segments()[i].ends_in_collision;
  return result;
}

PiecewisePolynomialTrajectory time_scale(const PiecewisePolynomialTrajectory& traj, double v_max,
                                         double a_max) {
  if (v_max <= 0 || a_max <= 0) throw InvalidArgument("limits must be > 0");
  const double max_v = traj.max_abs_derivative(1);
  const double max_a = traj.max_abs_derivative(2);
  const double kappa =
      std::max({1.0, max_v / v_max, std::sqrt(std::max(0.0, max_a / a_max))});
  if (kappa <= 1.0 + 1e-12) return traj;

  auto segments = traj.segments();
  for (auto& s : segments) {
    double scale = 1.0;
    for (int j = 0; j < s.coeff_x.size(); ++j) {
      s.coeff_x(j) *= scale;
      s.coeff_y(j) *= scale;
      scale /= kappa;
    }
    s.duration *= kappa;
  }
  return PiecewisePolynomialTrajectory(traj.derivative_order(), std::move(segments));
}

AdjustResult adjust_waypoints(const Vec2& p_r, const WaypointList& list,
                              const CollisionFrame& frame, std::size_t i_c,
                              const OccupancyGrid& grid, double explore_distance,
                              bool surface_fully_visible, const AdjustTiming& timing) {
  list.validate();
  if (i_c + 1 >= list.entries.size()) throw InvalidArgument("collision segment index out of range");
  if (timing.original_durations.empty())
    throw InvalidArgument("timing must carry the collided segment duration");

  const Vec2 p_next = list.entries[i_c + 1].position;
  AdjustResult result;
  result.waypoints.push_back(p_r);

  auto tail_positions = [&]() {
    std::vector<Vec2> tail;
    for (std::size_t j = i_c + 1; j < list.entries.size(); ++j)
      tail.push_back(list.entries[j].position);
    return tail;
  };

  if (grid.in_extent(p_next) && grid.segment_free(p_r, p_next)) {
    result.status = AdjustStatus::Unchanged;
    const auto tail = tail_positions();
    result.waypoints.insert(result.waypoints.end(), tail.begin(), tail.end());
    result.durations = timing.original_durations;
    result.durations[0] =
        std::max(timing.original_durations[0] - timing.elapsed_in_segment, 0.1);
    return result;
  }

  std::optional<Vec2> p_add;
  if (surface_fully_visible) {
    const auto path = jps_path(grid, p_r, p_next);
    if (!path) {
      result.status = AdjustStatus::Trapped;
      return result;
    }
    for (std::size_t k = 1; k < path->size(); ++k) {
      if (grid.segment_free(p_r, (*path)[k]))
        p_add = (*path)[k];
      else
        break;
    }
    if (!p_add) {
      result.status = AdjustStatus::Trapped;
      return result;
    }
  } else {
    const Vec2 t_hat = frame.tangent;
    const double plus = free_distance(grid, p_r, t_hat, 2.0 * explore_distance);
    const double minus = free_distance(grid, p_r, -t_hat, 2.0 * explore_distance);
    const double longer = std::max(plus, minus);
    if (longer < explore_distance) {
      result.status = AdjustStatus::Trapped;
      return result;
    }
    p_add = p_r + (plus >= minus ? 1.0 : -1.0) * explore_distance * t_hat;
  }

  result.status = AdjustStatus::Inserted;
  result.waypoints.push_back(*p_add);
  const auto tail = tail_positions();
  result.waypoints.insert(result.waypoints.end(), tail.begin(), tail.end());
  result.durations = allocate_times(result.waypoints, timing.v_max, timing.a_max);
  return result;
}

void export_trajectory_csv(const PiecewisePolynomialTrajectory& traj, double sample_rate,
                           std::ostream& out) {
  if (sample_rate <= 0) throw InvalidArgument("sample rate must be > 0");
  out << "t,x,y,vx,vy,ax,ay,segment_id,zeta_flag\n";
  const double total = traj.total_duration();
  const double dt = 1.0 / sample_rate;
  double start = 0.0;
  std::size_t segment = 0;
  const auto& segs = traj.segments();
  for (double t = 0.0; t <= total + 1e-9; t += dt) {
    const double tc = std::min(t, total);
    while (segment + 1 < segs.size() && tc > start + segs[segment].duration + 1e-12) {
      start += segs[segment].duration;
      ++segment;
    }
    const Vec2 p = traj.eval(tc, 0), v = traj.eval(tc, 1), a = traj.eval(tc, 2);
    out << tc << ',' << p.x() << ',' << p.y() << ',' << v.x() << ',' << v.y() << ',' << a.x()
        << ',' << a.y() << ',' << segment << ',' << (segs[segment].ends_in_collision ? 1 : 0)
        << '\n';
  }
}

}  // namespace bounce
