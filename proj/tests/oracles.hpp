// Test-only oracles, independent of the implementation paths they check.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <unordered_map>
#include <vector>

#include "bounce/qp.hpp"
#include "bounce/recovery.hpp"
#include "bounce/search.hpp"
#include "bounce/world.hpp"

namespace oracles {

using bounce::Vec2;

// --- geometry ---------------------------------------------------------------

// Cells touched by a segment, found by dense sampling (step = resolution/64).
inline std::set<std::pair<int, int>> dense_cells(const bounce::OccupancyGrid& grid, const Vec2& a,
                                                 const Vec2& b) {
  std::set<std::pair<int, int>> cells;
  const double len = (b - a).norm();
  const int n = std::max(2, static_cast<int>(std::ceil(len / (grid.resolution() / 64.0))));
  for (int i = 0; i <= n; ++i) {
    const Vec2 p = a + (b - a) * (static_cast<double>(i) / n);
    cells.insert({grid.cell_x(p.x()), grid.cell_y(p.y())});
  }
  return cells;
}

// Distance from origin along dir to an axis-aligned rectangle; +inf if missed.
inline double ray_rect(const Vec2& origin, const Vec2& dir, const Vec2& lo, const Vec2& hi) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(dir(axis)) < 1e-15) {
      if (origin(axis) < lo(axis) || origin(axis) > hi(axis))
        return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = (lo(axis) - origin(axis)) / dir(axis);
    double tb = (hi(axis) - origin(axis)) / dir(axis);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 < t0 || t1 < 0) return std::numeric_limits<double>::infinity();
  return std::max(t0, 0.0);
}

inline double ray_circle(const Vec2& origin, const Vec2& dir, const Vec2& center, double radius) {
  const Vec2 oc = origin - center;
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return std::numeric_limits<double>::infinity();
  const double t = -b - std::sqrt(disc);
  if (t >= 0) return t;
  const double t2 = -b + std::sqrt(disc);
  return t2 >= 0 ? t2 : std::numeric_limits<double>::infinity();
}

// --- dense QP by exhaustive active-set enumeration ---------------------------

struct EnumQpResult {
  bool feasible = false;
  double objective = std::numeric_limits<double>::infinity();
  Eigen::VectorXd x;
};

// Every subset of inequality rows is tried as an active set; a candidate is
// valid when it satisfies all inequalities primally and has nonnegative
// multipliers on the active rows. Exponential, for small problems only.
inline EnumQpResult enumerate_qp(const bounce::QpProblem& p, double tol = 1e-9) {
  const int n = static_cast<int>(p.P.rows());
  const int m_eq = static_cast<int>(p.A_eq.rows());
  const int m_in = static_cast<int>(p.A_in.rows());
  EnumQpResult best;
  for (std::uint64_t mask = 0; mask < (1ull << m_in); ++mask) {
    std::vector<int> active;
    for (int i = 0; i < m_in; ++i)
      if (mask & (1ull << i)) active.push_back(i);
    const int m = m_eq + static_cast<int>(active.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
    kkt.topLeftCorner(n, n) = p.P;
    rhs.head(n) = -p.q;
    for (int i = 0; i < m_eq; ++i) {
      kkt.block(n + i, 0, 1, n) = p.A_eq.row(i);
      kkt.block(0, n + i, n, 1) = p.A_eq.row(i).transpose();
      rhs(n + i) = p.b_eq(i);
    }
    for (std::size_t i = 0; i < active.size(); ++i) {
      kkt.block(n + m_eq + i, 0, 1, n) = p.A_in.row(active[i]);
      kkt.block(0, n + m_eq + i, n, 1) = p.A_in.row(active[i]).transpose();
      rhs(n + m_eq + i) = p.b_in(active[i]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    bool ok = true;
    for (int i = 0; i < m_in && ok; ++i)
      if (p.A_in.row(i).dot(x) > p.b_in(i) + tol) ok = false;
    for (std::size_t i = 0; i < active.size() && ok; ++i)
      if (sol(n + m_eq + i) < -tol) ok = false;
    if (!ok) continue;
    const double obj = 0.5 * x.dot(p.P * x) + p.q.dot(x);
    if (obj < best.objective) {
      best.feasible = true;
      best.objective = obj;
      best.x = x;
    }
  }
  return best;
}

// --- finite-element minimum-derivative oracle --------------------------------

// Discretized brute-force solution of the minimum-derivative problem: the
// q-th derivative is piecewise linear on `elements` sub-intervals per
// segment, states are propagated exactly, boundary/waypoint constraints are
// imposed on the discretization, and the quadratic program is solved by a
// KKT system over the control nodes. Independent of the polynomial
// coefficient formulation under test.
struct FeBoundary {
  std::vector<Vec2> derivs;
};

inline double min_derivative_fe_cost(const std::vector<Vec2>& waypoints,
                                     const std::vector<double>& durations,
                                     const FeBoundary& start, const FeBoundary& end, int q,
                                     int elements = 48) {
  const int n_seg = static_cast<int>(durations.size());
  const int nodes_per_seg = elements + 1;
  const int n_nodes = n_seg * elements + 1;  // control nodes, shared at joints
  const int n_free_init = q - static_cast<int>(start.derivs.size());

  double total_cost = 0.0;
  for (int axis = 0; axis < 2; ++axis) {
    // unknowns: control node values, then free initial derivatives
    const int n_vars = n_nodes + std::max(0, n_free_init);
    // state(t) = M(t) * vars + c(t); propagate per element with exact
    // integration (Gauss-Legendre, exact for these polynomial integrands).
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(q, n_vars);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(q);
    for (std::size_t a = 0; a < start.derivs.size(); ++a) c(a) = start.derivs[a](axis);
    for (int a = 0; a < n_free_init; ++a) M(start.derivs.size() + a, n_nodes + a) = 1.0;

    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n_vars, n_vars);
    std::vector<Eigen::MatrixXd> joint_M;   // state maps at segment ends
    std::vector<Eigen::VectorXd> joint_c;

    static const double gl_x[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                   0.5384693101056831, 0.9061798459386640};
    static const double gl_w[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                   0.4786286704993665, 0.2369268850561891};

    int node = 0;
    for (int s = 0; s < n_seg; ++s) {
      const double dt = durations[s] / elements;
      for (int e = 0; e < elements; ++e, ++node) {
        // element cost: dt/2 * sum w_k * u(x_k)^2 with u linear between nodes
        for (int k = 0; k < 5; ++k) {
          const double xi = 0.5 * (gl_x[k] + 1.0);  // in [0,1]
          const double w = 0.5 * dt * gl_w[k];
          Eigen::RowVectorXd u_row = Eigen::RowVectorXd::Zero(n_vars);
          u_row(node) = 1.0 - xi;
          u_row(node + 1) = xi;
          P += 2.0 * w * u_row.transpose() * u_row;
        }
        // exact state update across the element
        Eigen::MatrixXd E = Eigen::MatrixXd::Zero(q, q);
        for (int i = 0; i < q; ++i)
          for (int j = i; j < q; ++j) E(i, j) = std::pow(dt, j - i) / std::tgamma(j - i + 1);
        Eigen::VectorXd n1 = Eigen::VectorXd::Zero(q), n2 = Eigen::VectorXd::Zero(q);
        for (int k = 0; k < 5; ++k) {
          const double sigma = 0.5 * dt * (gl_x[k] + 1.0);
          const double w = 0.5 * dt * gl_w[k];
          for (int i = 0; i < q; ++i) {
            const int p_ord = q - 1 - i;
            const double kern = std::pow(dt - sigma, p_ord) / std::tgamma(p_ord + 1);
            n1(i) += w * kern * (1.0 - sigma / dt);
            n2(i) += w * kern * (sigma / dt);
          }
        }
        Eigen::MatrixXd M_new = E * M;
        M_new.col(node) += n1;
        M_new.col(node + 1) += n2;
        M = M_new;
        c = E * c;
      }
      joint_M.push_back(M);
      joint_c.push_back(c);
    }

    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> rhs;
    for (int s = 0; s + 1 < n_seg; ++s) {
      rows.push_back(joint_M[s].row(0));
      rhs.push_back(waypoints[s + 1](axis) - joint_c[s](0));
    }
    for (std::size_t a = 0; a < end.derivs.size(); ++a) {
      rows.push_back(joint_M.back().row(a));
      rhs.push_back(end.derivs[a](axis) - joint_c.back()(a));
    }

    const int m = static_cast<int>(rows.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n_vars + m, n_vars + m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n_vars + m);
    kkt.topLeftCorner(n_vars, n_vars) = P;
    for (int i = 0; i < m; ++i) {
      kkt.block(n_vars + i, 0, 1, n_vars) = rows[i];
      kkt.block(0, n_vars + i, n_vars, 1) = rows[i].transpose();
      b(n_vars + i) = rhs[i];
    }
    const Eigen::VectorXd sol = Eigen::FullPivLU<Eigen::MatrixXd>(kkt).solve(b);
    const Eigen::VectorXd x = sol.head(n_vars);
    total_cost += 0.5 * x.dot(P * x);
  }
  return total_cost;
}

// --- lattice Dijkstra --------------------------------------------------------

// Optimal cost-to-go over the collision-avoidance lattice graph, by plain
// Dijkstra over the same successor generator the planner uses (propagate +
// check_edge). Heuristic-free by construction.
inline std::optional<double> lattice_dijkstra(const bounce::FlatState& start, const Vec2& goal,
                                              const bounce::OccupancyGrid& grid,
                                              const bounce::SearchConfig& cfg,
                                              long max_pops = 2000000) {
  struct Key {
    long px, py, vx, vy;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::size_t h = 14695981039346656037ull;
      for (long v : {k.px, k.py, k.vx, k.vy})
        h ^= static_cast<std::size_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
      return h;
    }
  };
  auto key_of = [&](const bounce::FlatState& s) {
    return Key{std::llround(s.position.x() / cfg.position_key_resolution),
               std::llround(s.position.y() / cfg.position_key_resolution),
               std::llround(s.velocity.x() / cfg.velocity_key_resolution),
               std::llround(s.velocity.y() / cfg.velocity_key_resolution)};
  };
  const auto lattice = bounce::control_lattice(cfg.u_max, cfg.lattice_samples);
  std::unordered_map<Key, double, KeyHash> best;
  using Entry = std::pair<double, std::pair<Key, bounce::FlatState>>;
  auto cmp = [](const Entry& a, const Entry& b) { return a.first > b.first; };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> open(cmp);
  best[key_of(start)] = 0.0;
  open.push({0.0, {key_of(start), start}});
  long pops = 0;
  while (!open.empty() && pops < max_pops) {
    auto [g, rec] = open.top();
    open.pop();
    auto [key, state] = rec;
    auto it = best.find(key);
    if (it == best.end() || g > it->second + 1e-12) continue;
    ++pops;
    if ((state.position - goal).norm() <= cfg.goal_tolerance) return g;
    for (const auto& u : lattice) {
      const auto traj =
          bounce::propagate(state, u, cfg.primitive_duration, cfg.v_max, cfg.saturate_primitives);
      const auto check = bounce::check_edge(traj, grid, cfg.v_max);
      if (check.status != bounce::EdgeCheck::Free) continue;
      const bounce::FlatState next = traj.at(cfg.primitive_duration);
      const double g_new = g + traj.control_energy(cfg.primitive_duration) +
                           cfg.time_weight * cfg.primitive_duration;
      const Key nk = key_of(next);
      auto bit = best.find(nk);
      if (bit == best.end() || g_new < bit->second - 1e-12) {
        best[nk] = g_new;
        open.push({g_new, {nk, next}});
      }
    }
  }
  return std::nullopt;
}

// Independent assembly of the recovery QP on the same Euler discretization,
// solved by exhaustive active-set enumeration.
struct OracleRecovery {
  bool feasible = false;
  double objective = 0.0;
};

inline OracleRecovery oracle_recovery(double p_0x, const bounce::Vec2& v_0, const bounce::Vec2& v_T, double theta,
                               const bounce::ArmParams& arm, const bounce::RecoveryWeights& w) {
  OracleRecovery out;
  if (v_T.x() < 0) return out;
  const int n = w.steps();
  const double dt = 1.0 / w.sample_rate;
  const double lower = -std::abs(arm.max_load_length - arm.pretension_length) * std::cos(theta);

  std::vector<Eigen::MatrixXd> maps(n + 1, Eigen::MatrixXd::Zero(4, 2 * n));
  std::vector<Eigen::Vector4d> offs(n + 1);
  offs[0] << p_0x, 0, v_0.x(), v_0.y();
  for (int k = 0; k < n; ++k) {
    Eigen::Matrix4d a = Eigen::Matrix4d::Identity();
    a(0, 2) += dt;
    a(1, 3) += dt;
    a(2, 0) += -dt * arm.spring_constant / arm.mass;
    a(2, 2) += -dt * arm.damping / arm.mass;
    offs[k + 1] = a * offs[k];
    maps[k + 1] = a * maps[k];
    maps[k + 1](2, 2 * k) += dt;
    maps[k + 1](3, 2 * k + 1) += dt;
  }
  for (int k : {0, 1}) {
    if (offs[k](0) < lower - 1e-12 || offs[k](0) > 1e-12) return out;
  }

  bounce::QpProblem qp;
  qp.P = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  qp.q = Eigen::VectorXd::Zero(2 * n);
  Eigen::Matrix4d gamma = Eigen::Matrix4d::Zero();
  gamma(0, 0) = gamma(1, 1) = w.displacement_weight;
  for (int k = 0; k < n; ++k) {
    qp.P += 2 * dt * maps[k].transpose() * gamma * maps[k];
    qp.q += 2 * dt * maps[k].transpose() * gamma * offs[k];
    qp.P.block(2 * k, 2 * k, 2, 2) += 2 * dt * w.input_weight * Eigen::Matrix2d::Identity();
  }
  qp.A_eq = Eigen::MatrixXd::Zero(3, 2 * n);
  qp.b_eq = Eigen::VectorXd::Zero(3);
  qp.A_eq.row(0) = maps[n].row(0);
  qp.b_eq(0) = -offs[n](0);
  qp.A_eq.row(1) = maps[n].row(2);
  qp.b_eq(1) = v_T.x() - offs[n](2);
  qp.A_eq.row(2) = maps[n].row(3);
  qp.b_eq(2) = v_T.y() - offs[n](3);
  const int n_box = std::max(0, n - 2);
  qp.A_in = Eigen::MatrixXd::Zero(2 * n_box, 2 * n);
  qp.b_in = Eigen::VectorXd::Zero(2 * n_box);
  for (int k = 2; k < n; ++k) {
    qp.A_in.row(2 * (k - 2)) = maps[k].row(0);
    qp.b_in(2 * (k - 2)) = -offs[k](0);
    qp.A_in.row(2 * (k - 2) + 1) = -maps[k].row(0);
    qp.b_in(2 * (k - 2) + 1) = offs[k](0) - lower;
  }

  const auto res = enumerate_qp(qp);
  if (!res.feasible) return out;
  out.feasible = true;
  double obj = 0.0;
  for (int k = 0; k < n; ++k) {
    const Eigen::Vector4d s = offs[k] + maps[k] * res.x;
    obj += dt * (w.displacement_weight * (s(0) * s(0) + s(1) * s(1)) +
                 w.input_weight * res.x.segment<2>(2 * k).squaredNorm());
  }
  out.objective = obj;
  return out;
}

// --- misc --------------------------------------------------------------------

inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double eps = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += eps;
    xm(i) -= eps;
    g(i) = (f(xp) - f(xm)) / (2 * eps);
  }
  return g;
}

inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Deterministic xorshift for test data (independent of the sim's RNG).
class TestRng {
 public:
  explicit TestRng(std::uint64_t seed) : s_(seed ? seed : 1) {}
  double uniform(double lo, double hi) {
    s_ ^= s_ << 13;
    s_ ^= s_ >> 7;
    s_ ^= s_ << 17;
    return lo + (hi - lo) * (static_cast<double>(s_ >> 11) * 0x1.0p-53);
  }
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(uniform(0.0, 1.0) * (hi - lo + 1)) % (hi - lo + 1);
  }

 private:
  std::uint64_t s_;
};

}  // namespace oracles
