#include "bounce/qp.hpp"

#include <algorithm>

#include "bounce/core.hpp"

namespace bounce {

namespace {

struct EqpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd multipliers;  // equalities first, then working-set rows
  bool ok = false;
};

EqpResult solve_eqp(const QpProblem& p, const std::vector<int>& working) {
  const int n = static_cast<int>(p.P.rows());
  const int m_eq = static_cast<int>(p.A_eq.rows());
  const int m_w = static_cast<int>(working.size());
  const int m = m_eq + m_w;

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
  kkt.topLeftCorner(n, n) = p.P;
  rhs.head(n) = -p.q;
  if (m_eq > 0) {
    kkt.block(n, 0, m_eq, n) = p.A_eq;
    kkt.block(0, n, n, m_eq) = p.A_eq.transpose();
    rhs.segment(n, m_eq) = p.b_eq;
  }
  for (int i = 0; i < m_w; ++i) {
    kkt.block(n + m_eq + i, 0, 1, n) = p.A_in.row(working[i]);
    kkt.block(0, n + m_eq + i, n, 1) = p.A_in.row(working[i]).transpose();
    rhs(n + m_eq + i) = p.b_in(working[i]);
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  EqpResult r;
  if (!lu.isInvertible()) return r;
  const Eigen::VectorXd sol = lu.solve(rhs);
  r.x = sol.head(n);
  r.multipliers = sol.tail(m);
  r.ok = true;
  return r;
}

}  // namespace

QpSolution solve_qp(const QpProblem& problem, double tol, int max_iterations) {
  const int m_eq = static_cast<int>(problem.A_eq.rows());
  const int m_in = static_cast<int>(problem.A_in.rows());
  QpSolution out;

  std::vector<int> working;
  for (int iter = 0; iter < max_iterations; ++iter) {
    EqpResult eqp = solve_eqp(problem, working);
    if (!eqp.ok) throw RuntimeFault("qp: singular KKT system");

    // Drop the working constraint with the most negative multiplier.
    int drop = -1;
    double most_negative = -tol;
    for (std::size_t i = 0; i < working.size(); ++i) {
      const double mu = eqp.multipliers(m_eq + static_cast<int>(i));
      if (mu < most_negative) {
        most_negative = mu;
        drop = static_cast<int>(i);
      }
    }
    if (drop >= 0) {
      working.erase(working.begin() + drop);
      continue;
    }

    // Add the most violated inactive constraint.
    int add = -1;
    double worst = tol;
    for (int i = 0; i < m_in; ++i) {
      if (std::find(working.begin(), working.end(), i) != working.end()) continue;
      const double v = problem.A_in.row(i).dot(eqp.x) - problem.b_in(i);
      if (v > worst) {
        worst = v;
        add = i;
      }
    }
    if (add >= 0) {
      working.push_back(add);
      continue;
    }

    out.feasible = true;
    out.x = eqp.x;
    out.objective = 0.5 * eqp.x.dot(problem.P * eqp.x) + problem.q.dot(eqp.x);
    out.active_set = working;

    // Stationarity residual of the full KKT system.
    Eigen::VectorXd grad = problem.P * eqp.x + problem.q;
    if (m_eq > 0) grad += problem.A_eq.transpose() * eqp.multipliers.head(m_eq);
    for (std::size_t i = 0; i < working.size(); ++i)
      grad += problem.A_in.row(working[i]).transpose() * eqp.multipliers(m_eq + static_cast<int>(i));
    double residual = grad.lpNorm<Eigen::Infinity>();
    if (m_eq > 0)
      residual = std::max(residual,
                          (problem.A_eq * eqp.x - problem.b_eq).lpNorm<Eigen::Infinity>());
    out.kkt_residual = residual;
    return out;
  }
  throw RuntimeFault("qp: active-set iteration limit reached");
}

}  // namespace bounce
