#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace bounce {

// Dense convex QP
//   min 0.5 x'Px + q'x   s.t.  A_eq x = b_eq,  A_in x <= b_in
// solved with a primal active-set loop over the inequality rows. Sized for
// tiny problems (tens of variables); every subproblem is a fresh KKT solve.
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
};

struct QpSolution {
  bool feasible = false;
  Eigen::VectorXd x;
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::vector<int> active_set;          // inequality rows active at the optimum
  std::vector<int> violated_constraints;  // populated when infeasible
};

QpSolution solve_qp(const QpProblem& problem, double tol = 1e-8, int max_iterations = 200);

}  // namespace bounce
