#pragma once

#include <Eigen/Dense>

namespace w2w {

struct TransportSimplexResult {
  Eigen::MatrixXd plan;  // vertex of the transportation polytope
  Eigen::VectorXd u, v;  // duals: u(i) + v(j) <= cost(i,j) everywhere,
                         // tight wherever plan(i,j) > 0
  double cost = 0.0;
  int iterations = 0;
};

/// Dense transportation simplex for min <plan, cost> subject to marginals
/// (a, b). Requires a, b >= 0 with equal positive totals (mismatch beyond
/// 1e-9 relative raises std::invalid_argument).
///
/// The solve runs on the positive-mass rows and columns; returned duals are
/// extended to zero-mass nodes by c-transform so that dual feasibility holds
/// at every index pair. Pivoting is deterministic (first minimizer in
/// row-major order, Bland's rule after a degeneracy threshold), so identical
/// inputs give bit-identical plans.
TransportSimplexResult transport_simplex(const Eigen::VectorXd& a,
                                         const Eigen::VectorXd& b,
                                         const Eigen::MatrixXd& cost);

}  // namespace w2w
