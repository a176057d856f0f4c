#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <vector>

#include "w2w/measure.hpp"
#include "w2w/transport_simplex.hpp"

namespace w2w {

/// Raised when an iterative solver stalls; carries the last residual.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Ground cost used between nodes. Only squared geodesic distance is defined;
/// the tag travels with potentials so serialized artifacts stay unambiguous.
enum class InnerCostKind { squared_geodesic };

/// Coupling between two measures on one manifold. Row sums recover the
/// source, column sums the target; cost = sum gamma(i,j) d(i,j)^2.
struct TransportPlan {
  ManifoldPtr manifold;
  Eigen::MatrixXd gamma;
  double cost = 0.0;
};

/// Kantorovich potentials. phi(i) + psi(j) <= d(i,j)^2 at every node pair;
/// equality holds on the support of an optimal plan.
struct PotentialPair {
  Eigen::VectorXd phi, psi;
  InnerCostKind cost_kind = InnerCostKind::squared_geodesic;
};

struct InnerSolution {
  TransportPlan plan;
  PotentialPair potentials;
  int iterations = 0;
};

struct ExactOptions {
  /// When set, solve against cost d^2(i,j) * (1 + eta(i,j)) with eta drawn
  /// uniformly from [0, 1e-10]; used to break ties between optimal vertices.
  /// Reported plan cost always refers to the unperturbed cost.
  std::optional<std::uint64_t> perturbation_seed;
};

/// Exact optimal transport via the transportation simplex. Returns a vertex
/// plan and potentials with zero duality gap (up to roundoff). Deterministic:
/// identical inputs and options give bit-identical output.
InnerSolution solve_exact(const Measure& mu, const Measure& nu,
                          const ExactOptions& opts = {});

struct EntropicOptions {
  double marginal_tolerance = 1e-10;
  int max_iterations = 10000;
  bool epsilon_scaling = true;  // halve epsilon per stage from the cost scale
};

/// Log-domain Sinkhorn iteration for the entropy-regularized problem.
/// The returned potentials are post-processed by c-transform so that dual
/// feasibility holds exactly; their duality gap is O(epsilon). Throws
/// ConvergenceError when the marginal residual fails to reach tolerance.
InnerSolution solve_entropic(const Measure& mu, const Measure& nu,
                             double epsilon, const EntropicOptions& opts = {});

/// g(x) = min_y d(x,y)^2 - f(y). Applying the transform twice majorizes f and
/// applying it three times equals applying it once.
Eigen::VectorXd c_transform(const DiscreteManifold& m, const Eigen::VectorXd& f);

double w2_squared(const Measure& mu, const Measure& nu);
double w2_distance(const Measure& mu, const Measure& nu);

/// Monge map read off a plan: target(i) is the barycentric projection of row
/// i (geodesic averaging in the tangent space at node i) and field(i) is the
/// initial velocity log_{x_i}(target(i)), an estimate of -grad phi.
struct McCannMap {
  PointMap map;
  VectorField field;
  std::vector<int> fallback_rows;  // zero-mass rows, copied from the nearest
                                   // positive-mass node
};
McCannMap extract_mccann_map(const TransportPlan& plan);

struct DualityReport {
  double gap;                    // cost - dual objective
  double feasibility_violation;  // max(0, max_ij phi_i + psi_j - d_ij^2)
  double support_slackness;      // max |phi_i + psi_j - d_ij^2| on gamma > 1e-12
};
DualityReport verify_duality(const TransportPlan& plan, const PotentialPair& pot);

/// Checks W2^2(mu, nu) = sum_i mu_i |field_i|^2 for the extracted map, the
/// discrete version of d(x, exp_x(-grad phi))^2 = |grad phi|^2.
struct NormIdentityReport {
  double w2_squared;
  double field_norm_squared;
  double residual;
};
NormIdentityReport norm_identity_check(const Measure& mu, const Measure& nu);

/// Largest row entropy of the conditional rows of gamma; 0 for a Monge plan.
double plan_row_entropy_max(const TransportPlan& plan);

/// Squared-distance cost matrix of a manifold.
Eigen::MatrixXd squared_cost_matrix(const DiscreteManifold& m);

}  // namespace w2w
