#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "w2w/calculus.hpp"
#include "w2w/inner_ot.hpp"
#include "w2w/measure.hpp"

namespace w2w {

/// Scalar modulus applied to the inner Wasserstein distance in the outer
/// cost: value, first and second derivative. Must be strictly increasing and
/// strictly convex on the relevant range; CostSpec validates this.
struct HFunction {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double)> d1;
  std::function<double(double)> d2;
};

HFunction h_square();          ///< h(s) = s^2 (plain squared distance)
HFunction h_quartic();         ///< h(s) = s^4
HFunction h_cosh_minus_one();  ///< h(s) = cosh(s) - 1
HFunction h_from_registry(const std::string& name);

/// Cubic spline through (s_k, h_k) with not-a-knot ends, exposed with exact
/// derivatives of the interpolant. Nodes must be strictly increasing.
HFunction h_from_table(const Eigen::VectorXd& s, const Eigen::VectorXd& values);

/// Outer ground cost: either W2^2 itself or h(W2) for a validated modulus h.
class CostSpec {
 public:
  static CostSpec squared_w2();
  /// Validates h' > 0 and h'' > 0 on a 100-point grid over (0, diameter];
  /// failure raises std::invalid_argument.
  static CostSpec h_of_w2(HFunction h, double diameter);

  bool is_squared() const { return !h_.has_value(); }
  const HFunction& h() const;
  /// Cost entry from a squared distance: s2 for the plain cost, h(sqrt(s2))
  /// otherwise.
  double apply_to_squared(double s2) const;
  /// Derivative of s2 -> h(sqrt(s2)); identically 1 for the plain cost.
  double hbar_prime(double s2) const;
  std::string describe() const;

 private:
  std::optional<HFunction> h_;
};

/// Pairwise outer costs between two ensembles. `w2sq(i, j)` holds the raw
/// squared inner distance, `cost` the modulus applied to it. With jobs > 1
/// the entries are computed on a thread pool; results are identical to the
/// serial computation.
struct OuterCostMatrices {
  Eigen::MatrixXd cost;
  Eigen::MatrixXd w2sq;
};
OuterCostMatrices outer_cost_matrix(const MeasureEnsemble& src,
                                    const MeasureEnsemble& dst,
                                    const CostSpec& spec, int jobs = 1);

/// Optimal coupling between ensembles together with the data needed to
/// interrogate it: both cost matrices, the marginals, and the dual values
/// produced by the exact solver.
struct OuterPlan {
  Eigen::MatrixXd pi;
  Eigen::MatrixXd cost_matrix;
  Eigen::MatrixXd w2sq_matrix;
  Eigen::VectorXd src_mass;
  Eigen::VectorXd dst_mass;
  Eigen::VectorXd U;
  Eigen::VectorXd V;
  double cost = 0.0;
  int iterations = 0;
};
OuterPlan solve_outer(const MeasureEnsemble& src, const MeasureEnsemble& dst,
                      const CostSpec& spec, int jobs = 1);

/// Deterministic-coupling certificate. For each source atom: the column
/// carrying its largest plan entry, whether that entry holds at least
/// (1 - 1e-6) of the row mass, and whether re-solving with a seeded relative
/// cost perturbation of size 1e-10 reproduces the same assignment.
struct OuterMapReport {
  std::vector<int> assignment;
  std::vector<bool> certified;
  std::vector<int> perturbed_assignment;
  std::vector<bool> perturbed_certified;
  std::vector<bool> stable;
  bool all_certified = false;
  bool all_stable = false;
};
OuterMapReport verify_monge_structure(const OuterPlan& plan,
                                      std::uint64_t perturbation_seed = 1);

/// Kantorovich potential for the outer problem extended off the source atoms
/// by U(mu) = min_j [ cost(mu, nu_j) - V_j ]. At a source atom with positive
/// mass this reproduces the solver's dual value exactly.
class OuterPotential {
 public:
  OuterPotential(MeasureEnsemble targets, Eigen::VectorXd v, CostSpec spec);
  double operator()(const Measure& mu) const;
  int argmin(const Measure& mu) const;
  double cost_to(const Measure& mu, int j) const;
  const CostSpec& spec() const { return spec_; }

 private:
  MeasureEnsemble targets_;
  Eigen::VectorXd v_;
  CostSpec spec_;
};
OuterPotential outer_potential_extension(const OuterPlan& plan,
                                         const MeasureEnsemble& dst,
                                         const CostSpec& spec);

/// Finite-difference metric gradient of a Lipschitz functional on measures:
/// the coefficients of U along an orthonormalized probe family, assembled
/// back into a vector field on the support of mu.
VectorField estimate_metric_gradient(
    const std::function<double(const Measure&)>& U, const Measure& mu,
    const std::vector<VectorField>& probe_fields, double fd_step = 1e-3);

/// First-order optimality of the extended potential at a coupled pair.
/// alpha(t) = U(mu_t) - cost(mu_t, nu_assigned) is maximal at t = 0, so its
/// central difference should vanish to O(fd_step^2) for every probe field;
/// the inner-product residual compares the estimated gradient of U with
/// 2 hbar'(W2^2) grad phi for the inner potential phi.
struct StationarityFieldReport {
  std::string label;
  double alpha_prime = 0.0;
  double inner_residual = 0.0;
};
struct StationarityReport {
  int atom = -1;
  int assigned = -1;
  double u_value = 0.0;
  double w2sq = 0.0;
  std::vector<StationarityFieldReport> fields;
  double max_abs_alpha_prime = 0.0;
  double max_abs_inner_residual = 0.0;
};
StationarityReport stationarity_check(const MeasureEnsemble& src,
                                      int atom_index, const OuterPlan& plan,
                                      const MeasureEnsemble& dst,
                                      const CostSpec& spec,
                                      const std::vector<VectorField>& fields,
                                      double fd_step = 1e-3);

/// For the plain squared cost, reconstructs the assigned target measure from
/// the potential alone: nu = exp(-DU/2) # mu with DU the estimated metric
/// gradient of the extended potential. Reports the W2 error of the
/// reconstruction. Requires at least four probe fields and the squared cost.
struct MapFormulaReport {
  int atom = -1;
  int assigned = -1;
  VectorField du;
  Measure predicted;
  double w2_error = 0.0;
};
MapFormulaReport extract_outer_map_formula(
    const MeasureEnsemble& src, int atom_index, const OuterPlan& plan,
    const MeasureEnsemble& dst, const CostSpec& spec,
    const std::vector<VectorField>& fields, double fd_step = 1e-3);

/// Sanity identities tying the modulus to the solver internals:
/// the chain rule h'(s) = 2 s d/du[h(sqrt(u))] at u = s^2 (derivative taken
/// by central difference), positivity of h' and h'' on a grid, strict growth
/// of s -> h'(s)/2 (injectivity of the gradient scaling), and the norm
/// identity W2^2 = |field|^2_mu on sample pairs.
struct HIdentityReport {
  double chain_rule_max_residual = 0.0;
  bool hprime_positive = false;
  bool hsecond_positive = false;
  bool gradient_scale_increasing = false;
  double norm_identity_max_residual = 0.0;
};
HIdentityReport h_identity_checks(
    const CostSpec& spec,
    const std::vector<std::pair<Measure, Measure>>& sample_pairs,
    int grid_points = 100);

}  // namespace w2w
