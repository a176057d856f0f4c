#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "w2w/inner_ot.hpp"
#include "w2w/measure.hpp"

namespace w2w {

/// Cylinder function u(mu) = F(f_1*mu, ..., f_k*mu): a smooth outer function
/// composed with potential energies of finitely many node functions. The
/// outer gradient must be supplied and is validated against central finite
/// differences at construction.
struct CylinderFunction {
  std::function<double(const Eigen::VectorXd&)> outer;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> outer_gradient;
  std::vector<NodeFunction> inner;
  std::string label;
};

/// Builds a CylinderFunction after checking shapes against the manifold and
/// the outer gradient against finite differences of the outer function on
/// sample points spanning the attainable range of the inner integrals.
/// Mismatch raises std::invalid_argument.
CylinderFunction make_cylinder_function(
    const DiscreteManifold& m,
    std::function<double(const Eigen::VectorXd&)> outer,
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> outer_gradient,
    std::vector<NodeFunction> inner, std::string label = "");

/// Potential energy f*mu = sum_i f(i) mu(i).
double potential_energy(const Eigen::VectorXd& f, const Measure& mu);

double cylinder_value(const CylinderFunction& u, const Measure& mu);

/// u evaluated on the time-t flow image of mu in Lagrangian form: node atoms
/// move along the flow of w and the inner functions are evaluated at the
/// transported positions (Hermite interpolation off the grid). Agrees with
/// cylinder_value at t = 0 bit for bit.
double cylinder_value_along_flow(const CylinderFunction& u, const Measure& mu,
                                 const VectorField& w, double t);

/// Metric gradient of a cylinder function at mu:
/// grad u(mu)(x) = sum_k dF_k(f_1*mu, ...) grad f_k(x).
struct WassersteinGradient {
  VectorField field;
  Measure base;
};
WassersteinGradient cylinder_gradient(const CylinderFunction& u,
                                      const Measure& mu);

/// <a, b>_mu = sum_i mu_i <a(x_i), b(x_i)>.
double tangent_inner_product(const VectorField& a, const VectorField& b,
                             const Measure& mu);

/// Derivative of u along the flow of w at mu, evaluated through the gradient
/// formula <grad u(mu), w>_mu. Linear in w; zero field gives exactly zero.
double directional_derivative(const CylinderFunction& u, const Measure& mu,
                              const VectorField& w);

/// Compares d/dt W2^2(mu_t, nu) at t = 0 computed two ways: through the
/// Kantorovich potential (2 <grad phi, w>_mu, with grad phi read off the
/// optimal plan) and by central finite difference of the flowed problem.
struct DerivativeCheckReport {
  double formula_value;
  double fd_value;
  double residual;
  double fd_step;
};
DerivativeCheckReport wasserstein_derivative_check(const Measure& mu,
                                                   const Measure& nu,
                                                   const VectorField& w,
                                                   double fd_step = 1e-3);

/// Weak-form continuity-equation residual along the flow of w:
/// max over times and test functions of
///   | d/dt int f dmu_t - int <grad f, xi_t> dmu_t |
/// where xi_t is the field transported by the flow (both integrals evaluated
/// in Lagrangian form). Constant test functions contribute exactly zero.
double continuity_residual(const Measure& mu, const VectorField& w,
                           const std::vector<double>& times,
                           const std::vector<NodeFunction>& test_functions,
                           double fd_step = 1e-3);

/// Largest difference quotient |U(a) - U(b)| / W2(a, b) over the sample.
/// Pairs closer than 1e-12 in W2 are skipped; an empty effective sample
/// raises std::invalid_argument.
double lipschitz_check(const std::function<double(const Measure&)>& U,
                       const std::vector<std::pair<Measure, Measure>>& pairs);

/// Truncated family of smooth vector fields, dense enough to probe tangent
/// directions: constants plus sin/cos harmonics up to max_frequency on the
/// circle and torus, coordinate gradients and rotation generators on the
/// sphere (where max_frequency is ignored).
std::vector<VectorField> fourier_field_family(const DiscreteManifold& m,
                                              int max_frequency,
                                              bool include_constant = true);

/// Smooth scalar test functions with exact gradients: harmonics on the circle
/// and torus, coordinate functions on the sphere.
std::vector<NodeFunction> harmonic_node_functions(const DiscreteManifold& m,
                                                  int max_frequency,
                                                  bool include_constant = true);

/// Gram-Schmidt under <.,.>_mu; near-dependent fields are dropped.
std::vector<VectorField> orthonormalize_fields(
    const std::vector<VectorField>& fields, const Measure& mu,
    double drop_tolerance = 1e-8);

}  // namespace w2w
