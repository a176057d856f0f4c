#include "w2w/inner_ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "w2w/rng.hpp"

namespace w2w {

namespace {

void require_same_manifold(const Measure& mu, const Measure& nu) {
  if (!mu.manifold().same_discretization(nu.manifold()))
    throw std::invalid_argument("measures live on different manifolds");
}

// Signed initial velocity from node i toward an arbitrary chart point,
// following the shorter branch; ties at the cut locus take the positive
// branch so the choice is deterministic.
Eigen::VectorXd point_log(const DiscreteManifold& m, int i,
                          const Eigen::VectorXd& target) {
  switch (m.kind()) {
    case ManifoldKind::circle: {
      double d = target(0) - m.nodes()(i, 0);
      d -= std::floor(d + 0.5);  // wraps to [-0.5, 0.5)
      if (d == -0.5) d = 0.5;
      Eigen::VectorXd out(1);
      out(0) = d;
      return out;
    }
    case ManifoldKind::flat_torus: {
      Eigen::VectorXd out(2);
      for (int k = 0; k < 2; ++k) {
        double d = target(k) - m.nodes()(i, k);
        d -= std::floor(d + 0.5);
        if (d == -0.5) d = 0.5;
        out(k) = d;
      }
      return out;
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d x = m.nodes().row(i).transpose();
      Eigen::Vector3d y = target;
      y.normalize();
      double c = std::clamp(x.dot(y), -1.0, 1.0);
      double theta = std::acos(c);
      if (theta < 1e-15) return Eigen::Vector3d::Zero();
      Eigen::Vector3d dir = y - c * x;
      double len = dir.norm();
      if (len < 1e-14) {
        // Antipodal: pick the deterministic direction orthogonal to x that
        // favors the lowest coordinate axis.
        int axis = 0;
        for (int k = 1; k < 3; ++k)
          if (std::abs(x(k)) < std::abs(x(axis))) axis = k;
        dir = Eigen::Vector3d::Unit(axis);
        dir -= dir.dot(x) * x;
        len = dir.norm();
      }
      return (theta / len) * dir;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace

Eigen::MatrixXd squared_cost_matrix(const DiscreteManifold& m) {
  return m.distance_matrix().array().square();
}

InnerSolution solve_exact(const Measure& mu, const Measure& nu,
                          const ExactOptions& opts) {
  require_same_manifold(mu, nu);
  const DiscreteManifold& m = mu.manifold();
  Eigen::MatrixXd C = squared_cost_matrix(m);
  Eigen::MatrixXd C_solve = C;
  if (opts.perturbation_seed) {
    SeededRng rng(*opts.perturbation_seed);
    for (int i = 0; i < C_solve.rows(); ++i)
      for (int j = 0; j < C_solve.cols(); ++j)
        C_solve(i, j) *= 1.0 + 1e-10 * rng.uniform();
  }
  TransportSimplexResult r =
      transport_simplex(mu.weights(), nu.weights(), C_solve);
  InnerSolution out;
  out.plan.manifold = mu.manifold_ptr();
  out.plan.gamma = std::move(r.plan);
  out.plan.cost = (out.plan.gamma.array() * C.array()).sum();
  out.potentials.phi = std::move(r.u);
  out.potentials.psi = std::move(r.v);
  out.iterations = r.iterations;
  return out;
}

InnerSolution solve_entropic(const Measure& mu, const Measure& nu,
                             double epsilon, const EntropicOptions& opts) {
  require_same_manifold(mu, nu);
  if (!(epsilon > 0.0))
    throw std::invalid_argument("solve_entropic: epsilon must be positive");
  const DiscreteManifold& m = mu.manifold();
  const Eigen::MatrixXd C_full = squared_cost_matrix(m);

  std::vector<int> sa, sb;
  for (int i = 0; i < mu.size(); ++i)
    if (mu.weights()(i) > 0.0) sa.push_back(i);
  for (int j = 0; j < nu.size(); ++j)
    if (nu.weights()(j) > 0.0) sb.push_back(j);
  const int ns = static_cast<int>(sa.size());
  const int nt = static_cast<int>(sb.size());

  Eigen::MatrixXd C(ns, nt);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j) C(i, j) = C_full(sa[i], sb[j]);
  Eigen::VectorXd la(ns), lb(nt);
  for (int i = 0; i < ns; ++i) la(i) = std::log(mu.weights()(sa[i]));
  for (int j = 0; j < nt; ++j) lb(j) = std::log(nu.weights()(sb[j]));

  std::vector<double> schedule;
  if (opts.epsilon_scaling) {
    double e = std::max(epsilon, C.maxCoeff());
    while (e > epsilon * 1.0000001) {
      schedule.push_back(e);
      e *= 0.5;
    }
  }
  schedule.push_back(epsilon);

  Eigen::VectorXd f = Eigen::VectorXd::Zero(ns);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(nt);

  // Log-sum-exp of (g_j - C_ij)/eps + lb_j over j, one entry per i (and the
  // transposed counterpart).
  auto lse_rows = [&](double eps) -> Eigen::VectorXd {
    Eigen::MatrixXd z =
        (((-C).rowwise() + g.transpose()) / eps).rowwise() + lb.transpose();
    Eigen::VectorXd zmax = z.rowwise().maxCoeff();
    Eigen::VectorXd sum = (z.colwise() - zmax).array().exp().rowwise().sum();
    return zmax.array() + sum.array().log();
  };
  auto lse_cols = [&](double eps) -> Eigen::VectorXd {
    Eigen::MatrixXd z = (((-C).colwise() + f) / eps).colwise() + la;
    Eigen::VectorXd zmax = z.colwise().maxCoeff().transpose();
    Eigen::VectorXd sum = (z.rowwise() - zmax.transpose())
                              .array().exp().colwise().sum().transpose();
    return zmax.array() + sum.array().log();
  };

  int iterations = 0;
  double violation = std::numeric_limits<double>::infinity();
  for (size_t stage = 0; stage < schedule.size(); ++stage) {
    const double eps = schedule[stage];
    const bool final_stage = stage + 1 == schedule.size();
    const double stage_tol =
        final_stage ? opts.marginal_tolerance : std::max(1e-3, opts.marginal_tolerance);
    int stage_iters = 0;
    while (true) {
      if (iterations >= opts.max_iterations)
        throw ConvergenceError("solve_entropic: marginal residual stalled at " +
                                   std::to_string(violation),
                               violation);
      ++iterations;
      ++stage_iters;
      f = -eps * lse_rows(eps);
      g = -eps * lse_cols(eps);
      // After the g update columns match exactly; measure the row residual.
      Eigen::VectorXd row_mass = (f / eps + la + lse_rows(eps)).array().exp();
      violation = 0.0;
      for (int i = 0; i < ns; ++i)
        violation = std::max(violation,
                             std::abs(row_mass(i) - mu.weights()(sa[i])));
      if (violation <= stage_tol) break;
      if (!final_stage && stage_iters >= 50) break;  // move the schedule on
    }
  }

  const double eps = schedule.back();
  Eigen::MatrixXd gamma_sub(ns, nt);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j)
      gamma_sub(i, j) =
          std::exp((f(i) + g(j) - C(i, j)) / eps + la(i) + lb(j));

  InnerSolution out;
  out.plan.manifold = mu.manifold_ptr();
  out.plan.gamma = Eigen::MatrixXd::Zero(mu.size(), nu.size());
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nt; ++j) out.plan.gamma(sa[i], sb[j]) = gamma_sub(i, j);
  out.plan.cost = (out.plan.gamma.array() * C_full.array()).sum();
  out.iterations = iterations;

  // Feasible potentials: tighten the entropic duals by c-transform, then
  // extend across zero-mass nodes. min-of-computed-values keeps feasibility
  // exact in floating point.
  Eigen::VectorXd phi_half(ns);
  for (int i = 0; i < ns; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nt; ++j) best = std::min(best, C(i, j) - g(j));
    phi_half(i) = best;
  }
  out.potentials.psi.resize(nu.size());
  for (int j = 0; j < nu.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < ns; ++i)
      best = std::min(best, C_full(sa[i], j) - phi_half(i));
    out.potentials.psi(j) = best;
  }
  out.potentials.phi.resize(mu.size());
  for (int i = 0; i < mu.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nu.size(); ++j)
      best = std::min(best, C_full(i, j) - out.potentials.psi(j));
    out.potentials.phi(i) = best;
  }
  return out;
}

Eigen::VectorXd c_transform(const DiscreteManifold& m, const Eigen::VectorXd& f) {
  if (f.size() != m.num_nodes())
    throw std::invalid_argument("c_transform: wrong vector size");
  const int n = m.num_nodes();
  const Eigen::MatrixXd& d = m.distance_matrix();
  Eigen::VectorXd g(n);
  for (int x = 0; x < n; ++x) {
    double best = std::numeric_limits<double>::infinity();
    for (int y = 0; y < n; ++y)
      best = std::min(best, d(x, y) * d(x, y) - f(y));
    g(x) = best;
  }
  return g;
}

double w2_squared(const Measure& mu, const Measure& nu) {
  return solve_exact(mu, nu).plan.cost;
}

double w2_distance(const Measure& mu, const Measure& nu) {
  return std::sqrt(std::max(w2_squared(mu, nu), 0.0));
}

McCannMap extract_mccann_map(const TransportPlan& plan) {
  const DiscreteManifold& m = *plan.manifold;
  const int n = m.num_nodes();
  if (plan.gamma.rows() != n || plan.gamma.cols() != n)
    throw std::invalid_argument("extract_mccann_map: plan has wrong shape");
  McCannMap out;
  out.map.targets.resize(n, m.chart_dim());
  out.field.components.resize(n, m.chart_dim());
  out.field.label = "barycentric_velocity";
  Eigen::VectorXd row_mass = plan.gamma.rowwise().sum();

  for (int i = 0; i < n; ++i) {
    if (row_mass(i) <= 0.0) continue;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m.chart_dim());
    for (int j = 0; j < n; ++j) {
      double w = plan.gamma(i, j);
      if (w <= 0.0) continue;
      v += (w / row_mass(i)) * point_log(m, i, m.node(j));
    }
    out.field.components.row(i) = v.transpose();
    out.map.targets.row(i) = m.exp_map(TangentVector{i, v}).transpose();
  }
  // Zero-mass rows copy the nearest transported node (smallest index breaks
  // distance ties) and are reported.
  for (int i = 0; i < n; ++i) {
    if (row_mass(i) > 0.0) continue;
    int src = -1;
    for (int k = 0; k < n; ++k) {
      if (row_mass(k) <= 0.0) continue;
      if (src < 0 || m.geodesic_distance(i, k) < m.geodesic_distance(i, src))
        src = k;
    }
    if (src < 0)
      throw std::invalid_argument("extract_mccann_map: plan carries no mass");
    out.map.targets.row(i) = out.map.targets.row(src);
    out.field.components.row(i) =
        point_log(m, i, out.map.targets.row(src).transpose()).transpose();
    out.fallback_rows.push_back(i);
  }
  return out;
}

DualityReport verify_duality(const TransportPlan& plan, const PotentialPair& pot) {
  const DiscreteManifold& m = *plan.manifold;
  const Eigen::MatrixXd C = squared_cost_matrix(m);
  const Eigen::VectorXd mu_w = plan.gamma.rowwise().sum();
  const Eigen::VectorXd nu_w = plan.gamma.colwise().sum();
  DualityReport rep{};
  rep.gap = plan.cost - (pot.phi.dot(mu_w) + pot.psi.dot(nu_w));
  double worst = -std::numeric_limits<double>::infinity();
  double slack = 0.0;
  for (int i = 0; i < C.rows(); ++i) {
    for (int j = 0; j < C.cols(); ++j) {
      double s = pot.phi(i) + pot.psi(j) - C(i, j);
      worst = std::max(worst, s);
      if (plan.gamma(i, j) > 1e-12) slack = std::max(slack, std::abs(s));
    }
  }
  rep.feasibility_violation = std::max(0.0, worst);
  rep.support_slackness = slack;
  return rep;
}

NormIdentityReport norm_identity_check(const Measure& mu, const Measure& nu) {
  InnerSolution sol = solve_exact(mu, nu);
  McCannMap mm = extract_mccann_map(sol.plan);
  double fn = 0.0;
  for (int i = 0; i < mu.size(); ++i)
    fn += mu.weights()(i) * mm.field.components.row(i).squaredNorm();
  NormIdentityReport rep{};
  rep.w2_squared = sol.plan.cost;
  rep.field_norm_squared = fn;
  rep.residual = std::abs(rep.w2_squared - rep.field_norm_squared);
  return rep;
}

double plan_row_entropy_max(const TransportPlan& plan) {
  double worst = 0.0;
  for (int i = 0; i < plan.gamma.rows(); ++i) {
    double mass = plan.gamma.row(i).sum();
    if (mass <= 0.0) continue;
    double h = 0.0;
    for (int j = 0; j < plan.gamma.cols(); ++j) {
      double p = plan.gamma(i, j) / mass;
      if (p > 0.0) h -= p * std::log(p);
    }
    worst = std::max(worst, h);
  }
  return worst;
}

}  // namespace w2w
