#include "w2w/outer_ot.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

#include "w2w/rng.hpp"
#include "w2w/transport_simplex.hpp"

namespace w2w {

namespace {

void require_unit_interval_mass(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw std::invalid_argument("empty ensemble mass");
}

struct SplineData {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd m;  // second derivatives at the nodes
};

int spline_interval(const SplineData& d, double t) {
  const Eigen::Index n = d.x.size();
  int lo = 0, hi = static_cast<int>(n) - 2;
  if (t <= d.x(0)) return 0;
  if (t >= d.x(n - 1)) return hi;
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (d.x(mid) <= t) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return lo;
}

double spline_value(const SplineData& d, double t) {
  const int i = spline_interval(d, t);
  const double h = d.x(i + 1) - d.x(i);
  const double a = d.x(i + 1) - t;
  const double b = t - d.x(i);
  return d.m(i) * a * a * a / (6.0 * h) + d.m(i + 1) * b * b * b / (6.0 * h) +
         (d.y(i) / h - d.m(i) * h / 6.0) * a +
         (d.y(i + 1) / h - d.m(i + 1) * h / 6.0) * b;
}

double spline_d1(const SplineData& d, double t) {
  const int i = spline_interval(d, t);
  const double h = d.x(i + 1) - d.x(i);
  const double a = d.x(i + 1) - t;
  const double b = t - d.x(i);
  return -d.m(i) * a * a / (2.0 * h) + d.m(i + 1) * b * b / (2.0 * h) +
         (d.y(i + 1) - d.y(i)) / h - (d.m(i + 1) - d.m(i)) * h / 6.0;
}

double spline_d2(const SplineData& d, double t) {
  const int i = spline_interval(d, t);
  const double h = d.x(i + 1) - d.x(i);
  return (d.m(i) * (d.x(i + 1) - t) + d.m(i + 1) * (t - d.x(i))) / h;
}

}  // namespace

HFunction h_square() {
  HFunction h;
  h.name = "square";
  h.value = [](double s) { return s * s; };
  h.d1 = [](double s) { return 2.0 * s; };
  h.d2 = [](double) { return 2.0; };
  return h;
}

HFunction h_quartic() {
  HFunction h;
  h.name = "quartic";
  h.value = [](double s) { return s * s * s * s; };
  h.d1 = [](double s) { return 4.0 * s * s * s; };
  h.d2 = [](double s) { return 12.0 * s * s; };
  return h;
}

HFunction h_cosh_minus_one() {
  HFunction h;
  h.name = "cosh_minus_one";
  h.value = [](double s) { return std::cosh(s) - 1.0; };
  h.d1 = [](double s) { return std::sinh(s); };
  h.d2 = [](double s) { return std::cosh(s); };
  return h;
}

HFunction h_from_registry(const std::string& name) {
  if (name == "square") return h_square();
  if (name == "quartic") return h_quartic();
  if (name == "cosh_minus_one") return h_cosh_minus_one();
  throw std::invalid_argument("unknown modulus: " + name);
}

HFunction h_from_table(const Eigen::VectorXd& s,
                       const Eigen::VectorXd& values) {
  const Eigen::Index n = s.size();
  if (n < 4 || values.size() != n) {
    throw std::invalid_argument("modulus table needs at least four points");
  }
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    if (!(s(i + 1) > s(i))) {
      throw std::invalid_argument("modulus table nodes must increase");
    }
  }

  // Solve for the second derivatives with not-a-knot end conditions (third
  // derivative continuous across the first and last interior nodes), so
  // convex data keeps positive curvature at the ends. Tables are small; a
  // dense solve is fine.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  auto h = [&](Eigen::Index i) { return s(i + 1) - s(i); };
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    A(i, i - 1) = h(i - 1) / 6.0;
    A(i, i) = (h(i - 1) + h(i)) / 3.0;
    A(i, i + 1) = h(i) / 6.0;
    rhs(i) = (values(i + 1) - values(i)) / h(i) -
             (values(i) - values(i - 1)) / h(i - 1);
  }
  A(0, 0) = -h(1);
  A(0, 1) = h(0) + h(1);
  A(0, 2) = -h(0);
  A(n - 1, n - 3) = -h(n - 2);
  A(n - 1, n - 2) = h(n - 3) + h(n - 2);
  A(n - 1, n - 1) = -h(n - 3);

  auto data = std::make_shared<SplineData>();
  data->x = s;
  data->y = values;
  data->m = A.fullPivLu().solve(rhs);

  HFunction out;
  out.name = "table";
  out.value = [data](double t) { return spline_value(*data, t); };
  out.d1 = [data](double t) { return spline_d1(*data, t); };
  out.d2 = [data](double t) { return spline_d2(*data, t); };
  return out;
}

CostSpec CostSpec::squared_w2() { return CostSpec{}; }

CostSpec CostSpec::h_of_w2(HFunction h, double diameter) {
  if (!h.value || !h.d1 || !h.d2) {
    throw std::invalid_argument("modulus must provide value, d1 and d2");
  }
  if (!(diameter > 0.0)) {
    throw std::invalid_argument("diameter must be positive");
  }
  const int grid = 100;
  for (int k = 1; k <= grid; ++k) {
    const double t = diameter * static_cast<double>(k) / grid;
    if (!(h.d1(t) > 0.0)) {
      throw std::invalid_argument("modulus is not strictly increasing at s=" +
                                  std::to_string(t));
    }
    if (!(h.d2(t) > 0.0)) {
      throw std::invalid_argument("modulus is not strictly convex at s=" +
                                  std::to_string(t));
    }
  }
  CostSpec spec;
  spec.h_ = std::move(h);
  return spec;
}

const HFunction& CostSpec::h() const {
  if (!h_) throw std::logic_error("plain squared cost has no modulus");
  return *h_;
}

double CostSpec::apply_to_squared(double s2) const {
  const double clipped = std::max(s2, 0.0);
  if (!h_) return clipped;
  return h_->value(std::sqrt(clipped));
}

double CostSpec::hbar_prime(double s2) const {
  if (!h_) return 1.0;
  const double u = std::max(s2, 1e-18);
  const double s = std::sqrt(u);
  return h_->d1(s) / (2.0 * s);
}

std::string CostSpec::describe() const {
  return h_ ? "h_of_w2:" + h_->name : "squared_w2";
}

OuterCostMatrices outer_cost_matrix(const MeasureEnsemble& src,
                                    const MeasureEnsemble& dst,
                                    const CostSpec& spec, int jobs) {
  require_unit_interval_mass(src.mass);
  require_unit_interval_mass(dst.mass);
  if (!src.atoms.front().manifold().same_discretization(
          dst.atoms.front().manifold())) {
    throw std::invalid_argument("ensembles live on different discretizations");
  }
  const int ns = static_cast<int>(src.atoms.size());
  const int nt = static_cast<int>(dst.atoms.size());
  OuterCostMatrices out;
  out.cost.resize(ns, nt);
  out.w2sq.resize(ns, nt);

  const int total = ns * nt;
  const int workers = std::max(1, std::min(jobs, total));
  auto run_slice = [&](int t) -> std::exception_ptr {
    try {
      for (int idx = t; idx < total; idx += workers) {
        const int i = idx / nt;
        const int j = idx % nt;
        const double s2 = solve_exact(src.atoms[i], dst.atoms[j]).plan.cost;
        out.w2sq(i, j) = s2;
        out.cost(i, j) = spec.apply_to_squared(s2);
      }
    } catch (...) {
      return std::current_exception();
    }
    return nullptr;
  };

  if (workers == 1) {
    if (auto err = run_slice(0)) std::rethrow_exception(err);
  } else {
    std::vector<std::exception_ptr> errs(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] { errs[t] = run_slice(t); });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errs) {
      if (err) std::rethrow_exception(err);
    }
  }
  return out;
}

namespace {

void certify_rows(const Eigen::MatrixXd& pi, const Eigen::VectorXd& mass,
                  std::vector<int>& assignment, std::vector<bool>& certified) {
  const Eigen::Index ns = pi.rows();
  assignment.assign(ns, 0);
  certified.assign(ns, false);
  for (Eigen::Index i = 0; i < ns; ++i) {
    Eigen::Index best = 0;
    pi.row(i).maxCoeff(&best);
    assignment[static_cast<std::size_t>(i)] = static_cast<int>(best);
    certified[static_cast<std::size_t>(i)] =
        pi(i, best) >= (1.0 - 1e-6) * mass(i);
  }
}

/// The simplex returns vertex duals, tight on every basis arc. A permutation
/// optimum has ns + nt - 1 basis arcs but only max(ns, nt) support arcs, so
/// some rows are left with exact ties in C(i, .) - V: the extended potential
/// mu -> min_j [cost(mu, nu_j) - V_j] is then kinked at the source atoms and
/// its flow derivative does not vanish. Whenever the plan is genuinely
/// deterministic (each row's mass on a single column), the optimal-dual
/// polytope contains strictly complementary points; this picks one by
/// maximizing a uniform slack margin off the support. Feasibility of margin m
/// is a difference-constraint system V_j - V_{a(i)} <= C(i,j) - C(i,a(i)) - m,
/// solved by Bellman-Ford on the column graph; the largest feasible margin is
/// located by bisection. No-op when the support is not deterministic or the
/// instance is genuinely tied (margin 0).
void refine_dual_complementarity(OuterPlan& plan) {
  const Eigen::Index ns = plan.pi.rows();
  const Eigen::Index nt = plan.pi.cols();
  std::vector<int> assignment(static_cast<std::size_t>(ns));
  for (Eigen::Index i = 0; i < ns; ++i) {
    Eigen::Index best = 0;
    plan.pi.row(i).maxCoeff(&best);
    assignment[static_cast<std::size_t>(i)] = static_cast<int>(best);
    double off = 0.0;
    for (Eigen::Index j = 0; j < nt; ++j) {
      if (j != best) off = std::max(off, plan.pi(i, j));
    }
    if (off > 1e-12 * plan.src_mass(i)) return;  // row not deterministic
  }

  // Cheapest cost increase of moving row i's mass from its column a to b,
  // minimized over rows assigned to a.
  const double kInf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd len = Eigen::MatrixXd::Constant(nt, nt, kInf);
  double scale = 0.0;
  for (Eigen::Index i = 0; i < ns; ++i) {
    const Eigen::Index a = assignment[static_cast<std::size_t>(i)];
    for (Eigen::Index b = 0; b < nt; ++b) {
      if (b == a) continue;
      const double l = plan.cost_matrix(i, b) - plan.cost_matrix(i, a);
      len(a, b) = std::min(len(a, b), l);
      scale = std::max(scale, std::abs(l));
    }
  }

  Eigen::VectorXd dist(nt);
  const auto feasible = [&](double m) {
    dist.setZero();
    bool improved = true;
    for (Eigen::Index round = 0; round <= nt && improved; ++round) {
      improved = false;
      for (Eigen::Index a = 0; a < nt; ++a) {
        for (Eigen::Index b = 0; b < nt; ++b) {
          if (!std::isfinite(len(a, b))) continue;
          const double cand = dist(a) + len(a, b) - m;
          if (cand < dist(b)) {
            dist(b) = cand;
            improved = true;
          }
        }
      }
    }
    return !improved;  // negative cycle iff round nt still improves
  };

  double lo = 0.0, hi = scale + 1.0;
  if (!feasible(lo)) return;  // should not happen for an optimal plan
  if (feasible(hi)) {
    lo = hi;  // no cycles at all; any margin works
  } else {
    for (int it = 0; it < 50; ++it) {
      const double mid = 0.5 * (lo + hi);
      (feasible(mid) ? lo : hi) = mid;
    }
  }
  const double margin = 0.5 * lo;
  if (margin <= 1e-13) return;  // genuinely tied instance; keep vertex duals
  feasible(margin);             // leaves the potentials in dist

  // Re-anchor to the solver's gauge so reported duals stay comparable.
  const double shift = plan.V(0) - dist(0);
  for (Eigen::Index j = 0; j < nt; ++j) plan.V(j) = dist(j) + shift;
  for (Eigen::Index i = 0; i < ns; ++i) {
    const Eigen::Index a = assignment[static_cast<std::size_t>(i)];
    plan.U(i) = plan.cost_matrix(i, a) - plan.V(a);
  }
}

}  // namespace

OuterPlan solve_outer(const MeasureEnsemble& src, const MeasureEnsemble& dst,
                      const CostSpec& spec, int jobs) {
  OuterCostMatrices mats = outer_cost_matrix(src, dst, spec, jobs);
  TransportSimplexResult lp =
      transport_simplex(src.mass, dst.mass, mats.cost);
  OuterPlan plan;
  plan.pi = std::move(lp.plan);
  plan.cost_matrix = std::move(mats.cost);
  plan.w2sq_matrix = std::move(mats.w2sq);
  plan.src_mass = src.mass;
  plan.dst_mass = dst.mass;
  plan.U = std::move(lp.u);
  plan.V = std::move(lp.v);
  plan.cost = lp.cost;
  plan.iterations = lp.iterations;
  refine_dual_complementarity(plan);
  return plan;
}

OuterMapReport verify_monge_structure(const OuterPlan& plan,
                                      std::uint64_t perturbation_seed) {
  OuterMapReport rep;
  certify_rows(plan.pi, plan.src_mass, rep.assignment, rep.certified);

  // Re-solve with an independent relative perturbation of the cost entries;
  // a genuinely deterministic coupling keeps its assignment.
  SeededRng rng(perturbation_seed);
  Eigen::MatrixXd c = plan.cost_matrix;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      c(i, j) *= 1.0 + 1e-10 * rng.uniform();
    }
  }
  TransportSimplexResult lp = transport_simplex(plan.src_mass, plan.dst_mass, c);
  certify_rows(lp.plan, plan.src_mass, rep.perturbed_assignment,
               rep.perturbed_certified);

  const std::size_t ns = rep.assignment.size();
  rep.stable.assign(ns, false);
  rep.all_certified = true;
  rep.all_stable = true;
  for (std::size_t i = 0; i < ns; ++i) {
    rep.stable[i] = rep.assignment[i] == rep.perturbed_assignment[i];
    rep.all_certified = rep.all_certified && rep.certified[i];
    rep.all_stable = rep.all_stable && rep.stable[i];
  }
  return rep;
}

OuterPotential::OuterPotential(MeasureEnsemble targets, Eigen::VectorXd v,
                               CostSpec spec)
    : targets_(std::move(targets)), v_(std::move(v)), spec_(std::move(spec)) {
  if (v_.size() != static_cast<Eigen::Index>(targets_.atoms.size())) {
    throw std::invalid_argument("dual vector does not match target ensemble");
  }
}

double OuterPotential::cost_to(const Measure& mu, int j) const {
  if (j < 0 || j >= static_cast<int>(targets_.atoms.size())) {
    throw std::out_of_range("target index out of range");
  }
  return spec_.apply_to_squared(w2_squared(mu, targets_.atoms[j]));
}

double OuterPotential::operator()(const Measure& mu) const {
  double best = cost_to(mu, 0) - v_(0);
  for (int j = 1; j < static_cast<int>(targets_.atoms.size()); ++j) {
    best = std::min(best, cost_to(mu, j) - v_(j));
  }
  return best;
}

int OuterPotential::argmin(const Measure& mu) const {
  int arg = 0;
  double best = cost_to(mu, 0) - v_(0);
  for (int j = 1; j < static_cast<int>(targets_.atoms.size()); ++j) {
    const double cand = cost_to(mu, j) - v_(j);
    if (cand < best) {
      best = cand;
      arg = j;
    }
  }
  return arg;
}

OuterPotential outer_potential_extension(const OuterPlan& plan,
                                         const MeasureEnsemble& dst,
                                         const CostSpec& spec) {
  return OuterPotential(dst, plan.V, spec);
}

VectorField estimate_metric_gradient(
    const std::function<double(const Measure&)>& U, const Measure& mu,
    const std::vector<VectorField>& probe_fields, double fd_step) {
  if (!U) throw std::invalid_argument("empty functional");
  if (!(fd_step > 0.0)) throw std::invalid_argument("fd_step must be positive");
  const std::vector<VectorField> basis = orthonormalize_fields(probe_fields, mu);
  if (basis.empty()) {
    throw std::invalid_argument("probe family spans no tangent directions");
  }
  const DiscreteManifold& m = mu.manifold();
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(m.num_nodes(), m.chart_dim());
  for (const VectorField& e : basis) {
    const double up = U(flow_pushforward(mu, e, fd_step));
    const double um = U(flow_pushforward(mu, e, -fd_step));
    comp += ((up - um) / (2.0 * fd_step)) * e.components;
  }
  return VectorField{std::move(comp), "metric gradient"};
}

StationarityReport stationarity_check(const MeasureEnsemble& src,
                                      int atom_index, const OuterPlan& plan,
                                      const MeasureEnsemble& dst,
                                      const CostSpec& spec,
                                      const std::vector<VectorField>& fields,
                                      double fd_step) {
  if (atom_index < 0 || atom_index >= static_cast<int>(src.atoms.size())) {
    throw std::out_of_range("source atom index out of range");
  }
  if (fields.empty()) {
    throw std::invalid_argument("stationarity check needs probe fields");
  }
  const Measure& mu = src.atoms[static_cast<std::size_t>(atom_index)];
  Eigen::Index assigned = 0;
  plan.pi.row(atom_index).maxCoeff(&assigned);
  const Measure& nu = dst.atoms[static_cast<std::size_t>(assigned)];

  const OuterPotential pot = outer_potential_extension(plan, dst, spec);
  auto pot_fn = [&pot](const Measure& m) { return pot(m); };

  InnerSolution inner = solve_exact(mu, nu);
  const McCannMap mm = extract_mccann_map(inner.plan);
  const double hb = spec.hbar_prime(inner.plan.cost);
  const VectorField du = estimate_metric_gradient(pot_fn, mu, fields, fd_step);

  StationarityReport rep;
  rep.atom = atom_index;
  rep.assigned = static_cast<int>(assigned);
  rep.u_value = pot(mu);
  rep.w2sq = inner.plan.cost;

  for (const VectorField& w : fields) {
    StationarityFieldReport fr;
    fr.label = w.label;
    const Measure mp = flow_pushforward(mu, w, fd_step);
    const Measure mn = flow_pushforward(mu, w, -fd_step);
    const double ap =
        pot(mp) - pot.cost_to(mp, static_cast<int>(assigned));
    const double am =
        pot(mn) - pot.cost_to(mn, static_cast<int>(assigned));
    fr.alpha_prime = (ap - am) / (2.0 * fd_step);
    // grad phi is minus the displacement field, so the target gradient is
    // 2 hbar'(W2^2) grad phi = -2 hb * mm.field.
    fr.inner_residual = tangent_inner_product(du, w, mu) +
                        2.0 * hb * tangent_inner_product(mm.field, w, mu);
    rep.max_abs_alpha_prime =
        std::max(rep.max_abs_alpha_prime, std::abs(fr.alpha_prime));
    rep.max_abs_inner_residual =
        std::max(rep.max_abs_inner_residual, std::abs(fr.inner_residual));
    rep.fields.push_back(std::move(fr));
  }
  return rep;
}

MapFormulaReport extract_outer_map_formula(
    const MeasureEnsemble& src, int atom_index, const OuterPlan& plan,
    const MeasureEnsemble& dst, const CostSpec& spec,
    const std::vector<VectorField>& fields, double fd_step) {
  if (!spec.is_squared()) {
    throw std::invalid_argument(
        "map reconstruction applies to the plain squared cost only");
  }
  if (fields.size() < 4) {
    throw std::invalid_argument(
        "map reconstruction needs at least four probe fields");
  }
  if (atom_index < 0 || atom_index >= static_cast<int>(src.atoms.size())) {
    throw std::out_of_range("source atom index out of range");
  }
  const Measure& mu = src.atoms[static_cast<std::size_t>(atom_index)];
  Eigen::Index assigned = 0;
  plan.pi.row(atom_index).maxCoeff(&assigned);
  const Measure& nu = dst.atoms[static_cast<std::size_t>(assigned)];

  const OuterPotential pot = outer_potential_extension(plan, dst, spec);
  auto pot_fn = [&pot](const Measure& m) { return pot(m); };
  VectorField du = estimate_metric_gradient(pot_fn, mu, fields, fd_step);

  const DiscreteManifold& m = mu.manifold();
  PointMap map;
  map.targets.resize(m.num_nodes(), m.chart_dim());
  for (int i = 0; i < m.num_nodes(); ++i) {
    TangentVector v{i, (-0.5 * du.components.row(i)).transpose()};
    map.targets.row(i) = m.exp_map(v).transpose();
  }
  Measure predicted = pushforward(mu, map);
  const double err = w2_distance(predicted, nu);
  return MapFormulaReport{atom_index, static_cast<int>(assigned),
                          std::move(du), std::move(predicted), err};
}

HIdentityReport h_identity_checks(
    const CostSpec& spec,
    const std::vector<std::pair<Measure, Measure>>& sample_pairs,
    int grid_points) {
  if (sample_pairs.empty()) {
    throw std::invalid_argument("identity checks need sample pairs");
  }
  if (grid_points < 2) {
    throw std::invalid_argument("grid_points must be at least 2");
  }
  const HFunction h = spec.is_squared() ? h_square() : spec.h();
  const double diam = sample_pairs.front().first.manifold().diameter();

  HIdentityReport rep;
  rep.hprime_positive = true;
  rep.hsecond_positive = true;
  rep.gradient_scale_increasing = true;
  double prev_scale = 0.0;
  for (int k = 1; k <= grid_points; ++k) {
    const double s = diam * static_cast<double>(k) / grid_points;
    const double u = s * s;
    const double delta = std::min(1e-6 * (1.0 + u), 0.5 * u);
    const double hbar_fd =
        (h.value(std::sqrt(u + delta)) - h.value(std::sqrt(u - delta))) /
        (2.0 * delta);
    rep.chain_rule_max_residual = std::max(
        rep.chain_rule_max_residual, std::abs(h.d1(s) - 2.0 * s * hbar_fd));
    rep.hprime_positive = rep.hprime_positive && h.d1(s) > 0.0;
    rep.hsecond_positive = rep.hsecond_positive && h.d2(s) > 0.0;
    const double scale = 0.5 * h.d1(s);
    if (k > 1) {
      rep.gradient_scale_increasing =
          rep.gradient_scale_increasing && scale > prev_scale;
    }
    prev_scale = scale;
  }

  for (const auto& [a, b] : sample_pairs) {
    const NormIdentityReport nir = norm_identity_check(a, b);
    rep.norm_identity_max_residual =
        std::max(rep.norm_identity_max_residual, nir.residual);
  }
  return rep;
}

}  // namespace w2w
