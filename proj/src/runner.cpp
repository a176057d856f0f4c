#include "w2w/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "w2w/calculus.hpp"
#include "w2w/inner_ot.hpp"
#include "w2w/outer_ot.hpp"
#include "w2w/rng.hpp"

namespace w2w {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string iso_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Verdicts {
  Json j = Json::object();
  bool all = true;
  void add(const std::string& name, bool ok) {
    j[name] = ok;
    all = all && ok;
  }
};

Measure parse_measure(const Json& spec, const ManifoldPtr& m,
                      std::uint64_t default_seed) {
  const std::string type = spec.at("type").get<std::string>();
  if (type == "delta") {
    return Measure::delta(m, spec.at("node").get<int>());
  }
  if (type == "uniform") {
    return Measure::uniform(m);
  }
  if (type == "bump") {
    return bump_measure(m, spec.at("center").get<int>(),
                        spec.at("kappa").get<double>());
  }
  if (type == "mixture") {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m->num_nodes());
    for (const Json& c : spec.at("components")) {
      const Measure part = bump_measure(m, c.at("center").get<int>(),
                                        c.at("kappa").get<double>());
      w += c.at("coef").get<double>() * part.weights();
    }
    w /= w.sum();
    return Measure(m, std::move(w));
  }
  if (type == "weights") {
    return Measure(m, vector_from_json(spec.at("values")));
  }
  if (type == "generated") {
    SeededRng rng(spec.value("seed", default_seed));
    return generate_measure(
        m, ensemble_family_from_string(spec.value("family", "bumps")), rng);
  }
  throw std::invalid_argument("unknown measure type: " + type);
}

VectorField parse_field(const Json& spec, const DiscreteManifold& m) {
  const std::string type = spec.at("type").get<std::string>();
  const Eigen::Index n = m.num_nodes();
  const Eigen::Index dim = m.chart_dim();
  if (type == "zero") {
    return VectorField{Eigen::MatrixXd::Zero(n, dim), "zero"};
  }
  if (type == "constant") {
    const Eigen::VectorXd c = vector_from_json(spec.at("components"));
    if (c.size() != dim) {
      throw std::invalid_argument("constant field has wrong dimension");
    }
    Eigen::MatrixXd comp(n, dim);
    comp.rowwise() = c.transpose();
    return VectorField{std::move(comp), "constant"};
  }
  if (type == "fourier") {
    if (m.kind() == ManifoldKind::sphere) {
      throw std::invalid_argument("fourier fields need a periodic chart");
    }
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, dim);
    for (const Json& term : spec.at("terms")) {
      const int k = term.at("k").get<int>();
      const double as = term.value("sin", 0.0);
      const double ac = term.value("cos", 0.0);
      const int axis = term.value("axis", 0);
      if (axis < 0 || axis >= dim) {
        throw std::invalid_argument("fourier term axis out of range");
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const double x = m.node(static_cast<int>(i))(axis);
        comp(i, axis) +=
            as * std::sin(2.0 * kPi * k * x) + ac * std::cos(2.0 * kPi * k * x);
      }
    }
    return VectorField{std::move(comp), "fourier"};
  }
  if (type == "sphere_mix") {
    if (m.kind() != ManifoldKind::sphere) {
      throw std::invalid_argument("sphere_mix field needs a sphere");
    }
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, 3);
    for (const Json& term : spec.at("terms")) {
      const int axis = term.at("axis").get<int>();
      const double amp = term.value("amp", 1.0);
      const std::string kind = term.at("kind").get<std::string>();
      Eigen::Vector3d e = Eigen::Vector3d::Zero();
      if (axis < 0 || axis > 2) {
        throw std::invalid_argument("sphere_mix axis out of range");
      }
      e(axis) = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector3d x = m.node(static_cast<int>(i));
        if (kind == "rot") {
          comp.row(i) += amp * e.cross(x).transpose();
        } else if (kind == "grad") {
          comp.row(i) += amp * (e - e.dot(x) * x).transpose();
        } else {
          throw std::invalid_argument("sphere_mix term kind must be rot|grad");
        }
      }
    }
    return VectorField{std::move(comp), "sphere_mix"};
  }
  throw std::invalid_argument("unknown field type: " + type);
}

MeasureEnsemble parse_ensemble(const Json& spec, const ManifoldPtr& m,
                               std::uint64_t default_seed) {
  if (spec.contains("atoms")) {
    std::vector<Measure> atoms;
    for (const Json& a : spec.at("atoms")) {
      atoms.push_back(parse_measure(a, m, default_seed));
    }
    if (spec.contains("mass")) {
      return MeasureEnsemble(std::move(atoms),
                             vector_from_json(spec.at("mass")));
    }
    return MeasureEnsemble::uniform_mass(std::move(atoms));
  }
  return generate_ensemble(
      m, spec.at("n_atoms").get<int>(),
      ensemble_family_from_string(spec.value("family", "bumps")),
      spec.value("seed", default_seed));
}

CostSpec parse_cost_spec(const Json& spec, double diameter) {
  const std::string kind = spec.value("kind", "squared_w2");
  if (kind == "squared_w2") return CostSpec::squared_w2();
  if (kind == "h_of_w2") {
    if (spec.contains("table")) {
      const Json& t = spec.at("table");
      return CostSpec::h_of_w2(
          h_from_table(vector_from_json(t.at("s")),
                       vector_from_json(t.at("values"))),
          diameter);
    }
    return CostSpec::h_of_w2(h_from_registry(spec.at("h").get<std::string>()),
                             diameter);
  }
  throw std::invalid_argument("unknown cost kind: " + kind);
}

/// Bump centered at an arbitrary chart point of the circle; used by the
/// refinement study so the same continuous instance can be discretized at
/// several resolutions.
Measure continuous_circle_bump(const ManifoldPtr& m, double center,
                               double kappa) {
  const Eigen::Index n = m->num_nodes();
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double f = std::abs(m->node(static_cast<int>(i))(0) - center);
    f -= std::floor(f);
    const double d = std::min(f, 1.0 - f);
    w(i) = std::exp(kappa * (std::cos(2.0 * kPi * d) - 1.0)) + 1e-9;
  }
  w /= w.sum();
  return Measure(m, std::move(w));
}

std::string plan_to_csv(const Eigen::MatrixXd& gamma,
                        const std::string& value_name) {
  std::string out = "i,j," + value_name + "\n";
  for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
    for (Eigen::Index j = 0; j < gamma.cols(); ++j) {
      if (gamma(i, j) > 0.0) {
        out += std::to_string(i) + "," + std::to_string(j) + "," +
               fmt17(gamma(i, j)) + "\n";
      }
    }
  }
  return out;
}

using FileMap = std::map<std::string, std::string>;

Json inner_impl(const Json& config, FileMap& files) {
  const ManifoldPtr m = manifold_from_json(config.at("manifold"));
  const std::uint64_t base_seed = config.value("seed", std::uint64_t{1});
  const Measure mu = parse_measure(config.at("source"), m, mix_seed(base_seed, 0));
  const Measure nu = parse_measure(config.at("target"), m, mix_seed(base_seed, 1));
  const Json solver = config.value("solver", Json::object());
  const Json tol = config.value("tolerances", Json::object());
  const std::string method = solver.value("method", "exact");

  InnerSolution sol;
  double gap_tol = tol.value("duality_gap", 1e-8);
  double slack_tol = tol.value("support_slackness", 1e-8);
  if (method == "exact") {
    ExactOptions opts;
    if (solver.contains("perturbation_seed")) {
      opts.perturbation_seed = solver.at("perturbation_seed").get<std::uint64_t>();
    }
    sol = solve_exact(mu, nu, opts);
  } else if (method == "entropic") {
    const double eps = solver.value("epsilon", 1e-3);
    EntropicOptions opts;
    opts.marginal_tolerance = solver.value("marginal_tolerance", 1e-10);
    opts.max_iterations = solver.value("max_iterations", 10000);
    opts.epsilon_scaling = solver.value("epsilon_scaling", true);
    sol = solve_entropic(mu, nu, eps, opts);
    const double nm = static_cast<double>(m->num_nodes()) *
                      static_cast<double>(m->num_nodes());
    const double entropic_default = 10.0 * eps * std::log(nm) + 1e-8;
    gap_tol = tol.value("duality_gap", entropic_default);
    slack_tol = tol.value("support_slackness", entropic_default);
  } else {
    throw std::invalid_argument("unknown solver method: " + method);
  }

  const DualityReport dr = verify_duality(sol.plan, sol.potentials);
  const NormIdentityReport ni = norm_identity_check(mu, nu);

  Json rep;
  rep["config"] = config;
  rep["cost"] = sol.plan.cost;
  rep["w2"] = std::sqrt(std::max(0.0, sol.plan.cost));
  rep["iterations"] = sol.iterations;
  rep["duality"] = Json{{"gap", dr.gap},
                        {"feasibility_violation", dr.feasibility_violation},
                        {"support_slackness", dr.support_slackness}};
  rep["norm_identity"] =
      Json{{"w2_squared", ni.w2_squared},
           {"field_norm_squared", ni.field_norm_squared},
           {"residual", ni.residual}};

  Verdicts v;
  v.add("duality_gap", dr.gap <= gap_tol);
  v.add("dual_feasibility",
        dr.feasibility_violation <= tol.value("dual_feasibility", 1e-9));
  v.add("support_slackness", dr.support_slackness <= slack_tol);
  v.add("norm_identity",
        ni.residual <=
            tol.value("norm_identity", 5.0 * m->grid_spacing() * m->diameter()));
  if (config.contains("expected_cost")) {
    v.add("expected_cost",
          std::abs(sol.plan.cost - config.at("expected_cost").get<double>()) <=
              tol.value("expected_cost", 1e-9));
  }

  if (config.contains("epsilon_sweep")) {
    Json pts = Json::array();
    for (const Json& e : config.at("epsilon_sweep")) {
      const double eps = e.get<double>();
      InnerSolution es = solve_entropic(mu, nu, eps, EntropicOptions{});
      pts.push_back(Json::array({eps, es.plan.cost}));
    }
    rep["series"]["cost_vs_epsilon"]["entropic_cost"] = std::move(pts);
  }

  rep["verdicts"] = v.j;
  rep["pass"] = v.all;
  files["plan.csv"] = plan_to_csv(sol.plan.gamma, "gamma");
  return rep;
}

Json calculus_impl(const Json& config, FileMap& files) {
  (void)files;
  const ManifoldPtr m = manifold_from_json(config.at("manifold"));
  const std::uint64_t base_seed = config.value("seed", std::uint64_t{1});
  const Measure mu = parse_measure(config.at("source"), m, mix_seed(base_seed, 0));
  const Json checks = config.value("checks", Json::object());

  Json rep;
  rep["config"] = config;
  Verdicts v;

  if (checks.contains("derivative")) {
    const Json& c = checks.at("derivative");
    const Measure nu = parse_measure(c.at("target"), m, mix_seed(base_seed, 1));
    const VectorField w = parse_field(c.at("field"), *m);
    const DerivativeCheckReport r =
        wasserstein_derivative_check(mu, nu, w, c.value("fd_step", 1e-3));
    const double rel = r.residual / (1.0 + std::abs(r.formula_value));
    rep["derivative"] = Json{{"formula_value", r.formula_value},
                             {"fd_value", r.fd_value},
                             {"residual", r.residual},
                             {"relative_residual", rel}};
    v.add("derivative", rel <= c.value("relative_tolerance", 1e-2));
  }

  if (checks.contains("continuity")) {
    const Json& c = checks.at("continuity");
    const VectorField w = parse_field(c.at("field"), *m);
    std::vector<double> times;
    for (const Json& t : c.at("times")) times.push_back(t.get<double>());
    const auto fns =
        harmonic_node_functions(*m, c.value("max_frequency", 2), true);
    const double fd_step = c.value("fd_step", 1e-3);
    const double res = continuity_residual(mu, w, times, fns, fd_step);
    // The constant test function must contribute exactly zero.
    const std::vector<NodeFunction> const_only(fns.begin(), fns.begin() + 1);
    const double const_res =
        continuity_residual(mu, w, times, const_only, fd_step);
    rep["continuity"] =
        Json{{"residual", res}, {"constant_residual", const_res}};
    v.add("continuity", res <= c.value("tolerance", 1e-3));
    v.add("continuity_constant_exact", const_res == 0.0);
  }

  if (checks.contains("directional")) {
    const Json& c = checks.at("directional");
    const VectorField w = parse_field(c.at("field"), *m);
    auto inner = harmonic_node_functions(*m, c.value("max_frequency", 2), true);
    const int k = static_cast<int>(inner.size());
    auto outer = [k](const Eigen::VectorXd& a) {
      double s = a(0);
      for (int i = 0; i < k; ++i) s += 0.5 * a(i) * a(i) / (i + 1.0);
      return s;
    };
    auto outer_grad = [k](const Eigen::VectorXd& a) {
      Eigen::VectorXd g(k);
      for (int i = 0; i < k; ++i) g(i) = a(i) / (i + 1.0);
      g(0) += 1.0;
      return g;
    };
    const CylinderFunction u = make_cylinder_function(
        *m, outer, outer_grad, std::move(inner), "quadratic cylinder");
    const double tau = c.value("fd_step", 1e-4);
    const double formula = directional_derivative(u, mu, w);
    const double fd = (cylinder_value_along_flow(u, mu, w, tau) -
                       cylinder_value_along_flow(u, mu, w, -tau)) /
                      (2.0 * tau);
    rep["directional"] = Json{{"formula_value", formula},
                              {"fd_value", fd},
                              {"residual", std::abs(formula - fd)}};
    v.add("directional", std::abs(formula - fd) <=
                             c.value("tolerance", 1e-5) *
                                 (1.0 + std::abs(formula)));
  }

  if (checks.contains("lipschitz")) {
    const Json& c = checks.at("lipschitz");
    const Measure ref = parse_measure(c.at("reference"), m, mix_seed(base_seed, 2));
    auto U = [&ref](const Measure& x) { return w2_squared(x, ref); };
    const int npairs = c.value("pairs", 50);
    const EnsembleFamily family =
        ensemble_family_from_string(c.value("family", "bumps"));
    const std::uint64_t seed = c.value("seed", mix_seed(base_seed, 3));
    std::vector<std::pair<Measure, Measure>> pairs;
    for (int i = 0; i < npairs; ++i) {
      SeededRng ra(mix_seed(seed, 2 * i));
      SeededRng rb(mix_seed(seed, 2 * i + 1));
      pairs.emplace_back(generate_measure(m, family, ra),
                         generate_measure(m, family, rb));
    }
    const double L = lipschitz_check(U, pairs);
    const double bound = 2.0 * m->diameter() * (1.0 + 1e-6);
    rep["lipschitz"] = Json{{"estimate", L}, {"bound", bound}};
    v.add("lipschitz", L <= bound + c.value("slack", 1e-9));
  }

  if (checks.contains("refinement")) {
    const Json& c = checks.at("refinement");
    if (m->kind() != ManifoldKind::circle) {
      throw std::invalid_argument("refinement study runs on the circle");
    }
    const int instances = c.value("instances", 20);
    const std::uint64_t seed = c.value("seed", mix_seed(base_seed, 4));
    const double fd_step = c.value("fd_step", 1e-3);
    Json pts = Json::array();
    std::vector<double> means;
    for (const Json& sz : c.at("sizes")) {
      const int n = sz.get<int>();
      const ManifoldPtr mn = DiscreteManifold::circle(n);
      double acc = 0.0;
      for (int i = 0; i < instances; ++i) {
        SeededRng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        const double c1 = rng.uniform();
        const double k1 = rng.uniform(6.0, 14.0);
        const double c2 = rng.uniform();
        const double k2 = rng.uniform(6.0, 14.0);
        const double as = rng.uniform(-0.4, 0.4);
        const double ac = rng.uniform(-0.4, 0.4);
        const Measure a = continuous_circle_bump(mn, c1, k1);
        const Measure b = continuous_circle_bump(mn, c2, k2);
        Eigen::MatrixXd comp(n, 1);
        for (int q = 0; q < n; ++q) {
          const double x = mn->node(q)(0);
          comp(q, 0) = as * std::sin(2.0 * kPi * x) + ac * std::cos(2.0 * kPi * x);
        }
        const VectorField w{comp, "probe"};
        const DerivativeCheckReport r =
            wasserstein_derivative_check(a, b, w, fd_step);
        acc += r.residual / (1.0 + std::abs(r.formula_value));
      }
      const double mean = acc / instances;
      means.push_back(mean);
      pts.push_back(Json::array({static_cast<double>(n), mean}));
    }
    rep["series"]["residual_vs_refinement"]["mean_relative_residual"] =
        std::move(pts);
    const double ratio_tol = c.value("ratio_tolerance", 0.75);
    bool shrinking = true;
    Json ratios = Json::array();
    for (std::size_t i = 1; i < means.size(); ++i) {
      const double ratio = means[i] / means[i - 1];
      ratios.push_back(ratio);
      shrinking = shrinking && ratio <= ratio_tol;
    }
    rep["refinement"] = Json{{"ratios", ratios}};
    v.add("refinement", shrinking);
  }

  rep["verdicts"] = v.j;
  rep["pass"] = v.all;
  return rep;
}

Json outer_impl(const Json& config, FileMap& files) {
  const ManifoldPtr m = manifold_from_json(config.at("manifold"));
  const std::uint64_t base_seed = config.value("seed", std::uint64_t{1});
  const MeasureEnsemble src =
      parse_ensemble(config.at("source"), m, mix_seed(base_seed, 0));
  const MeasureEnsemble dst =
      parse_ensemble(config.at("target"), m, mix_seed(base_seed, 1));
  const CostSpec spec =
      parse_cost_spec(config.value("cost", Json::object()), m->diameter());
  const int jobs = config.value("jobs", 1);
  const Json tol = config.value("tolerances", Json::object());

  const OuterPlan plan = solve_outer(src, dst, spec, jobs);
  const OuterMapReport monge =
      verify_monge_structure(plan, config.value("perturbation_seed",
                                                std::uint64_t{1}));

  Json rep;
  rep["config"] = config;
  rep["cost"] = plan.cost;
  rep["iterations"] = plan.iterations;
  rep["plan"] = matrix_to_json(plan.pi);
  rep["U"] = vector_to_json(plan.U);
  rep["V"] = vector_to_json(plan.V);
  rep["assignment"] = monge.assignment;
  rep["certified"] = monge.certified;
  rep["perturbed_assignment"] = monge.perturbed_assignment;
  rep["stable"] = monge.stable;

  Verdicts v;
  v.add("all_certified", monge.all_certified);
  v.add("all_stable", monge.all_stable);
  if (config.contains("expected_assignment")) {
    std::vector<int> expected =
        config.at("expected_assignment").get<std::vector<int>>();
    v.add("expected_assignment", expected == monge.assignment);
  }

  const Json fieldcfg = config.value("fields", Json::object());
  const std::vector<VectorField> fields =
      fourier_field_family(*m, fieldcfg.value("max_frequency", 8),
                           fieldcfg.value("include_constant", false));

  const Json statcfg = config.value("stationarity", Json::object());
  if (statcfg.value("enabled", true)) {
    const double fd_step = statcfg.value("fd_step", 1e-3);
    const double stat_tol = statcfg.value("tolerance", 1e-2);
    Json reports = Json::array();
    bool ok = true;
    for (int i = 0; i < src.size(); ++i) {
      if (!monge.certified[static_cast<std::size_t>(i)]) continue;
      const StationarityReport sr =
          stationarity_check(src, i, plan, dst, spec, fields, fd_step);
      Json fr = Json::array();
      for (const auto& f : sr.fields) {
        fr.push_back(Json{{"label", f.label},
                          {"alpha_prime", f.alpha_prime},
                          {"inner_residual", f.inner_residual}});
      }
      reports.push_back(Json{{"atom", sr.atom},
                             {"assigned", sr.assigned},
                             {"u_value", sr.u_value},
                             {"w2sq", sr.w2sq},
                             {"max_abs_alpha_prime", sr.max_abs_alpha_prime},
                             {"max_abs_inner_residual", sr.max_abs_inner_residual},
                             {"fields", std::move(fr)}});
      ok = ok && sr.max_abs_alpha_prime <=
                     stat_tol * (1.0 + std::abs(sr.u_value));
      if (statcfg.contains("inner_tolerance")) {
        ok = ok && sr.max_abs_inner_residual <=
                       statcfg.at("inner_tolerance").get<double>() *
                           (1.0 + std::abs(sr.u_value));
      }
    }
    rep["stationarity"] = std::move(reports);
    v.add("stationarity", ok);
  }

  const Json mapcfg = config.value("map_formula", Json::object());
  if (mapcfg.value("enabled", spec.is_squared()) && spec.is_squared() &&
      fields.size() >= 4) {
    const double fd_step = mapcfg.value("fd_step", 1e-3);
    const double tol_factor = mapcfg.value("tolerance_factor_diam", 0.1);
    std::vector<int> atoms = mapcfg.value("atoms", std::vector<int>{0});
    Json reports = Json::array();
    bool ok = true;
    for (int a : atoms) {
      const MapFormulaReport mr =
          extract_outer_map_formula(src, a, plan, dst, spec, fields, fd_step);
      reports.push_back(Json{{"atom", mr.atom},
                             {"assigned", mr.assigned},
                             {"w2_error", mr.w2_error}});
      ok = ok && mr.w2_error <= tol_factor * m->diameter();
    }
    rep["map_formula"] = std::move(reports);
    v.add("map_formula", ok);
  }

  const Json hcfg = config.value("h_identities", Json::object());
  if (hcfg.value("enabled", true)) {
    const int npairs = hcfg.value("pairs", 8);
    std::vector<std::pair<Measure, Measure>> pairs;
    for (int p = 0; p < npairs; ++p) {
      const int i = p % src.size();
      const int j = p % dst.size();
      pairs.emplace_back(src.atoms[static_cast<std::size_t>(i)],
                         dst.atoms[static_cast<std::size_t>(j)]);
    }
    const HIdentityReport hr = h_identity_checks(spec, pairs);
    rep["h_identity"] =
        Json{{"chain_rule_max_residual", hr.chain_rule_max_residual},
             {"hprime_positive", hr.hprime_positive},
             {"hsecond_positive", hr.hsecond_positive},
             {"gradient_scale_increasing", hr.gradient_scale_increasing},
             {"norm_identity_max_residual", hr.norm_identity_max_residual}};
    v.add("h_chain_rule", hr.chain_rule_max_residual <=
                              hcfg.value("chain_rule_tolerance", 1e-8));
    v.add("h_monotone", hr.hprime_positive && hr.hsecond_positive &&
                            hr.gradient_scale_increasing);
    v.add("h_norm_identity",
          hr.norm_identity_max_residual <=
              hcfg.value("norm_identity_tolerance",
                         5.0 * m->grid_spacing() * m->diameter()));
  }

  rep["verdicts"] = v.j;
  rep["pass"] = v.all;
  files["plan.csv"] = plan_to_csv(plan.pi, "pi");
  files["cost_matrix.csv"] = matrix_to_csv(plan.cost_matrix);
  files["w2sq_matrix.csv"] = matrix_to_csv(plan.w2sq_matrix);
  return rep;
}

RunResult run_guarded(const Json& config, const std::string& out_dir,
                      Json (*impl)(const Json&, FileMap&)) {
  RunResult result;
  FileMap files;
  bool failed = false;
  const auto start = std::chrono::steady_clock::now();
  try {
    result.report = impl(config, files);
  } catch (const ConvergenceError& e) {
    result.exit_code = kExitSolverError;
    result.report = Json{{"error", e.what()}};
    failed = true;
  } catch (const Json::exception& e) {
    result.exit_code = kExitConfigError;
    result.report = Json{{"error", e.what()}};
    failed = true;
  } catch (const std::logic_error& e) {
    result.exit_code = kExitConfigError;
    result.report = Json{{"error", e.what()}};
    failed = true;
  } catch (const std::exception& e) {
    result.exit_code = kExitSolverError;
    result.report = Json{{"error", e.what()}};
    failed = true;
  }
  if (failed) files.clear();  // partial artifacts are not worth keeping
  const auto stop = std::chrono::steady_clock::now();
  result.report["meta"] =
      Json{{"timestamp", iso_timestamp()},
           {"elapsed_ms",
            std::chrono::duration<double, std::milli>(stop - start).count()}};

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    if (!failed) result.exit_code = kExitConfigError;
    result.report["error"] = "cannot create output directory: " + out_dir;
    return result;
  }
  files["report.json"] = result.report.dump(2) + "\n";
  for (const auto& [name, content] : files) {
    std::ofstream out(std::filesystem::path(out_dir) / name,
                      std::ios::binary);
    if (!out) {
      if (!failed) result.exit_code = kExitConfigError;
      result.report["error"] = "cannot write " + name;
      return result;
    }
    out << content;
  }
  if (!failed) {
    result.exit_code =
        result.report.value("pass", false) ? kExitPass : kExitToleranceFailure;
  }
  return result;
}

}  // namespace

RunResult run_inner(const Json& config, const std::string& out_dir) {
  return run_guarded(config, out_dir, inner_impl);
}

RunResult run_calculus(const Json& config, const std::string& out_dir) {
  return run_guarded(config, out_dir, calculus_impl);
}

RunResult run_outer(const Json& config, const std::string& out_dir) {
  return run_guarded(config, out_dir, outer_impl);
}

int run_plotdata(const std::string& report_path, const std::string& out_dir) {
  std::ifstream in(report_path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "plotdata: cannot open report %s\n",
                 report_path.c_str());
    return kExitConfigError;
  }
  Json report;
  try {
    in >> report;
  } catch (const Json::exception& e) {
    std::fprintf(stderr, "plotdata: %s\n", e.what());
    return kExitConfigError;
  }
  const Json series = report.value("series", Json::object());
  if (!series.is_object()) {
    std::fprintf(stderr, "plotdata: series section must be an object\n");
    return kExitConfigError;
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    std::fprintf(stderr, "plotdata: cannot create %s\n", out_dir.c_str());
    return kExitConfigError;
  }
  for (const auto& [group, entries] : series.items()) {
    std::string csv = "series,x,y\n";
    if (entries.is_object()) {
      for (const auto& [name, pts] : entries.items()) {
        for (const Json& p : pts) {
          csv += name + "," + fmt17(p.at(0).get<double>()) + "," +
                 fmt17(p.at(1).get<double>()) + "\n";
        }
      }
    }
    std::ofstream out(std::filesystem::path(out_dir) / (group + ".csv"),
                      std::ios::binary);
    if (!out) {
      std::fprintf(stderr, "plotdata: cannot write %s.csv\n", group.c_str());
      return kExitConfigError;
    }
    out << csv;
  }
  return kExitPass;
}

int run_command(const std::string& task, const std::string& config_path,
                const std::string& out_dir_flag,
                std::optional<std::uint64_t> seed_override,
                std::optional<int> jobs_override) {
  if (task == "plotdata") {
    const std::string out = out_dir_flag.empty() ? "out" : out_dir_flag;
    return run_plotdata(config_path, out);
  }

  std::ifstream in(config_path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "cannot open config %s\n", config_path.c_str());
    return kExitConfigError;
  }
  Json config;
  try {
    in >> config;
  } catch (const Json::exception& e) {
    std::fprintf(stderr, "config parse error: %s\n", e.what());
    return kExitConfigError;
  }
  if (seed_override) config["seed"] = *seed_override;
  if (jobs_override) config["jobs"] = *jobs_override;
  const std::string out_dir =
      !out_dir_flag.empty() ? out_dir_flag : config.value("out_dir", "out");

  RunResult result;
  if (task == "inner") {
    result = run_inner(config, out_dir);
  } else if (task == "calculus") {
    result = run_calculus(config, out_dir);
  } else if (task == "outer") {
    result = run_outer(config, out_dir);
  } else {
    std::fprintf(stderr, "unknown task: %s\n", task.c_str());
    return kExitConfigError;
  }
  if (result.report.contains("error")) {
    std::fprintf(stderr, "%s\n",
                 result.report["error"].get<std::string>().c_str());
  } else {
    std::printf("%s: %s (report in %s)\n", task.c_str(),
                result.exit_code == kExitPass ? "pass" : "tolerance failure",
                out_dir.c_str());
  }
  return result.exit_code;
}

}  // namespace w2w
