// Acceptance gate: eleven end-to-end criteria, each printed as one
// [PASS]/[FAIL] line with its measured slack. Run all by default, a single
// one with --only <k>. Exits nonzero when any executed criterion fails.
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "w2w/calculus.hpp"
#include "w2w/inner_ot.hpp"
#include "w2w/measure.hpp"
#include "w2w/outer_ot.hpp"
#include "w2w/rng.hpp"
#include "w2w/runner.hpp"

using w2w::CostSpec;
using w2w::DiscreteManifold;
using w2w::EnsembleFamily;
using w2w::ManifoldPtr;
using w2w::Measure;
using w2w::MeasureEnsemble;
using w2w::OuterPlan;
using w2w::SeededRng;
using w2w::VectorField;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

ManifoldPtr make_manifold(int kind, int variant) {
  switch (kind) {
    case 0: {
      const int sizes[] = {16, 24, 32, 48, 64};
      return DiscreteManifold::circle(sizes[variant % 5]);
    }
    case 1:
      return DiscreteManifold::flat_torus(8, 8);
    default:
      return DiscreteManifold::icosphere(1);
  }
}

EnsembleFamily family_of(int i) {
  switch (i % 3) {
    case 0:
      return EnsembleFamily::bumps;
    case 1:
      return EnsembleFamily::mixtures;
    default:
      return EnsembleFamily::dirichlet_weights;
  }
}

/// Bump at an arbitrary chart point of the circle so one continuous instance
/// can be discretized at several resolutions.
Measure off_grid_bump(const ManifoldPtr& m, double center, double kappa) {
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

// --- Criterion 1: strong duality of the inner solver ---------------------

bool duality_certificates(std::string& detail) {
  double worst_gap = 0.0, worst_slack = 0.0;
  int count = 0;
  for (int kind = 0; kind < 3; ++kind) {
    for (int i = 0; i < 100; ++i) {
      const ManifoldPtr m = make_manifold(kind, i);
      SeededRng ra(w2w::mix_seed(9100 + kind, 2 * i));
      SeededRng rb(w2w::mix_seed(9100 + kind, 2 * i + 1));
      const Measure mu = w2w::generate_measure(m, family_of(i), ra);
      const Measure nu = w2w::generate_measure(m, family_of(i + 1), rb);
      const w2w::InnerSolution sol = w2w::solve_exact(mu, nu);
      const w2w::DualityReport dr = w2w::verify_duality(sol.plan, sol.potentials);
      worst_gap = std::max(worst_gap, std::abs(dr.gap));
      worst_slack = std::max(worst_slack, dr.support_slackness);
      ++count;
    }
  }
  detail = std::to_string(count) + " instances, worst gap " + fmt(worst_gap) +
           ", worst support slack " + fmt(worst_slack);
  return worst_gap <= 1e-8 && worst_slack <= 1e-8;
}

// --- Criterion 2: metric axioms of the inner distance --------------------

bool metric_axioms(std::string& detail) {
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const ManifoldPtr m = make_manifold(i % 3, 2);
    SeededRng ra(w2w::mix_seed(9200, 3 * i));
    SeededRng rb(w2w::mix_seed(9200, 3 * i + 1));
    SeededRng rc(w2w::mix_seed(9200, 3 * i + 2));
    const Measure a = w2w::generate_measure(m, family_of(i), ra);
    const Measure b = w2w::generate_measure(m, family_of(i + 1), rb);
    const Measure c = w2w::generate_measure(m, family_of(i + 2), rc);
    const double dab = w2w::w2_distance(a, b);
    const double dba = w2w::w2_distance(b, a);
    const double daa = w2w::w2_distance(a, a);
    const double dac = w2w::w2_distance(a, c);
    const double dbc = w2w::w2_distance(b, c);
    worst = std::max(worst, std::abs(dab - dba));
    worst = std::max(worst, daa);
    worst = std::max(worst, dac - (dab + dbc));
  }
  detail = "100 triples, worst axiom violation " + fmt(worst);
  return worst <= 1e-9;
}

// --- Criterion 3: outer solves match brute-force enumeration -------------

bool oracle_equivalence(std::string& detail) {
  struct Instance {
    ManifoldPtr m;
    int n;
    EnsembleFamily family;
    std::uint64_t src_seed, dst_seed;
  };
  const std::vector<Instance> instances = {
      {DiscreteManifold::circle(32), 3, EnsembleFamily::dirichlet_weights,
       1005, 2005},
      {DiscreteManifold::circle(64), 4, EnsembleFamily::dirichlet_weights,
       1002, 2002},
      {DiscreteManifold::circle(24), 3, EnsembleFamily::bumps, 311, 411},
      {DiscreteManifold::circle(32), 4, EnsembleFamily::bumps, 300, 400},
  };
  double worst = 0.0;
  bool assignments_match = true;
  for (const Instance& inst : instances) {
    const MeasureEnsemble src =
        w2w::generate_ensemble(inst.m, inst.n, inst.family, inst.src_seed);
    const MeasureEnsemble dst =
        w2w::generate_ensemble(inst.m, inst.n, inst.family, inst.dst_seed);
    const OuterPlan plan = w2w::solve_outer(src, dst, CostSpec::squared_w2());
    const auto [best, perm] =
        oracles::min_permutation_assignment(plan.cost_matrix);
    worst = std::max(worst, std::abs(plan.cost - best / inst.n));
    const auto monge = w2w::verify_monge_structure(plan);
    const double gap =
        oracles::second_best_permutation_cost(plan.cost_matrix) - best;
    if (gap > 1e-9 * inst.n && monge.assignment != perm) {
      assignments_match = false;
    }
  }
  detail = std::to_string(instances.size()) +
           " fixture instances, worst LP deviation " + fmt(worst) +
           (assignments_match ? ", assignments identical"
                              : ", ASSIGNMENT MISMATCH");
  return worst <= 1e-9 && assignments_match;
}

// --- Criterion 4: derivative formula against central differences ---------

bool derivative_formula(std::string& detail) {
  const int trials = 20;
  double worst64 = 0.0;
  double mean32 = 0.0, mean64 = 0.0;
  for (int t = 0; t < trials; ++t) {
    SeededRng rng(w2w::mix_seed(5150, static_cast<std::uint64_t>(t)));
    const double c1 = rng.uniform();
    const double k1 = rng.uniform(3.0, 8.0);
    const double c2 = rng.uniform();
    const double k2 = rng.uniform(3.0, 8.0);
    const double as = rng.uniform(-0.2, 0.2);
    const double ac = rng.uniform(-0.2, 0.2);
    for (int n : {32, 64}) {
      const ManifoldPtr m = DiscreteManifold::circle(n);
      const Measure mu = off_grid_bump(m, c1, k1);
      const Measure nu = off_grid_bump(m, c2, k2);
      Eigen::MatrixXd comp(n, 1);
      for (int q = 0; q < n; ++q) {
        const double x = m->node(q)(0);
        comp(q, 0) =
            as * std::sin(2.0 * kPi * x) + ac * std::cos(2.0 * kPi * x);
      }
      const VectorField w{std::move(comp), "probe"};
      const w2w::DerivativeCheckReport r =
          w2w::wasserstein_derivative_check(mu, nu, w);
      const double rel = r.residual / (1.0 + std::abs(r.formula_value));
      if (n == 32) {
        mean32 += rel / trials;
      } else {
        mean64 += rel / trials;
        worst64 = std::max(worst64, rel);
      }
    }
  }
  const double ratio = mean64 / mean32;
  detail = "20 instances, worst relative residual " + fmt(worst64) +
           " at n=64, refinement ratio " + fmt(ratio);
  return worst64 <= 1e-2 && ratio <= 0.75;
}

// --- Criterion 5: continuity equation along flows -------------------------

bool continuity_equation(std::string& detail) {
  const ManifoldPtr m = DiscreteManifold::circle(64);
  SeededRng rng(322);
  const Measure mu = w2w::generate_measure(m, EnsembleFamily::mixtures, rng);
  const auto tests = w2w::harmonic_node_functions(*m, 2, true);
  const auto fields = w2w::fourier_field_family(*m, 2, true);
  const VectorField w{0.3 * fields[0].components + 0.1 * fields[1].components,
                      "translate"};
  const std::vector<double> times = {0.0, 0.1, 0.2};
  const double res = w2w::continuity_residual(mu, w, times, tests);

  // Constant observables are conserved exactly on every manifold kind.
  double worst_const = 0.0;
  for (int kind = 0; kind < 3; ++kind) {
    const ManifoldPtr mk = make_manifold(kind, 2);
    SeededRng rk(w2w::mix_seed(9500, kind));
    const Measure muk = w2w::generate_measure(mk, EnsembleFamily::bumps, rk);
    const auto fns = w2w::harmonic_node_functions(*mk, 1, true);
    const std::vector<w2w::NodeFunction> constant(fns.begin(),
                                                  fns.begin() + 1);
    const auto probe_fields = w2w::fourier_field_family(*mk, 1, true);
    const VectorField wk{0.2 * probe_fields.back().components, "probe"};
    worst_const = std::max(
        worst_const, w2w::continuity_residual(muk, wk, times, constant));
  }
  detail = "translate residual " + fmt(res) + ", constant residual " +
           fmt(worst_const);
  return res <= 1e-3 && worst_const == 0.0;
}

// --- Criterion 6: Lipschitz bound of the extended potential ---------------

bool lipschitz_bound(std::string& detail) {
  const ManifoldPtr m = DiscreteManifold::circle(32);
  const MeasureEnsemble src = w2w::generate_ensemble(
      m, 3, EnsembleFamily::dirichlet_weights, 1005);
  const MeasureEnsemble dst = w2w::generate_ensemble(
      m, 3, EnsembleFamily::dirichlet_weights, 2005);
  const CostSpec spec = CostSpec::squared_w2();
  const OuterPlan plan = w2w::solve_outer(src, dst, spec);
  const w2w::OuterPotential pot =
      w2w::outer_potential_extension(plan, dst, spec);

  std::vector<std::pair<Measure, Measure>> pairs;
  for (int i = 0; i < 200; ++i) {
    SeededRng ra(w2w::mix_seed(606, 2 * i));
    SeededRng rb(w2w::mix_seed(606, 2 * i + 1));
    pairs.emplace_back(w2w::generate_measure(m, family_of(i), ra),
                       w2w::generate_measure(m, family_of(i + 1), rb));
  }
  const double L =
      w2w::lipschitz_check([&pot](const Measure& x) { return pot(x); }, pairs);
  const double bound = 2.0 * m->diameter() * (1.0 + 1e-6);
  detail = "200 pairs, difference quotient " + fmt(L) + " vs bound " +
           fmt(bound);
  return L <= bound;
}

// --- Criterion 7: Monge structure of generic outer plans ------------------

bool monge_structure(std::string& detail) {
  const ManifoldPtr m = DiscreteManifold::circle(32);
  int solved = 0;
  for (int n = 2; n <= 6; ++n) {
    for (int s = 0; s < 5; ++s) {
      const std::uint64_t tag = static_cast<std::uint64_t>(10 * n + s);
      const MeasureEnsemble src = w2w::generate_ensemble(
          m, n, EnsembleFamily::mixtures, w2w::mix_seed(7100, tag));
      const MeasureEnsemble dst = w2w::generate_ensemble(
          m, n, EnsembleFamily::mixtures, w2w::mix_seed(7200, tag));
      const OuterPlan plan = w2w::solve_outer(src, dst, CostSpec::squared_w2());
      const auto monge = w2w::verify_monge_structure(plan);
      const auto [best, perm] =
          oracles::min_permutation_assignment(plan.cost_matrix);
      (void)best;
      if (!monge.all_certified || !monge.all_stable ||
          monge.assignment != perm) {
        detail = "failed at N=" + std::to_string(n) + " seed " +
                 std::to_string(s);
        return false;
      }
      ++solved;
    }
  }
  detail = std::to_string(solved) +
           " ensembles certified, stable, and equal to enumeration";
  return true;
}

// --- Criterion 8: first-order stationarity at coupled atoms ---------------

bool stationarity(std::string& detail) {
  const ManifoldPtr m = DiscreteManifold::circle(64);
  const MeasureEnsemble src = w2w::generate_ensemble(
      m, 4, EnsembleFamily::dirichlet_weights, 1002);
  const MeasureEnsemble dst = w2w::generate_ensemble(
      m, 4, EnsembleFamily::dirichlet_weights, 2002);
  const CostSpec spec = CostSpec::squared_w2();
  const OuterPlan plan = w2w::solve_outer(src, dst, spec);
  const auto monge = w2w::verify_monge_structure(plan);
  if (!monge.all_certified) {
    detail = "fixture rows not certified deterministic";
    return false;
  }
  const auto fields = w2w::fourier_field_family(*m, 8, false);
  double worst = 0.0;
  bool ok = true;
  for (int i = 0; i < src.size(); ++i) {
    const auto sr = w2w::stationarity_check(src, i, plan, dst, spec, fields);
    worst = std::max(worst, sr.max_abs_alpha_prime);
    ok = ok && sr.max_abs_alpha_prime <= 1e-2 * (1.0 + std::abs(sr.u_value));
  }

  // Single target: the potential is cost minus a constant, so the inner
  // derivative cancels identically.
  const ManifoldPtr m1 = DiscreteManifold::circle(32);
  SeededRng r1(5), r2(6);
  const MeasureEnsemble s1 = MeasureEnsemble::uniform_mass(
      {w2w::generate_measure(m1, EnsembleFamily::dirichlet_weights, r1)});
  const MeasureEnsemble d1 = MeasureEnsemble::uniform_mass(
      {w2w::generate_measure(m1, EnsembleFamily::dirichlet_weights, r2)});
  const OuterPlan p1 = w2w::solve_outer(s1, d1, spec);
  const auto sr1 = w2w::stationarity_check(
      s1, 0, p1, d1, spec, w2w::fourier_field_family(*m1, 8, false));
  detail = "4-atom worst |alpha'| " + fmt(worst) + " over 16 fields, " +
           "single-target |alpha'| " + fmt(sr1.max_abs_alpha_prime);
  return ok && sr1.max_abs_alpha_prime == 0.0;
}

// --- Criterion 9: reconstruction of the assigned target -------------------

bool map_formula(std::string& detail) {
  const CostSpec spec = CostSpec::squared_w2();

  const ManifoldPtr m1 = DiscreteManifold::circle(32);
  SeededRng r1(5), r2(6);
  const MeasureEnsemble s1 = MeasureEnsemble::uniform_mass(
      {w2w::generate_measure(m1, EnsembleFamily::dirichlet_weights, r1)});
  const MeasureEnsemble d1 = MeasureEnsemble::uniform_mass(
      {w2w::generate_measure(m1, EnsembleFamily::dirichlet_weights, r2)});
  const OuterPlan p1 = w2w::solve_outer(s1, d1, spec);
  const auto single = w2w::extract_outer_map_formula(
      s1, 0, p1, d1, spec, w2w::fourier_field_family(*m1, 4, true));

  const ManifoldPtr m4 = DiscreteManifold::circle(64);
  const MeasureEnsemble s4 = w2w::generate_ensemble(
      m4, 4, EnsembleFamily::dirichlet_weights, 1002);
  const MeasureEnsemble d4 = w2w::generate_ensemble(
      m4, 4, EnsembleFamily::dirichlet_weights, 2002);
  const OuterPlan p4 = w2w::solve_outer(s4, d4, spec);
  const auto fields = w2w::fourier_field_family(*m4, 8, false);
  double worst4 = 0.0;
  for (int a = 0; a < s4.size(); ++a) {
    worst4 = std::max(worst4, w2w::extract_outer_map_formula(
                                  s4, a, p4, d4, spec, fields)
                                  .w2_error);
  }
  detail = "single-target error " + fmt(single.w2_error) + " vs " +
           fmt(2.0 * m1->grid_spacing()) + ", 4-atom worst " + fmt(worst4) +
           " vs " + fmt(0.1 * m4->diameter());
  return single.w2_error <= 2.0 * m1->grid_spacing() &&
         worst4 <= 0.1 * m4->diameter();
}

// --- Criterion 10: modulus identities and assignment preservation --------

bool h_cost_identities(std::string& detail) {
  const ManifoldPtr m = DiscreteManifold::circle(32);
  std::vector<std::pair<Measure, Measure>> pairs;
  for (int i = 0; i < 20; ++i) {
    SeededRng ra(w2w::mix_seed(1010, 2 * i));
    SeededRng rb(w2w::mix_seed(1010, 2 * i + 1));
    pairs.emplace_back(
        w2w::generate_measure(m, i % 2 ? EnsembleFamily::bumps
                                       : EnsembleFamily::mixtures, ra),
        w2w::generate_measure(m, i % 2 ? EnsembleFamily::mixtures
                                       : EnsembleFamily::bumps, rb));
  }
  double worst_chain = 0.0, worst_norm = 0.0;
  for (const w2w::HFunction& h :
       {w2w::h_square(), w2w::h_quartic(), w2w::h_cosh_minus_one()}) {
    const auto rep = w2w::h_identity_checks(
        CostSpec::h_of_w2(h, m->diameter()), pairs);
    worst_chain = std::max(worst_chain, rep.chain_rule_max_residual);
    worst_norm = std::max(worst_norm, rep.norm_identity_max_residual);
    if (!rep.hprime_positive || !rep.hsecond_positive ||
        !rep.gradient_scale_increasing) {
      detail = "monotonicity failed for " + h.name;
      return false;
    }
  }
  const double norm_bound = 5.0 * m->grid_spacing() * m->diameter();

  // Assignment preservation wherever the squared-cost optimality margin
  // dominates the modulus's deviation from a chord fit.
  int hits = 0, agreements = 0;
  const CostSpec sq = CostSpec::squared_w2();
  for (std::uint64_t s = 0; s < 25; ++s) {
    const MeasureEnsemble src =
        w2w::generate_ensemble(m, 4, EnsembleFamily::bumps, 300 + s);
    const MeasureEnsemble dst =
        w2w::generate_ensemble(m, 4, EnsembleFamily::bumps, 400 + s);
    const OuterPlan base = w2w::solve_outer(src, dst, sq);
    const auto [best, perm] =
        oracles::min_permutation_assignment(base.cost_matrix);
    const double margin =
        oracles::second_best_permutation_cost(base.cost_matrix) - best;
    const double lo = base.cost_matrix.minCoeff();
    const double hi = base.cost_matrix.maxCoeff();
    for (const w2w::HFunction& h :
         {w2w::h_quartic(), w2w::h_cosh_minus_one()}) {
      const double slope =
          (h.value(std::sqrt(hi)) - h.value(std::sqrt(lo))) / (hi - lo);
      double maxdev = 0.0;
      for (int g = 0; g <= 200; ++g) {
        const double u = lo + (hi - lo) * g / 200.0;
        const double chord = h.value(std::sqrt(lo)) + slope * (u - lo);
        maxdev = std::max(maxdev, std::abs(h.value(std::sqrt(u)) - chord));
      }
      if (margin <= 2.0 * 4 * maxdev / slope) continue;
      ++hits;
      const OuterPlan hp = w2w::solve_outer(
          src, dst, CostSpec::h_of_w2(h, m->diameter()));
      if (w2w::verify_monge_structure(hp).assignment ==
          w2w::verify_monge_structure(base).assignment) {
        ++agreements;
      }
    }
  }
  detail = "chain rule " + fmt(worst_chain) + ", norm identity " +
           fmt(worst_norm) + " vs " + fmt(norm_bound) + ", " +
           std::to_string(agreements) + "/" + std::to_string(hits) +
           " margin-certified assignments preserved";
  return worst_chain <= 1e-8 && worst_norm <= norm_bound && hits > 0 &&
         agreements == hits;
}

// --- Criterion 11: end-to-end determinism ---------------------------------

bool determinism(std::string& detail) {
  const std::string cfg_path =
      std::string(W2W_FIXTURE_DIR) + "/outer_n3_circle32.json";
  std::ifstream in(cfg_path, std::ios::binary);
  if (!in) {
    detail = "missing fixture " + cfg_path;
    return false;
  }
  w2w::Json config;
  in >> config;
  const auto base =
      std::filesystem::temp_directory_path() / "w2w_acceptance_det";
  std::filesystem::remove_all(base);
  auto strip = [](w2w::Json j) {
    j.erase("meta");
    return j.dump(2);
  };
  const auto r1 = w2w::run_outer(config, (base / "a").string());
  const auto r2 = w2w::run_outer(config, (base / "b").string());
  if (r1.exit_code != w2w::kExitPass || r2.exit_code != w2w::kExitPass) {
    detail = "fixture run failed";
    return false;
  }
  const bool same = strip(r1.report) == strip(r2.report);
  detail = same ? "two runs byte-identical outside the timing metadata"
                : "reports differ";
  return same;
}

struct Criterion {
  const char* name;
  bool (*fn)(std::string&);
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {"inner duality certificates", duality_certificates},
      {"metric axioms", metric_axioms},
      {"brute-force oracle equivalence", oracle_equivalence},
      {"derivative formula", derivative_formula},
      {"continuity equation", continuity_equation},
      {"Lipschitz bound", lipschitz_bound},
      {"Monge structure", monge_structure},
      {"stationarity", stationarity},
      {"map formula", map_formula},
      {"modulus identities", h_cost_identities},
      {"determinism", determinism},
  };
  const int total = static_cast<int>(std::size(criteria));

  int only = 0;
  for (int a = 1; a < argc; ++a) {
    if (std::strcmp(argv[a], "--only") == 0 && a + 1 < argc) {
      only = std::atoi(argv[a + 1]);
      ++a;
    } else {
      std::fprintf(stderr, "usage: %s [--only k]  (k in 1..%d)\n", argv[0],
                   total);
      return 2;
    }
  }
  if (only < 0 || only > total) {
    std::fprintf(stderr, "criterion index out of range: %d\n", only);
    return 2;
  }

  int failures = 0;
  for (int k = 1; k <= total; ++k) {
    if (only != 0 && k != only) continue;
    std::string detail;
    const bool ok = criteria[k - 1].fn(detail);
    std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", k,
                criteria[k - 1].name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
