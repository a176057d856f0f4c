#include "w2w/measure.hpp"

#include <cmath>
#include <stdexcept>

namespace w2w {

namespace {

// Rescales nonnegative weights to total mass one and then nudges the largest
// entry until the floating-point sum lands on 1.0. Eigen sums pairwise, so
// the correction re-rounds through the reduction tree; iterating contracts
// the error to one or two units in the last place and usually to zero.
Eigen::VectorXd normalize_weights(Eigen::VectorXd w) {
  double total = w.sum();
  if (!(total > 0.0)) throw std::invalid_argument("measure has zero total mass");
  w /= total;
  for (int pass = 0; pass < 40; ++pass) {
    double err = w.sum() - 1.0;
    if (err == 0.0) break;
    int imax;
    w.maxCoeff(&imax);
    w(imax) -= err;
  }
  return w;
}

}  // namespace

Measure::Measure(ManifoldPtr manifold, Eigen::VectorXd weights)
    : manifold_(std::move(manifold)) {
  if (!manifold_) throw std::invalid_argument("measure needs a manifold");
  if (weights.size() != manifold_->num_nodes())
    throw std::invalid_argument("measure weight vector has wrong size");
  if (!weights.allFinite())
    throw std::invalid_argument("measure weights must be finite");
  if (weights.minCoeff() < 0.0)
    throw std::invalid_argument("measure weights must be nonnegative");
  double total = weights.sum();
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("measure weights must sum to 1");
  weights_ = normalize_weights(std::move(weights));
}

Measure Measure::delta(ManifoldPtr manifold, int node) {
  if (!manifold) throw std::invalid_argument("measure needs a manifold");
  if (node < 0 || node >= manifold->num_nodes())
    throw std::invalid_argument("delta node out of range");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(manifold->num_nodes());
  w(node) = 1.0;
  return Measure(std::move(manifold), std::move(w));
}

Measure Measure::uniform(ManifoldPtr manifold) {
  if (!manifold) throw std::invalid_argument("measure needs a manifold");
  int n = manifold->num_nodes();
  return Measure(std::move(manifold),
                 Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

PointMap identity_map(const DiscreteManifold& m) { return PointMap{m.nodes()}; }

PointMap rotation_map(const DiscreteManifold& m, int steps) {
  if (m.kind() != ManifoldKind::circle)
    throw std::invalid_argument("rotation_map is defined on the circle");
  int n = m.num_nodes();
  Eigen::MatrixXd t(n, 1);
  for (int i = 0; i < n; ++i) t(i, 0) = m.nodes()((i + steps % n + n) % n, 0);
  return PointMap{t};
}

Measure pushforward(const Measure& mu, const PointMap& map) {
  const DiscreteManifold& m = mu.manifold();
  if (map.targets.rows() != m.num_nodes() || map.targets.cols() != m.chart_dim())
    throw std::invalid_argument("pushforward: point map has wrong shape");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(m.num_nodes());
  for (int i = 0; i < m.num_nodes(); ++i) {
    double mass = mu.weights()(i);
    if (mass == 0.0) continue;
    for (const auto& iw : m.interpolation_weights(map.targets.row(i).transpose()))
      out(iw.node) += mass * iw.weight;
  }
  return Measure(mu.manifold_ptr(), std::move(out));
}

Measure flow_pushforward(const Measure& mu, const VectorField& w, double t) {
  if (t == 0.0) return mu;
  return pushforward(mu, PointMap{mu.manifold().flow_all_nodes(w, t)});
}

MeasureEnsemble::MeasureEnsemble(std::vector<Measure> atoms_in,
                                 Eigen::VectorXd mass_in)
    : atoms(std::move(atoms_in)), mass(std::move(mass_in)) {
  if (atoms.empty()) throw std::invalid_argument("ensemble needs atoms");
  if (mass.size() != static_cast<Eigen::Index>(atoms.size()))
    throw std::invalid_argument("ensemble mass vector has wrong size");
  if (mass.minCoeff() < 0.0)
    throw std::invalid_argument("ensemble masses must be nonnegative");
  for (const auto& atom : atoms)
    if (!atom.manifold().same_discretization(atoms.front().manifold()))
      throw std::invalid_argument("ensemble atoms live on different manifolds");
  double total = mass.sum();
  if (std::abs(total - 1.0) > 1e-6)
    throw std::invalid_argument("ensemble masses must sum to 1");
  mass /= total;
}

MeasureEnsemble MeasureEnsemble::uniform_mass(std::vector<Measure> atoms_in) {
  int n = static_cast<int>(atoms_in.size());
  if (n == 0) throw std::invalid_argument("ensemble needs atoms");
  return MeasureEnsemble(std::move(atoms_in),
                         Eigen::VectorXd::Constant(n, 1.0 / n));
}

std::string to_string(EnsembleFamily family) {
  switch (family) {
    case EnsembleFamily::bumps: return "bumps";
    case EnsembleFamily::mixtures: return "mixtures";
    case EnsembleFamily::dirichlet_weights: return "dirichlet_weights";
  }
  return "unknown";
}

EnsembleFamily ensemble_family_from_string(const std::string& s) {
  if (s == "bumps") return EnsembleFamily::bumps;
  if (s == "mixtures") return EnsembleFamily::mixtures;
  if (s == "dirichlet_weights") return EnsembleFamily::dirichlet_weights;
  throw std::invalid_argument("unknown ensemble family: " + s);
}

namespace {

constexpr double kWeightFloor = 1e-9;

Eigen::VectorXd bump_profile(const DiscreteManifold& m, int center, double kappa) {
  const double diam = m.diameter();
  Eigen::VectorXd w(m.num_nodes());
  for (int i = 0; i < m.num_nodes(); ++i) {
    double d = m.geodesic_distance(center, i) / diam;
    w(i) = std::exp(kappa * (std::cos(3.14159265358979323846 * d) - 1.0));
  }
  return w;
}

Measure floored_measure(ManifoldPtr m, Eigen::VectorXd raw) {
  raw /= raw.sum();
  for (int i = 0; i < raw.size(); ++i) raw(i) = std::max(raw(i), kWeightFloor);
  raw /= raw.sum();
  return Measure(std::move(m), std::move(raw));
}

}  // namespace

Measure bump_measure(ManifoldPtr m, int center, double kappa) {
  if (center < 0 || center >= m->num_nodes())
    throw std::invalid_argument("bump center out of range");
  if (!(kappa > 0.0)) throw std::invalid_argument("bump kappa must be positive");
  Eigen::VectorXd raw = bump_profile(*m, center, kappa);
  return floored_measure(std::move(m), std::move(raw));
}

Measure generate_measure(ManifoldPtr m, EnsembleFamily family, SeededRng& rng) {
  const int n = m->num_nodes();
  switch (family) {
    case EnsembleFamily::bumps: {
      int center = rng.uniform_int(n);
      double kappa = rng.uniform(4.0, 20.0);
      return bump_measure(std::move(m), center, kappa);
    }
    case EnsembleFamily::mixtures: {
      int parts = 2 + rng.uniform_int(3);
      Eigen::VectorXd raw = Eigen::VectorXd::Zero(n);
      for (int p = 0; p < parts; ++p) {
        int center = rng.uniform_int(n);
        double kappa = rng.uniform(4.0, 20.0);
        double coef = rng.uniform(0.2, 1.0);
        Eigen::VectorXd part = bump_profile(*m, center, kappa);
        raw += coef * part / part.sum();
      }
      return floored_measure(std::move(m), std::move(raw));
    }
    case EnsembleFamily::dirichlet_weights: {
      Eigen::VectorXd raw(n);
      for (int i = 0; i < n; ++i) raw(i) = -std::log(rng.uniform_open());
      return floored_measure(std::move(m), std::move(raw));
    }
  }
  throw std::logic_error("unreachable");
}

MeasureEnsemble generate_ensemble(ManifoldPtr m, int n_atoms,
                                  EnsembleFamily family, std::uint64_t seed) {
  if (n_atoms < 1) throw std::invalid_argument("ensemble needs atoms");
  std::vector<Measure> atoms;
  atoms.reserve(n_atoms);
  for (int a = 0; a < n_atoms; ++a) {
    SeededRng rng(mix_seed(seed, static_cast<std::uint64_t>(a)));
    atoms.push_back(generate_measure(m, family, rng));
  }
  return MeasureEnsemble::uniform_mass(std::move(atoms));
}

double total_variation(const Measure& a, const Measure& b) {
  return 0.5 * (a.weights() - b.weights()).cwiseAbs().sum();
}

}  // namespace w2w
