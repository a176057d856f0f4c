#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "w2w/manifold.hpp"
#include "w2w/rng.hpp"

namespace w2w {

/// Probability measure supported on the nodes of a DiscreteManifold.
/// Weights are nonnegative and normalized so that their floating-point sum
/// lands within a couple of units in the last place of 1 (usually exactly 1).
class Measure {
 public:
  Measure(ManifoldPtr manifold, Eigen::VectorXd weights);

  static Measure delta(ManifoldPtr manifold, int node);
  static Measure uniform(ManifoldPtr manifold);

  const Eigen::VectorXd& weights() const { return weights_; }
  const ManifoldPtr& manifold_ptr() const { return manifold_; }
  const DiscreteManifold& manifold() const { return *manifold_; }
  int size() const { return static_cast<int>(weights_.size()); }
  double min_weight() const { return weights_.minCoeff(); }
  bool strictly_positive() const { return min_weight() > 0.0; }

 private:
  ManifoldPtr manifold_;
  Eigen::VectorXd weights_;
};

/// Target point per node, rows in chart coordinates.
struct PointMap {
  Eigen::MatrixXd targets;
};

PointMap identity_map(const DiscreteManifold& m);
/// Node i goes to node (i + steps) mod n on the circle.
PointMap rotation_map(const DiscreteManifold& m, int steps);

/// Pushes mu forward through the map, splitting each atom's mass over the
/// nodes returned by interpolation_weights at its target point. Mass is
/// conserved exactly and the operation is linear in the weights.
Measure pushforward(const Measure& mu, const PointMap& map);

/// Pushforward along the flow of w for time t (either sign); t = 0 returns mu
/// unchanged, bit for bit.
Measure flow_pushforward(const Measure& mu, const VectorField& w, double t);

/// Finite collection of measures with outer masses; the object transported by
/// the outer solver. Masses are normalized like measure weights.
struct MeasureEnsemble {
  std::vector<Measure> atoms;
  Eigen::VectorXd mass;

  MeasureEnsemble(std::vector<Measure> atoms_in, Eigen::VectorXd mass_in);
  static MeasureEnsemble uniform_mass(std::vector<Measure> atoms_in);

  int size() const { return static_cast<int>(atoms.size()); }
  const DiscreteManifold& manifold() const { return atoms.front().manifold(); }
  const ManifoldPtr& manifold_ptr() const { return atoms.front().manifold_ptr(); }
};

enum class EnsembleFamily { bumps, mixtures, dirichlet_weights };

std::string to_string(EnsembleFamily family);
EnsembleFamily ensemble_family_from_string(const std::string& s);

/// Smooth von-Mises-style bump centered at a node: weights proportional to
/// exp(kappa * (cos(pi d(c, x)/diam) - 1)), floored at 1e-9 and renormalized.
Measure bump_measure(ManifoldPtr m, int center, double kappa);

/// One random measure from the family. Every draw is strictly positive
/// (weights floored at 1e-9 before normalization).
Measure generate_measure(ManifoldPtr m, EnsembleFamily family, SeededRng& rng);

/// n_atoms random measures with uniform outer mass. Deterministic in the seed:
/// identical seeds give bit-identical ensembles.
MeasureEnsemble generate_ensemble(ManifoldPtr m, int n_atoms,
                                  EnsembleFamily family, std::uint64_t seed);

double total_variation(const Measure& a, const Measure& b);

}  // namespace w2w
