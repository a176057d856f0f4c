#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

namespace w2w {

enum class ManifoldKind { circle, flat_torus, sphere };

std::string to_string(ManifoldKind kind);
ManifoldKind manifold_kind_from_string(const std::string& s);

/// Tangent vector attached to a node, stored as chart-coordinate velocity:
/// a scalar for the circle, a 2-vector for the torus, and an ambient 3-vector
/// tangent to the unit sphere.
struct TangentVector {
  int base = 0;
  Eigen::VectorXd components;

  double norm() const { return components.norm(); }
};

/// One tangent vector per node, stored row-wise (num_nodes x chart_dim).
struct VectorField {
  Eigen::MatrixXd components;
  std::string label;

  TangentVector at(int node) const {
    return TangentVector{node, components.row(node).transpose()};
  }
};

/// Scalar function sampled at the nodes together with its manifold gradient.
/// The gradient makes off-node evaluation first-order consistent: scalar
/// interpolation is cubic Hermite on the circle/torus and a gradient-corrected
/// barycentric blend on the sphere.
struct NodeFunction {
  Eigen::VectorXd values;
  VectorField gradient;
  std::string label;
};

struct InterpolationWeight {
  int node;
  double weight;
};

/// Discretization of a compact manifold: a fixed node set with exact chart
/// coordinates, a dense geodesic distance matrix, exponential/logarithm maps,
/// and flows of node-sampled vector fields.
///
/// Kinds:
///  - circle(n): angles i/n on the circumference-1 circle; distances are
///    min(|i-j|, n-|i-j|)/n exactly.
///  - flat_torus(nu, nv): grid (a/nu, b/nv) on [0,1)^2 with per-axis wrap.
///  - sphere(vertices, faces): triangulated unit sphere; distances are
///    shortest paths along mesh edges weighted by great-circle length, while
///    exp/log use exact great circles on the embedded coordinates.
class DiscreteManifold {
 public:
  static std::shared_ptr<const DiscreteManifold> circle(int n);
  static std::shared_ptr<const DiscreteManifold> flat_torus(int n_u, int n_v);
  static std::shared_ptr<const DiscreteManifold> sphere(Eigen::MatrixXd vertices,
                                                        Eigen::MatrixXi faces);
  /// Icosahedron subdivided `subdivisions` times and projected to the sphere
  /// (12, 42, 162, ... vertices).
  static std::shared_ptr<const DiscreteManifold> icosphere(int subdivisions);
  /// Loads a triangle mesh in OFF format and normalizes vertices to the unit
  /// sphere. Throws std::invalid_argument on malformed input.
  static std::shared_ptr<const DiscreteManifold> sphere_from_off(
      const std::string& path);

  ManifoldKind kind() const { return kind_; }
  int num_nodes() const { return static_cast<int>(nodes_.rows()); }
  int chart_dim() const { return static_cast<int>(nodes_.cols()); }

  /// Chart coordinates of node i.
  Eigen::VectorXd node(int i) const { return nodes_.row(i).transpose(); }
  const Eigen::MatrixXd& nodes() const { return nodes_; }

  /// Geodesic distance between nodes; symmetric, zero on the diagonal,
  /// satisfies the triangle inequality.
  double geodesic_distance(int i, int j) const;
  const Eigen::MatrixXd& distance_matrix() const { return dist_; }

  double injectivity_radius() const { return inj_radius_; }
  double diameter() const { return diameter_; }
  /// Mesh scale: 1/n for the circle, max(1/nu, 1/nv) for the torus, the
  /// longest edge for a sphere mesh.
  double grid_spacing() const { return spacing_; }

  /// Follows the geodesic from the base node with the given initial velocity
  /// for unit time. Exact (up to rounding) for any step on the circle/torus;
  /// on the sphere |v| > pi raises std::domain_error.
  Eigen::VectorXd exp_map(const TangentVector& v) const;

  /// Initial velocity of the minimizing geodesic from node i to node j, so
  /// that exp_map(log_map(i, j)) lands on node j. Raises std::domain_error
  /// when geodesic_distance(i, j) >= injectivity_radius() (cut locus).
  TangentVector log_map(int i, int j) const;

  /// Nodes and convex weights used to deposit mass at an off-node point: the
  /// two bracketing nodes on the circle, the four cell corners on the torus,
  /// the containing face's vertices on the sphere.
  std::vector<InterpolationWeight> interpolation_weights(
      const Eigen::VectorXd& point) const;

  /// Vector field at an arbitrary point. Circle/torus use cyclic Catmull-Rom
  /// interpolation per component, which reproduces node values exactly and is
  /// C^1 across the grid, so flow-based finite differences stay second-order
  /// accurate. The sphere uses a barycentric blend projected to the tangent
  /// plane (C^0 across faces).
  Eigen::VectorXd vector_field_at(const VectorField& w,
                                  const Eigen::VectorXd& point) const;

  /// Scalar value of a NodeFunction at an arbitrary point. Reproduces node
  /// values exactly and (on circle/torus) node gradients exactly; constants
  /// are reproduced without rounding.
  double scalar_at(const NodeFunction& f, const Eigen::VectorXd& point) const;

  /// Chart gradient of the scalar interpolant at an arbitrary point.
  Eigen::VectorXd scalar_gradient_at(const NodeFunction& f,
                                     const Eigen::VectorXd& point) const;

  /// Integrates dx/dt = w(x) from x0 for time t (either sign) with classical
  /// RK4 at fixed step h = min(0.01, |t|/100). t = 0 returns x0 unchanged.
  Eigen::VectorXd integrate_flow(const VectorField& w, double t,
                                 const Eigen::VectorXd& x0) const;

  /// integrate_flow applied to every node; returns num_nodes x chart_dim.
  Eigen::MatrixXd flow_all_nodes(const VectorField& w, double t) const;

  int nearest_node(const Eigen::VectorXd& point) const;

  /// Structural equality of the discretization (kind, size, node layout).
  bool same_discretization(const DiscreteManifold& other) const;

  // Kind-specific accessors used by serialization.
  int torus_nu() const { return n_u_; }
  int torus_nv() const { return n_v_; }
  const Eigen::MatrixXi& sphere_faces() const { return faces_; }

 private:
  DiscreteManifold() = default;
  void finalize_sphere();

  Eigen::VectorXd flow_rhs(const VectorField& w, const Eigen::VectorXd& x) const;
  Eigen::Vector3d locate_face(const Eigen::Vector3d& p, int& face) const;

  ManifoldKind kind_ = ManifoldKind::circle;
  Eigen::MatrixXd nodes_;   // num_nodes x chart_dim
  Eigen::MatrixXd dist_;    // dense geodesic distances
  double inj_radius_ = 0.0;
  double diameter_ = 0.0;
  double spacing_ = 0.0;

  int n_u_ = 0, n_v_ = 0;   // torus resolution (circle uses n_u_)

  Eigen::MatrixXi faces_;                       // sphere mesh faces
  std::vector<Eigen::Matrix3d> face_inverse_;   // cached [v0 v1 v2]^-1
};

using ManifoldPtr = std::shared_ptr<const DiscreteManifold>;

}  // namespace w2w
