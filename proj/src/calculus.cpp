#include "w2w/calculus.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "w2w/rng.hpp"

namespace w2w {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_fields_compatible(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b, Eigen::Index n,
                               Eigen::Index dim) {
  if (a.rows() != n || b.rows() != n || a.cols() != dim || b.cols() != dim) {
    throw std::invalid_argument("vector field shape does not match manifold");
  }
}

}  // namespace

CylinderFunction make_cylinder_function(
    const DiscreteManifold& m,
    std::function<double(const Eigen::VectorXd&)> outer,
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> outer_gradient,
    std::vector<NodeFunction> inner, std::string label) {
  if (!outer || !outer_gradient) {
    throw std::invalid_argument("cylinder function needs outer F and dF");
  }
  if (inner.empty()) {
    throw std::invalid_argument("cylinder function needs at least one inner function");
  }
  const Eigen::Index n = m.num_nodes();
  const Eigen::Index dim = m.chart_dim();
  for (const NodeFunction& f : inner) {
    if (f.values.size() != n || f.gradient.components.rows() != n ||
        f.gradient.components.cols() != dim) {
      throw std::invalid_argument("inner function shape does not match manifold");
    }
  }

  // The arguments of F are convex combinations of node values, so each
  // coordinate of a reachable argument lies between the min and max of the
  // corresponding inner function. Sample that box and compare the supplied
  // gradient with central differences.
  const int k = static_cast<int>(inner.size());
  Eigen::VectorXd lo(k), hi(k);
  for (int c = 0; c < k; ++c) {
    lo(c) = inner[c].values.minCoeff();
    hi(c) = inner[c].values.maxCoeff();
  }
  SeededRng rng(0x5ca1ab1eULL);
  const int samples = 8;
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd a(k);
    for (int c = 0; c < k; ++c) {
      a(c) = (s == 0) ? 0.5 * (lo(c) + hi(c)) : rng.uniform(lo(c), hi(c));
    }
    const Eigen::VectorXd g = outer_gradient(a);
    if (g.size() != k) {
      throw std::invalid_argument("outer gradient has wrong dimension");
    }
    for (int c = 0; c < k; ++c) {
      const double h = 1e-5 * (1.0 + std::abs(a(c)));
      Eigen::VectorXd ap = a, am = a;
      ap(c) += h;
      am(c) -= h;
      const double fd = (outer(ap) - outer(am)) / (2.0 * h);
      if (std::abs(fd - g(c)) > 1e-6 * (1.0 + std::abs(g(c)))) {
        throw std::invalid_argument(
            "outer gradient disagrees with finite differences of F");
      }
    }
  }

  CylinderFunction u;
  u.outer = std::move(outer);
  u.outer_gradient = std::move(outer_gradient);
  u.inner = std::move(inner);
  u.label = std::move(label);
  return u;
}

double potential_energy(const Eigen::VectorXd& f, const Measure& mu) {
  if (f.size() != mu.weights().size()) {
    throw std::invalid_argument("potential energy: size mismatch");
  }
  return f.dot(mu.weights());
}

static Eigen::VectorXd inner_integrals(const CylinderFunction& u,
                                       const Measure& mu) {
  Eigen::VectorXd a(static_cast<Eigen::Index>(u.inner.size()));
  for (std::size_t c = 0; c < u.inner.size(); ++c) {
    a(static_cast<Eigen::Index>(c)) =
        potential_energy(u.inner[c].values, mu);
  }
  return a;
}

double cylinder_value(const CylinderFunction& u, const Measure& mu) {
  return u.outer(inner_integrals(u, mu));
}

double cylinder_value_along_flow(const CylinderFunction& u, const Measure& mu,
                                 const VectorField& w, double t) {
  const DiscreteManifold& m = mu.manifold();
  const Eigen::MatrixXd pos = m.flow_all_nodes(w, t);
  const Eigen::VectorXd& wt = mu.weights();
  Eigen::VectorXd a(static_cast<Eigen::Index>(u.inner.size()));
  for (std::size_t c = 0; c < u.inner.size(); ++c) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < wt.size(); ++i) {
      acc += wt(i) * m.scalar_at(u.inner[c], pos.row(i).transpose());
    }
    a(static_cast<Eigen::Index>(c)) = acc;
  }
  return u.outer(a);
}

WassersteinGradient cylinder_gradient(const CylinderFunction& u,
                                      const Measure& mu) {
  const Eigen::VectorXd a = inner_integrals(u, mu);
  const Eigen::VectorXd g = u.outer_gradient(a);
  const DiscreteManifold& m = mu.manifold();
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(m.num_nodes(), m.chart_dim());
  for (std::size_t c = 0; c < u.inner.size(); ++c) {
    comp += g(static_cast<Eigen::Index>(c)) *
            u.inner[c].gradient.components;
  }
  return WassersteinGradient{VectorField{std::move(comp), "grad " + u.label},
                             mu};
}

double tangent_inner_product(const VectorField& a, const VectorField& b,
                             const Measure& mu) {
  const DiscreteManifold& m = mu.manifold();
  require_fields_compatible(a.components, b.components, m.num_nodes(),
                            m.chart_dim());
  return ((a.components.array() * b.components.array()).rowwise().sum() *
          mu.weights().array())
      .sum();
}

double directional_derivative(const CylinderFunction& u, const Measure& mu,
                              const VectorField& w) {
  return tangent_inner_product(cylinder_gradient(u, mu).field, w, mu);
}

DerivativeCheckReport wasserstein_derivative_check(const Measure& mu,
                                                   const Measure& nu,
                                                   const VectorField& w,
                                                   double fd_step) {
  if (!(fd_step > 0.0)) {
    throw std::invalid_argument("fd_step must be positive");
  }
  InnerSolution sol = solve_exact(mu, nu);
  McCannMap mm = extract_mccann_map(sol.plan);
  // The optimal displacement field is -grad phi, so
  // d/dt W2^2(mu_t, nu)|_0 = 2 <grad phi, w>_mu = -2 <field, w>_mu.
  const double formula = -2.0 * tangent_inner_product(mm.field, w, mu);
  const Measure mp = flow_pushforward(mu, w, fd_step);
  const Measure mm_ = flow_pushforward(mu, w, -fd_step);
  const double fd =
      (w2_squared(mp, nu) - w2_squared(mm_, nu)) / (2.0 * fd_step);
  DerivativeCheckReport rep;
  rep.formula_value = formula;
  rep.fd_value = fd;
  rep.residual = std::abs(formula - fd);
  rep.fd_step = fd_step;
  return rep;
}

double continuity_residual(const Measure& mu, const VectorField& w,
                           const std::vector<double>& times,
                           const std::vector<NodeFunction>& test_functions,
                           double fd_step) {
  if (!(fd_step > 0.0)) {
    throw std::invalid_argument("fd_step must be positive");
  }
  if (times.empty() || test_functions.empty()) {
    throw std::invalid_argument("continuity check needs times and test functions");
  }
  const DiscreteManifold& m = mu.manifold();
  const Eigen::VectorXd& wt = mu.weights();
  double worst = 0.0;
  for (double t : times) {
    const Eigen::MatrixXd pos = m.flow_all_nodes(w, t);
    const Eigen::MatrixXd pos_p = m.flow_all_nodes(w, t + fd_step);
    const Eigen::MatrixXd pos_m = m.flow_all_nodes(w, t - fd_step);
    for (const NodeFunction& f : test_functions) {
      double ip = 0.0, im = 0.0, rhs = 0.0;
      for (Eigen::Index i = 0; i < wt.size(); ++i) {
        if (wt(i) == 0.0) continue;
        ip += wt(i) * m.scalar_at(f, pos_p.row(i).transpose());
        im += wt(i) * m.scalar_at(f, pos_m.row(i).transpose());
        const Eigen::VectorXd x = pos.row(i).transpose();
        const Eigen::VectorXd gf = m.scalar_gradient_at(f, x);
        const Eigen::VectorXd xi = m.vector_field_at(w, x);
        rhs += wt(i) * gf.dot(xi);
      }
      const double lhs = (ip - im) / (2.0 * fd_step);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

double lipschitz_check(const std::function<double(const Measure&)>& U,
                       const std::vector<std::pair<Measure, Measure>>& pairs) {
  if (!U) throw std::invalid_argument("lipschitz_check: empty functional");
  double best = 0.0;
  bool any = false;
  for (const auto& [a, b] : pairs) {
    const double d = w2_distance(a, b);
    if (d < 1e-12) continue;
    any = true;
    best = std::max(best, std::abs(U(a) - U(b)) / d);
  }
  if (!any) {
    throw std::invalid_argument("lipschitz_check: no separated pairs in sample");
  }
  return best;
}

std::vector<VectorField> fourier_field_family(const DiscreteManifold& m,
                                              int max_frequency,
                                              bool include_constant) {
  if (max_frequency < 0) {
    throw std::invalid_argument("max_frequency must be nonnegative");
  }
  const Eigen::Index n = m.num_nodes();
  std::vector<VectorField> out;
  switch (m.kind()) {
    case ManifoldKind::circle: {
      if (include_constant) {
        out.push_back({Eigen::MatrixXd::Ones(n, 1), "const"});
      }
      for (int k = 1; k <= max_frequency; ++k) {
        Eigen::MatrixXd s(n, 1), c(n, 1);
        for (Eigen::Index i = 0; i < n; ++i) {
          const double th = 2.0 * kPi * k * m.node(static_cast<int>(i))(0);
          s(i, 0) = std::sin(th);
          c(i, 0) = std::cos(th);
        }
        out.push_back({s, "sin" + std::to_string(k)});
        out.push_back({c, "cos" + std::to_string(k)});
      }
      break;
    }
    case ManifoldKind::flat_torus: {
      if (include_constant) {
        Eigen::MatrixXd cu = Eigen::MatrixXd::Zero(n, 2);
        cu.col(0).setOnes();
        Eigen::MatrixXd cv = Eigen::MatrixXd::Zero(n, 2);
        cv.col(1).setOnes();
        out.push_back({cu, "const_u"});
        out.push_back({cv, "const_v"});
      }
      for (int k = 1; k <= max_frequency; ++k) {
        Eigen::MatrixXd su = Eigen::MatrixXd::Zero(n, 2);
        Eigen::MatrixXd cu = Eigen::MatrixXd::Zero(n, 2);
        Eigen::MatrixXd sv = Eigen::MatrixXd::Zero(n, 2);
        Eigen::MatrixXd cv = Eigen::MatrixXd::Zero(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::VectorXd x = m.node(static_cast<int>(i));
          su(i, 0) = std::sin(2.0 * kPi * k * x(0));
          cu(i, 0) = std::cos(2.0 * kPi * k * x(0));
          sv(i, 1) = std::sin(2.0 * kPi * k * x(1));
          cv(i, 1) = std::cos(2.0 * kPi * k * x(1));
        }
        const std::string kk = std::to_string(k);
        out.push_back({su, "sin" + kk + "_u"});
        out.push_back({cu, "cos" + kk + "_u"});
        out.push_back({sv, "sin" + kk + "_v"});
        out.push_back({cv, "cos" + kk + "_v"});
      }
      break;
    }
    case ManifoldKind::sphere: {
      // Gradients of the coordinate functions and the rotation generators
      // span a six-dimensional family of smooth tangent fields; frequency
      // truncation does not apply here.
      for (int axis = 0; axis < 3; ++axis) {
        Eigen::MatrixXd grad(n, 3), rot(n, 3);
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e(axis) = 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::Vector3d x = m.node(static_cast<int>(i));
          grad.row(i) = (e - e.dot(x) * x).transpose();
          rot.row(i) = e.cross(x).transpose();
        }
        const char name = static_cast<char>('x' + axis);
        out.push_back({grad, std::string("grad_") + name});
        out.push_back({rot, std::string("rot_") + name});
      }
      break;
    }
  }
  return out;
}

std::vector<NodeFunction> harmonic_node_functions(const DiscreteManifold& m,
                                                  int max_frequency,
                                                  bool include_constant) {
  if (max_frequency < 0) {
    throw std::invalid_argument("max_frequency must be nonnegative");
  }
  const Eigen::Index n = m.num_nodes();
  const Eigen::Index dim = m.chart_dim();
  std::vector<NodeFunction> out;
  auto push = [&](Eigen::VectorXd vals, Eigen::MatrixXd grad,
                  std::string name) {
    NodeFunction f;
    f.values = std::move(vals);
    f.gradient = VectorField{std::move(grad), "grad " + name};
    f.label = std::move(name);
    out.push_back(std::move(f));
  };
  if (include_constant) {
    push(Eigen::VectorXd::Ones(n), Eigen::MatrixXd::Zero(n, dim), "const");
  }
  switch (m.kind()) {
    case ManifoldKind::circle: {
      for (int k = 1; k <= max_frequency; ++k) {
        Eigen::VectorXd s(n), c(n);
        Eigen::MatrixXd gs(n, 1), gc(n, 1);
        const double om = 2.0 * kPi * k;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double th = om * m.node(static_cast<int>(i))(0);
          s(i) = std::sin(th);
          c(i) = std::cos(th);
          gs(i, 0) = om * std::cos(th);
          gc(i, 0) = -om * std::sin(th);
        }
        push(s, gs, "sin" + std::to_string(k));
        push(c, gc, "cos" + std::to_string(k));
      }
      break;
    }
    case ManifoldKind::flat_torus: {
      for (int k = 1; k <= max_frequency; ++k) {
        Eigen::VectorXd su(n), cu(n), sv(n), cv(n);
        Eigen::MatrixXd gsu = Eigen::MatrixXd::Zero(n, 2);
        Eigen::MatrixXd gcu = Eigen::MatrixXd::Zero(n, 2);
        Eigen::MatrixXd gsv = Eigen::MatrixXd::Zero(n, 2);
        Eigen::MatrixXd gcv = Eigen::MatrixXd::Zero(n, 2);
        const double om = 2.0 * kPi * k;
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::VectorXd x = m.node(static_cast<int>(i));
          su(i) = std::sin(om * x(0));
          cu(i) = std::cos(om * x(0));
          sv(i) = std::sin(om * x(1));
          cv(i) = std::cos(om * x(1));
          gsu(i, 0) = om * std::cos(om * x(0));
          gcu(i, 0) = -om * std::sin(om * x(0));
          gsv(i, 1) = om * std::cos(om * x(1));
          gcv(i, 1) = -om * std::sin(om * x(1));
        }
        const std::string kk = std::to_string(k);
        push(su, gsu, "sin" + kk + "_u");
        push(cu, gcu, "cos" + kk + "_u");
        push(sv, gsv, "sin" + kk + "_v");
        push(cv, gcv, "cos" + kk + "_v");
      }
      break;
    }
    case ManifoldKind::sphere: {
      // Coordinate functions restricted to the sphere; their tangential
      // gradients are exact.
      for (int axis = 0; axis < 3; ++axis) {
        Eigen::VectorXd vals(n);
        Eigen::MatrixXd grad(n, 3);
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e(axis) = 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::Vector3d x = m.node(static_cast<int>(i));
          vals(i) = x(axis);
          grad.row(i) = (e - x(axis) * x).transpose();
        }
        push(vals, grad, std::string("coord_") + static_cast<char>('x' + axis));
      }
      break;
    }
  }
  return out;
}

std::vector<VectorField> orthonormalize_fields(
    const std::vector<VectorField>& fields, const Measure& mu,
    double drop_tolerance) {
  std::vector<VectorField> basis;
  for (const VectorField& f : fields) {
    Eigen::MatrixXd r = f.components;
    const double orig =
        std::sqrt(tangent_inner_product(f, f, mu));
    VectorField rf{r, f.label};
    for (const VectorField& e : basis) {
      const double c = tangent_inner_product(rf, e, mu);
      rf.components -= c * e.components;
    }
    // Second pass stabilizes against cancellation in near-dependent sets.
    for (const VectorField& e : basis) {
      const double c = tangent_inner_product(rf, e, mu);
      rf.components -= c * e.components;
    }
    const double nrm = std::sqrt(tangent_inner_product(rf, rf, mu));
    if (nrm <= drop_tolerance * (1.0 + orig)) continue;
    rf.components /= nrm;
    basis.push_back(std::move(rf));
  }
  return basis;
}

}  // namespace w2w
