#include "w2w/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace w2w {

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap01(double x) {
  double r = x - std::floor(x);
  if (r >= 1.0) r -= 1.0;
  if (r < 0.0) r += 1.0;
  return r;
}

// Cubic Hermite basis on [0,1] and derivatives.
double h01(double s) { return s * s * (3.0 - 2.0 * s); }
double h10(double s) { return s * (s - 1.0) * (s - 1.0); }
double h11(double s) { return s * s * (s - 1.0); }
double dh01(double s) { return 6.0 * s * (1.0 - s); }
double dh10(double s) { return 3.0 * s * s - 4.0 * s + 1.0; }
double dh11(double s) { return 3.0 * s * s - 2.0 * s; }
double h00(double s) { return 1.0 + s * s * (2.0 * s - 3.0); }
double dh00(double s) { return 6.0 * s * (s - 1.0); }

// Locates x (already in units of grid cells) on a periodic grid of n cells.
// Snaps to the node when within 1e-9 of it so that maps that land exactly on
// nodes reproduce node data without rounding residue.
void locate_periodic(double cells, int n, int& i0, double& frac) {
  double s = cells - std::floor(cells / n) * n;
  if (s >= n) s -= n;
  if (s < 0) s += n;
  i0 = static_cast<int>(std::floor(s));
  if (i0 >= n) i0 = n - 1;
  frac = s - i0;
  if (frac < 1e-9) {
    frac = 0.0;
  } else if (frac > 1.0 - 1e-9) {
    i0 = (i0 + 1) % n;
    frac = 0.0;
  }
}

}  // namespace

std::string to_string(ManifoldKind kind) {
  switch (kind) {
    case ManifoldKind::circle: return "circle";
    case ManifoldKind::flat_torus: return "flat_torus";
    case ManifoldKind::sphere: return "sphere";
  }
  return "unknown";
}

ManifoldKind manifold_kind_from_string(const std::string& s) {
  if (s == "circle") return ManifoldKind::circle;
  if (s == "flat_torus") return ManifoldKind::flat_torus;
  if (s == "sphere") return ManifoldKind::sphere;
  throw std::invalid_argument("unknown manifold kind: " + s);
}

std::shared_ptr<const DiscreteManifold> DiscreteManifold::circle(int n) {
  if (n < 2) throw std::invalid_argument("circle needs at least 2 nodes");
  auto m = std::shared_ptr<DiscreteManifold>(new DiscreteManifold());
  m->kind_ = ManifoldKind::circle;
  m->n_u_ = n;
  m->nodes_.resize(n, 1);
  for (int i = 0; i < n; ++i) m->nodes_(i, 0) = static_cast<double>(i) / n;
  m->dist_.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int k = std::abs(i - j);
      m->dist_(i, j) = static_cast<double>(std::min(k, n - k)) / n;
    }
  }
  m->inj_radius_ = 0.5;
  m->diameter_ = m->dist_.maxCoeff();
  m->spacing_ = 1.0 / n;
  return m;
}

std::shared_ptr<const DiscreteManifold> DiscreteManifold::flat_torus(int n_u,
                                                                     int n_v) {
  if (n_u < 2 || n_v < 2)
    throw std::invalid_argument("flat_torus needs at least 2 nodes per axis");
  auto m = std::shared_ptr<DiscreteManifold>(new DiscreteManifold());
  m->kind_ = ManifoldKind::flat_torus;
  m->n_u_ = n_u;
  m->n_v_ = n_v;
  int n = n_u * n_v;
  m->nodes_.resize(n, 2);
  for (int a = 0; a < n_u; ++a) {
    for (int b = 0; b < n_v; ++b) {
      m->nodes_(a * n_v + b, 0) = static_cast<double>(a) / n_u;
      m->nodes_(a * n_v + b, 1) = static_cast<double>(b) / n_v;
    }
  }
  m->dist_.resize(n, n);
  for (int i = 0; i < n; ++i) {
    int ai = i / n_v, bi = i % n_v;
    for (int j = 0; j < n; ++j) {
      int aj = j / n_v, bj = j % n_v;
      int ka = std::abs(ai - aj), kb = std::abs(bi - bj);
      double du = static_cast<double>(std::min(ka, n_u - ka)) / n_u;
      double dv = static_cast<double>(std::min(kb, n_v - kb)) / n_v;
      m->dist_(i, j) = std::hypot(du, dv);
    }
  }
  m->inj_radius_ = 0.5;
  m->diameter_ = m->dist_.maxCoeff();
  m->spacing_ = std::max(1.0 / n_u, 1.0 / n_v);
  return m;
}

std::shared_ptr<const DiscreteManifold> DiscreteManifold::sphere(
    Eigen::MatrixXd vertices, Eigen::MatrixXi faces) {
  if (vertices.rows() < 4 || vertices.cols() != 3)
    throw std::invalid_argument("sphere mesh needs >= 4 vertices with xyz");
  if (faces.rows() < 4 || faces.cols() != 3)
    throw std::invalid_argument("sphere mesh needs >= 4 triangular faces");
  auto m = std::shared_ptr<DiscreteManifold>(new DiscreteManifold());
  m->kind_ = ManifoldKind::sphere;
  m->nodes_ = std::move(vertices);
  m->faces_ = std::move(faces);
  m->finalize_sphere();
  return m;
}

void DiscreteManifold::finalize_sphere() {
  const int n = num_nodes();
  for (int i = 0; i < n; ++i) {
    double len = nodes_.row(i).norm();
    if (!(len > 1e-12))
      throw std::invalid_argument("sphere mesh vertex at the origin");
    nodes_.row(i) /= len;
  }
  const int nf = static_cast<int>(faces_.rows());
  face_inverse_.resize(nf);
  std::vector<std::vector<std::pair<int, double>>> adjacency(n);
  double max_edge = 0.0;
  auto edge_angle = [&](int a, int b) {
    double c = nodes_.row(a).dot(nodes_.row(b));
    c = std::clamp(c, -1.0, 1.0);
    return std::acos(c);
  };
  for (int f = 0; f < nf; ++f) {
    Eigen::Matrix3d basis;
    for (int k = 0; k < 3; ++k) {
      int v = faces_(f, k);
      if (v < 0 || v >= n)
        throw std::invalid_argument("sphere mesh face index out of range");
      basis.col(k) = nodes_.row(v).transpose();
    }
    if (std::abs(basis.determinant()) < 1e-12)
      throw std::invalid_argument("sphere mesh has a degenerate face");
    face_inverse_[f] = basis.inverse();
    for (int k = 0; k < 3; ++k) {
      int a = faces_(f, k), b = faces_(f, (k + 1) % 3);
      double w = edge_angle(a, b);
      max_edge = std::max(max_edge, w);
      adjacency[a].push_back({b, w});
      adjacency[b].push_back({a, w});
    }
  }
  // Dijkstra from every source over the edge graph.
  dist_.setConstant(n, n, std::numeric_limits<double>::infinity());
  for (int src = 0; src < n; ++src) {
    std::priority_queue<std::pair<double, int>,
                        std::vector<std::pair<double, int>>,
                        std::greater<>> pq;
    dist_(src, src) = 0.0;
    pq.push({0.0, src});
    while (!pq.empty()) {
      auto [d, node] = pq.top();
      pq.pop();
      if (d > dist_(src, node)) continue;
      for (auto [next, w] : adjacency[node]) {
        double nd = d + w;
        if (nd < dist_(src, next)) {
          dist_(src, next) = nd;
          pq.push({nd, next});
        }
      }
    }
  }
  double worst = dist_.maxCoeff();
  if (!std::isfinite(worst))
    throw std::invalid_argument("sphere mesh is not edge-connected");
  // Symmetrize the last bits (Dijkstra rounding is direction-dependent).
  dist_ = ((dist_ + dist_.transpose()) / 2.0).eval();
  inj_radius_ = kPi;
  diameter_ = dist_.maxCoeff();
  spacing_ = max_edge;
}

std::shared_ptr<const DiscreteManifold> DiscreteManifold::icosphere(
    int subdivisions) {
  if (subdivisions < 0 || subdivisions > 6)
    throw std::invalid_argument("icosphere subdivisions must be in [0, 6]");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Eigen::Vector3d v = (verts[a] + verts[b]).normalized();
      verts.push_back(v);
      int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (auto [a, b, c] : faces) {
      int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
      next.push_back({a, ab, ca});
      next.push_back({b, bc, ab});
      next.push_back({c, ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  Eigen::MatrixXd V(verts.size(), 3);
  for (size_t i = 0; i < verts.size(); ++i) V.row(i) = verts[i].transpose();
  Eigen::MatrixXi F(faces.size(), 3);
  for (size_t i = 0; i < faces.size(); ++i)
    F.row(i) << faces[i][0], faces[i][1], faces[i][2];
  return sphere(std::move(V), std::move(F));
}

std::shared_ptr<const DiscreteManifold> DiscreteManifold::sphere_from_off(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open OFF file: " + path);
  auto next_token = [&in, &path]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw std::invalid_argument("unexpected end of OFF file: " + path);
  };
  std::string header = next_token();
  if (header != "OFF")
    throw std::invalid_argument("not an OFF file (missing header): " + path);
  auto next_int = [&]() {
    std::string tok = next_token();
    try {
      return std::stoi(tok);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad integer '" + tok + "' in " + path);
    }
  };
  auto next_double = [&]() {
    std::string tok = next_token();
    try {
      return std::stod(tok);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad number '" + tok + "' in " + path);
    }
  };
  int nv = next_int(), nf = next_int();
  next_int();  // edge count, unused
  if (nv < 4 || nf < 4)
    throw std::invalid_argument("OFF mesh too small: " + path);
  Eigen::MatrixXd V(nv, 3);
  for (int i = 0; i < nv; ++i)
    for (int k = 0; k < 3; ++k) V(i, k) = next_double();
  Eigen::MatrixXi F(nf, 3);
  for (int f = 0; f < nf; ++f) {
    int deg = next_int();
    if (deg != 3)
      throw std::invalid_argument("OFF mesh has a non-triangular face: " + path);
    for (int k = 0; k < 3; ++k) F(f, k) = next_int();
  }
  return sphere(std::move(V), std::move(F));
}

double DiscreteManifold::geodesic_distance(int i, int j) const {
  if (i < 0 || j < 0 || i >= num_nodes() || j >= num_nodes())
    throw std::invalid_argument("geodesic_distance: node index out of range");
  return dist_(i, j);
}

Eigen::VectorXd DiscreteManifold::exp_map(const TangentVector& v) const {
  if (v.base < 0 || v.base >= num_nodes())
    throw std::invalid_argument("exp_map: base node out of range");
  if (v.components.size() != chart_dim())
    throw std::invalid_argument("exp_map: wrong tangent dimension");
  if (!v.components.allFinite())
    throw std::invalid_argument("exp_map: non-finite components");
  switch (kind_) {
    case ManifoldKind::circle: {
      Eigen::VectorXd p(1);
      p(0) = wrap01(nodes_(v.base, 0) + v.components(0));
      return p;
    }
    case ManifoldKind::flat_torus: {
      Eigen::VectorXd p(2);
      p(0) = wrap01(nodes_(v.base, 0) + v.components(0));
      p(1) = wrap01(nodes_(v.base, 1) + v.components(1));
      return p;
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d x = nodes_.row(v.base).transpose();
      Eigen::Vector3d w = v.components;
      w -= w.dot(x) * x;  // enforce tangency
      double theta = w.norm();
      if (theta > kPi)
        throw std::domain_error("exp_map: |v| exceeds pi on the sphere");
      if (theta < 1e-15) return x;
      Eigen::Vector3d p = std::cos(theta) * x + std::sin(theta) * (w / theta);
      return p.normalized();
    }
  }
  throw std::logic_error("unreachable");
}

TangentVector DiscreteManifold::log_map(int i, int j) const {
  if (i < 0 || j < 0 || i >= num_nodes() || j >= num_nodes())
    throw std::invalid_argument("log_map: node index out of range");
  if (dist_(i, j) >= inj_radius_)
    throw std::domain_error("log_map: nodes at or beyond the cut locus");
  TangentVector out;
  out.base = i;
  switch (kind_) {
    case ManifoldKind::circle: {
      int n = n_u_;
      int k = ((j - i) % n + n) % n;
      if (2 * k > n) k -= n;
      out.components.resize(1);
      out.components(0) = static_cast<double>(k) / n;
      return out;
    }
    case ManifoldKind::flat_torus: {
      int ai = i / n_v_, bi = i % n_v_;
      int aj = j / n_v_, bj = j % n_v_;
      int ka = ((aj - ai) % n_u_ + n_u_) % n_u_;
      int kb = ((bj - bi) % n_v_ + n_v_) % n_v_;
      if (2 * ka > n_u_) ka -= n_u_;
      if (2 * kb > n_v_) kb -= n_v_;
      out.components.resize(2);
      out.components(0) = static_cast<double>(ka) / n_u_;
      out.components(1) = static_cast<double>(kb) / n_v_;
      return out;
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d x = nodes_.row(i).transpose();
      Eigen::Vector3d y = nodes_.row(j).transpose();
      double c = std::clamp(x.dot(y), -1.0, 1.0);
      double theta = std::acos(c);
      out.components = Eigen::Vector3d::Zero();
      if (theta > 1e-15) {
        Eigen::Vector3d dir = y - c * x;
        double len = dir.norm();
        if (len < 1e-14)
          throw std::domain_error("log_map: antipodal pair on the sphere");
        out.components = theta * (dir / len);
      }
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<InterpolationWeight> DiscreteManifold::interpolation_weights(
    const Eigen::VectorXd& point) const {
  if (point.size() != chart_dim())
    throw std::invalid_argument("interpolation_weights: wrong point dimension");
  switch (kind_) {
    case ManifoldKind::circle: {
      int i0;
      double frac;
      locate_periodic(point(0) * n_u_, n_u_, i0, frac);
      if (frac == 0.0) return {{i0, 1.0}};
      return {{i0, 1.0 - frac}, {(i0 + 1) % n_u_, frac}};
    }
    case ManifoldKind::flat_torus: {
      int a0, b0;
      double fu, fv;
      locate_periodic(point(0) * n_u_, n_u_, a0, fu);
      locate_periodic(point(1) * n_v_, n_v_, b0, fv);
      int a1 = (a0 + 1) % n_u_, b1 = (b0 + 1) % n_v_;
      std::vector<InterpolationWeight> out;
      auto push = [&](int a, int b, double w) {
        if (w != 0.0) out.push_back({a * n_v_ + b, w});
      };
      push(a0, b0, (1.0 - fu) * (1.0 - fv));
      push(a1, b0, fu * (1.0 - fv));
      push(a0, b1, (1.0 - fu) * fv);
      push(a1, b1, fu * fv);
      return out;
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d p = point;
      p.normalize();
      int face;
      Eigen::Vector3d lam = locate_face(p, face);
      if (lam.maxCoeff() > 1.0 - 1e-9) {
        int k;
        lam.maxCoeff(&k);
        return {{faces_(face, k), 1.0}};
      }
      std::vector<InterpolationWeight> out;
      for (int k = 0; k < 3; ++k)
        if (lam(k) > 1e-12) out.push_back({faces_(face, k), lam(k)});
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

namespace {

// Uniform Catmull-Rom segment between p0 (s = 0) and p1 (s = 1) with
// neighbors pm and p2. Difference form: exact at s = 0 and exact for
// constant data, C^1 where segments meet.
Eigen::VectorXd catmull_rom(const Eigen::VectorXd& pm, const Eigen::VectorXd& p0,
                            const Eigen::VectorXd& p1, const Eigen::VectorXd& p2,
                            double s) {
  return p0 + 0.5 * s *
                  ((p1 - pm) +
                   s * ((2.0 * pm - 5.0 * p0 + 4.0 * p1 - p2) +
                        s * (3.0 * (p0 - p1) + p2 - pm)));
}

}  // namespace

Eigen::VectorXd DiscreteManifold::vector_field_at(
    const VectorField& w, const Eigen::VectorXd& point) const {
  if (w.components.rows() != num_nodes() || w.components.cols() != chart_dim())
    throw std::invalid_argument("vector_field_at: field has wrong shape");
  switch (kind_) {
    case ManifoldKind::circle: {
      int i0;
      double frac;
      locate_periodic(point(0) * n_u_, n_u_, i0, frac);
      auto row = [&](int i) {
        return w.components.row(((i % n_u_) + n_u_) % n_u_).transpose().eval();
      };
      return catmull_rom(row(i0 - 1), row(i0), row(i0 + 1), row(i0 + 2), frac);
    }
    case ManifoldKind::flat_torus: {
      int a0, b0;
      double fu, fv;
      locate_periodic(point(0) * n_u_, n_u_, a0, fu);
      locate_periodic(point(1) * n_v_, n_v_, b0, fv);
      auto row = [&](int a, int b) {
        const int aa = ((a % n_u_) + n_u_) % n_u_;
        const int bb = ((b % n_v_) + n_v_) % n_v_;
        return w.components.row(aa * n_v_ + bb).transpose().eval();
      };
      // Tensor-product Catmull-Rom: interpolate along v in four u-rows, then
      // along u.
      Eigen::VectorXd r[4];
      for (int da = -1; da <= 2; ++da) {
        r[da + 1] = catmull_rom(row(a0 + da, b0 - 1), row(a0 + da, b0),
                                row(a0 + da, b0 + 1), row(a0 + da, b0 + 2), fv);
      }
      return catmull_rom(r[0], r[1], r[2], r[3], fu);
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d p = point;
      p.normalize();
      int face;
      Eigen::Vector3d lam = locate_face(p, face);
      Eigen::Vector3d v0 = w.components.row(faces_(face, 0)).transpose();
      Eigen::Vector3d v1 = w.components.row(faces_(face, 1)).transpose();
      Eigen::Vector3d v2 = w.components.row(faces_(face, 2)).transpose();
      Eigen::Vector3d r = v0 + lam(1) * (v1 - v0) + lam(2) * (v2 - v0);
      r -= r.dot(p) * p;
      return r;
    }
  }
  throw std::logic_error("unreachable");
}

double DiscreteManifold::scalar_at(const NodeFunction& f,
                                   const Eigen::VectorXd& point) const {
  if (f.values.size() != num_nodes())
    throw std::invalid_argument("scalar_at: values have wrong size");
  switch (kind_) {
    case ManifoldKind::circle: {
      int i0;
      double s;
      locate_periodic(point(0) * n_u_, n_u_, i0, s);
      int i1 = (i0 + 1) % n_u_;
      double h = 1.0 / n_u_;
      double f0 = f.values(i0), f1 = f.values(i1);
      double m0 = f.gradient.components(i0, 0), m1 = f.gradient.components(i1, 0);
      return f0 + (f1 - f0) * h01(s) + h * (m0 * h10(s) + m1 * h11(s));
    }
    case ManifoldKind::flat_torus: {
      int a0, b0;
      double su, sv;
      locate_periodic(point(0) * n_u_, n_u_, a0, su);
      locate_periodic(point(1) * n_v_, n_v_, b0, sv);
      int a1 = (a0 + 1) % n_u_, b1 = (b0 + 1) % n_v_;
      double hu = 1.0 / n_u_, hv = 1.0 / n_v_;
      int c00 = a0 * n_v_ + b0, c10 = a1 * n_v_ + b0;
      int c01 = a0 * n_v_ + b1, c11 = a1 * n_v_ + b1;
      double f00 = f.values(c00);
      // Value part (bicubic with zero cross derivatives), difference form so
      // constants are exact.
      double val = f00 + (f.values(c10) - f00) * h01(su) * h00(sv) +
                   (f.values(c01) - f00) * h00(su) * h01(sv) +
                   (f.values(c11) - f00) * h01(su) * h01(sv);
      auto mu = [&](int c) { return f.gradient.components(c, 0); };
      auto mv = [&](int c) { return f.gradient.components(c, 1); };
      val += hu * (mu(c00) * h10(su) * h00(sv) + mu(c10) * h11(su) * h00(sv) +
                   mu(c01) * h10(su) * h01(sv) + mu(c11) * h11(su) * h01(sv));
      val += hv * (mv(c00) * h00(su) * h10(sv) + mv(c10) * h01(su) * h10(sv) +
                   mv(c01) * h00(su) * h11(sv) + mv(c11) * h01(su) * h11(sv));
      return val;
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d p = point;
      p.normalize();
      int face;
      Eigen::Vector3d lam = locate_face(p, face);
      int v0 = faces_(face, 0), v1 = faces_(face, 1), v2 = faces_(face, 2);
      double f0 = f.values(v0);
      double val = f0 + lam(1) * (f.values(v1) - f0) + lam(2) * (f.values(v2) - f0);
      for (int k = 0; k < 3; ++k) {
        int v = faces_(face, k);
        Eigen::Vector3d g = f.gradient.components.row(v).transpose();
        Eigen::Vector3d d = p - nodes_.row(v).transpose();
        val += lam(k) * g.dot(d);
      }
      return val;
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::VectorXd DiscreteManifold::scalar_gradient_at(
    const NodeFunction& f, const Eigen::VectorXd& point) const {
  switch (kind_) {
    case ManifoldKind::circle: {
      int i0;
      double s;
      locate_periodic(point(0) * n_u_, n_u_, i0, s);
      int i1 = (i0 + 1) % n_u_;
      double h = 1.0 / n_u_;
      double f0 = f.values(i0), f1 = f.values(i1);
      double m0 = f.gradient.components(i0, 0), m1 = f.gradient.components(i1, 0);
      Eigen::VectorXd g(1);
      g(0) = (f1 - f0) * dh01(s) / h + m0 * dh10(s) + m1 * dh11(s);
      return g;
    }
    case ManifoldKind::flat_torus: {
      int a0, b0;
      double su, sv;
      locate_periodic(point(0) * n_u_, n_u_, a0, su);
      locate_periodic(point(1) * n_v_, n_v_, b0, sv);
      int a1 = (a0 + 1) % n_u_, b1 = (b0 + 1) % n_v_;
      double hu = 1.0 / n_u_, hv = 1.0 / n_v_;
      int c00 = a0 * n_v_ + b0, c10 = a1 * n_v_ + b0;
      int c01 = a0 * n_v_ + b1, c11 = a1 * n_v_ + b1;
      double f00 = f.values(c00), f10 = f.values(c10);
      double f01 = f.values(c01), f11 = f.values(c11);
      auto mu = [&](int c) { return f.gradient.components(c, 0); };
      auto mv = [&](int c) { return f.gradient.components(c, 1); };
      Eigen::VectorXd g(2);
      g(0) = ((f10 - f00) * dh01(su) * h00(sv) + (f01 - f00) * dh00(su) * h01(sv) +
              (f11 - f00) * dh01(su) * h01(sv)) / hu +
             (mu(c00) * dh10(su) * h00(sv) + mu(c10) * dh11(su) * h00(sv) +
              mu(c01) * dh10(su) * h01(sv) + mu(c11) * dh11(su) * h01(sv)) +
             (hv / hu) * (mv(c00) * dh00(su) * h10(sv) + mv(c10) * dh01(su) * h10(sv) +
                          mv(c01) * dh00(su) * h11(sv) + mv(c11) * dh01(su) * h11(sv));
      g(1) = ((f10 - f00) * h01(su) * dh00(sv) + (f01 - f00) * h00(su) * dh01(sv) +
              (f11 - f00) * h01(su) * dh01(sv)) / hv +
             (hu / hv) * (mu(c00) * h10(su) * dh00(sv) + mu(c10) * h11(su) * dh00(sv) +
                          mu(c01) * h10(su) * dh01(sv) + mu(c11) * h11(su) * dh01(sv)) +
             (mv(c00) * h00(su) * dh10(sv) + mv(c10) * h01(su) * dh10(sv) +
              mv(c01) * h00(su) * dh11(sv) + mv(c11) * h01(su) * dh11(sv));
      return g;
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d p = point;
      p.normalize();
      int face;
      Eigen::Vector3d lam = locate_face(p, face);
      Eigen::Vector3d g = Eigen::Vector3d::Zero();
      for (int k = 0; k < 3; ++k)
        g += lam(k) * f.gradient.components.row(faces_(face, k)).transpose();
      g -= g.dot(p) * p;
      return g;
    }
  }
  throw std::logic_error("unreachable");
}

Eigen::VectorXd DiscreteManifold::flow_rhs(const VectorField& w,
                                           const Eigen::VectorXd& x) const {
  if (kind_ == ManifoldKind::sphere) {
    return vector_field_at(w, x);
  }
  // circle / torus: wrap into the fundamental domain for evaluation; the
  // integration state itself stays unwrapped.
  Eigen::VectorXd p = x;
  for (int k = 0; k < p.size(); ++k) p(k) = wrap01(p(k));
  return vector_field_at(w, p);
}

Eigen::VectorXd DiscreteManifold::integrate_flow(const VectorField& w, double t,
                                                 const Eigen::VectorXd& x0) const {
  if (x0.size() != chart_dim())
    throw std::invalid_argument("integrate_flow: wrong point dimension");
  if (w.components.rows() != num_nodes() || w.components.cols() != chart_dim())
    throw std::invalid_argument("integrate_flow: field has wrong shape");
  if (t == 0.0) return x0;
  int nsteps = std::max(100, static_cast<int>(std::ceil(std::abs(t) / 0.01)));
  double h = t / nsteps;
  Eigen::VectorXd x = x0;
  if (kind_ == ManifoldKind::sphere) x.normalize();
  for (int s = 0; s < nsteps; ++s) {
    Eigen::VectorXd k1 = flow_rhs(w, x);
    Eigen::VectorXd k2, k3, k4;
    if (kind_ == ManifoldKind::sphere) {
      k2 = flow_rhs(w, (x + 0.5 * h * k1).normalized());
      k3 = flow_rhs(w, (x + 0.5 * h * k2).normalized());
      k4 = flow_rhs(w, (x + h * k3).normalized());
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      x.normalize();
    } else {
      k2 = flow_rhs(w, x + 0.5 * h * k1);
      k3 = flow_rhs(w, x + 0.5 * h * k2);
      k4 = flow_rhs(w, x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  if (kind_ != ManifoldKind::sphere)
    for (int k = 0; k < x.size(); ++k) x(k) = wrap01(x(k));
  return x;
}

Eigen::MatrixXd DiscreteManifold::flow_all_nodes(const VectorField& w,
                                                 double t) const {
  Eigen::MatrixXd out(num_nodes(), chart_dim());
  for (int i = 0; i < num_nodes(); ++i)
    out.row(i) = integrate_flow(w, t, node(i)).transpose();
  return out;
}

int DiscreteManifold::nearest_node(const Eigen::VectorXd& point) const {
  switch (kind_) {
    case ManifoldKind::circle: {
      int i = static_cast<int>(std::lround(wrap01(point(0)) * n_u_));
      return i % n_u_;
    }
    case ManifoldKind::flat_torus: {
      int a = static_cast<int>(std::lround(wrap01(point(0)) * n_u_)) % n_u_;
      int b = static_cast<int>(std::lround(wrap01(point(1)) * n_v_)) % n_v_;
      return a * n_v_ + b;
    }
    case ManifoldKind::sphere: {
      Eigen::Vector3d p = point;
      p.normalize();
      int best = 0;
      double best_dot = -2.0;
      for (int i = 0; i < num_nodes(); ++i) {
        double d = nodes_.row(i).dot(p);
        if (d > best_dot) {
          best_dot = d;
          best = i;
        }
      }
      return best;
    }
  }
  throw std::logic_error("unreachable");
}

bool DiscreteManifold::same_discretization(const DiscreteManifold& other) const {
  if (kind_ != other.kind_) return false;
  if (nodes_.rows() != other.nodes_.rows() || nodes_.cols() != other.nodes_.cols())
    return false;
  if (nodes_ != other.nodes_) return false;
  if (kind_ == ManifoldKind::sphere && faces_ != other.faces_) return false;
  return true;
}

Eigen::Vector3d DiscreteManifold::locate_face(const Eigen::Vector3d& p,
                                              int& face) const {
  // The ray from the origin through p crosses exactly one face of a star-shaped
  // triangulation; pick the face whose barycentric coordinates are most
  // interior. Coordinates are normalized to sum to one.
  double best_score = -std::numeric_limits<double>::infinity();
  int best_face = -1;
  Eigen::Vector3d best_lam = Eigen::Vector3d::Zero();
  const int nf = static_cast<int>(faces_.rows());
  for (int f = 0; f < nf; ++f) {
    Eigen::Vector3d lam = face_inverse_[f] * p;
    double total = lam.sum();
    if (std::abs(total) < 1e-12) continue;
    lam /= total;
    if (total < 0.0) continue;  // face on the far side
    double score = lam.minCoeff();
    if (score > best_score) {
      best_score = score;
      best_face = f;
      best_lam = lam;
    }
  }
  if (best_face < 0)
    throw std::domain_error("locate_face: point not covered by the mesh");
  // Clamp marginal negatives from points that fall between faces.
  for (int k = 0; k < 3; ++k) best_lam(k) = std::max(best_lam(k), 0.0);
  best_lam /= best_lam.sum();
  face = best_face;
  return best_lam;
}

}  // namespace w2w
