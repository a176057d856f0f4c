#include "w2w/json_io.hpp"

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace w2w {

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  if (!j.is_array()) throw std::invalid_argument("matrix: expected array");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw std::invalid_argument("matrix: ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw std::invalid_argument("vector: expected array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  }
  return v;
}

Json manifold_to_json(const DiscreteManifold& m) {
  Json j;
  switch (m.kind()) {
    case ManifoldKind::circle:
      j["kind"] = "circle";
      j["n"] = m.num_nodes();
      break;
    case ManifoldKind::flat_torus:
      j["kind"] = "flat_torus";
      j["n_u"] = m.torus_nu();
      j["n_v"] = m.torus_nv();
      break;
    case ManifoldKind::sphere: {
      j["kind"] = "sphere";
      Json verts = Json::array();
      for (int i = 0; i < m.num_nodes(); ++i) {
        const Eigen::VectorXd x = m.node(i);
        verts.push_back(Json::array({x(0), x(1), x(2)}));
      }
      Json faces = Json::array();
      const Eigen::MatrixXi& fm = m.sphere_faces();
      for (Eigen::Index f = 0; f < fm.rows(); ++f) {
        faces.push_back(Json::array({fm(f, 0), fm(f, 1), fm(f, 2)}));
      }
      j["vertices"] = std::move(verts);
      j["faces"] = std::move(faces);
      break;
    }
  }
  return j;
}

ManifoldPtr manifold_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "circle") {
    return DiscreteManifold::circle(j.at("n").get<int>());
  }
  if (kind == "flat_torus") {
    return DiscreteManifold::flat_torus(j.at("n_u").get<int>(),
                                        j.at("n_v").get<int>());
  }
  if (kind == "sphere") {
    if (j.contains("subdivisions")) {
      return DiscreteManifold::icosphere(j.at("subdivisions").get<int>());
    }
    if (j.contains("off")) {
      return DiscreteManifold::sphere_from_off(j.at("off").get<std::string>());
    }
    const Eigen::MatrixXd verts = matrix_from_json(j.at("vertices"));
    const Json& fj = j.at("faces");
    Eigen::MatrixXi faces(static_cast<Eigen::Index>(fj.size()), 3);
    for (Eigen::Index f = 0; f < faces.rows(); ++f) {
      const Json& row = fj.at(static_cast<std::size_t>(f));
      faces(f, 0) = row.at(0).get<int>();
      faces(f, 1) = row.at(1).get<int>();
      faces(f, 2) = row.at(2).get<int>();
    }
    return DiscreteManifold::sphere(verts, faces);
  }
  throw std::invalid_argument("unknown manifold kind: " + kind);
}

Json measure_to_json(const Measure& mu) {
  Json j;
  j["weights"] = vector_to_json(mu.weights());
  return j;
}

Measure measure_from_json(const Json& j, const ManifoldPtr& m) {
  return Measure(m, vector_from_json(j.at("weights")));
}

Json ensemble_to_json(const MeasureEnsemble& ens) {
  Json atoms = Json::array();
  for (std::size_t i = 0; i < ens.atoms.size(); ++i) {
    Json a;
    a["mass"] = ens.mass(static_cast<Eigen::Index>(i));
    a["weights"] = vector_to_json(ens.atoms[i].weights());
    atoms.push_back(std::move(a));
  }
  Json j;
  j["atoms"] = std::move(atoms);
  return j;
}

MeasureEnsemble ensemble_from_json(const Json& j, const ManifoldPtr& m) {
  std::vector<Measure> atoms;
  std::vector<double> mass;
  for (const Json& a : j.at("atoms")) {
    atoms.push_back(Measure(m, vector_from_json(a.at("weights"))));
    mass.push_back(a.at("mass").get<double>());
  }
  Eigen::VectorXd mv(static_cast<Eigen::Index>(mass.size()));
  for (std::size_t i = 0; i < mass.size(); ++i) {
    mv(static_cast<Eigen::Index>(i)) = mass[i];
  }
  return MeasureEnsemble(std::move(atoms), std::move(mv));
}

std::string matrix_to_csv(const Eigen::MatrixXd& m) {
  std::string out;
  char buf[64];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      if (j > 0) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace w2w
