#pragma once

#include <json.hpp>

#include "w2w/measure.hpp"

namespace w2w {

/// Keys are kept sorted (std::map storage), so serialization is
/// deterministic for a given document.
using Json = nlohmann::json;

Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j);
Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j);

/// {"kind": "circle", "n": ...} | {"kind": "flat_torus", "n_u": ..., "n_v": ...}
/// | {"kind": "sphere", "subdivisions": ...} (icosphere)
/// | {"kind": "sphere", "off": path} | {"kind": "sphere", "vertices": ..., "faces": ...}
Json manifold_to_json(const DiscreteManifold& m);
ManifoldPtr manifold_from_json(const Json& j);

Json measure_to_json(const Measure& mu);
Measure measure_from_json(const Json& j, const ManifoldPtr& m);

Json ensemble_to_json(const MeasureEnsemble& ens);
MeasureEnsemble ensemble_from_json(const Json& j, const ManifoldPtr& m);

/// Dense matrix as CSV, one row per line, %.17g entries. Returns the file
/// content; writing is the caller's business.
std::string matrix_to_csv(const Eigen::MatrixXd& m);

}  // namespace w2w
