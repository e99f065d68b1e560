#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace mdpmpc {

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Eigen::VectorXd& v);

} // namespace mdpmpc
