#pragma once

#include <Eigen/Dense>

namespace cellgraph {

/// Dense row-major matrix: one row per node / sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace cellgraph
