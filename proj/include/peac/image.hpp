#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace peac {

/// Single-channel intensity image, row-major, values nominally in [0, 1].
using Image = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 8-bit label image (co-segmentation masks).
using LabelImage = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace peac
