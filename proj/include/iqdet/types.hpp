#pragma once

#include <Eigen/Core>

namespace iqdet {

using Scalar = double;

using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using ArrayRowMajor =
    Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixK2 = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

// Smallest allowed per-axis Gaussian scale; keeps component values and
// their gradients finite.
inline constexpr Scalar kSigmaFloor = 1e-3;

// Floor applied to predicted box distances (in stride units) before IoU.
inline constexpr Scalar kDistanceFloor = 1e-3;

// Smallest allowed mixture weight; the encoder's sigmoid head is floored
// here so saturated logits still produce a valid (0, 1] weight.
inline constexpr Scalar kPiFloor = 1e-12;

}  // namespace iqdet
