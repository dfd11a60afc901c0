#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace hwflow {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Thrown when the linear solver detects a non-SPD system or the outer
// iteration produces non-finite state. CLI maps this to exit code 2.
struct SolverDivergence : std::runtime_error {
  explicit SolverDivergence(const std::string& msg) : std::runtime_error(msg) {}
};

// Camera/time sign convention: index 0 maps to -1, index 1 to +1.
inline double sign_of(int idx) { return idx == 0 ? -1.0 : 1.0; }

// Flat index of input image (c = camera, t = time step).
inline int image_index(int cam, int time) { return cam + 2 * time; }

}  // namespace hwflow
