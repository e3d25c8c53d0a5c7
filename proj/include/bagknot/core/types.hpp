#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>

namespace bagknot {

inline constexpr int kNumHandles = 2;
inline constexpr int kKeypointsPerHandle = 5;
inline constexpr int kNumKeypoints = kNumHandles * kKeypointsPerHandle;
inline constexpr int kKeypointDim = 3 * kNumKeypoints;
inline constexpr int kJointDim = 26;
inline constexpr double kPi = std::numbers::pi;

/// Arc-length fractions of the keypoints along each handle.
inline constexpr std::array<double, kKeypointsPerHandle> kKeypointFractions{0.1, 0.3, 0.5, 0.7,
                                                                            0.9};

using Vec3 = Eigen::Vector3d;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// n x 3 row-major coordinates.
using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using JointVector = Eigen::Matrix<double, kJointDim, 1>;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace bagknot
