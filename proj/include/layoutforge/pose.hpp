#pragma once

#include <cmath>

#include "layoutforge/common.hpp"

namespace layoutforge {

/// Index of each optimizable parameter inside a PoseGradient.
enum PoseParam : int { kScale = 0, kYaw = 1, kTx = 2, kTy = 3, kTz = 4 };

/// d(loss)/d(scale, yaw, tx, ty, tz).
using PoseGradient = Eigen::Matrix<double, 5, 1>;

/// 3x5 Jacobian of a world point with respect to (scale, yaw, tx, ty, tz).
using PointJacobian = Eigen::Matrix<double, 3, 5>;

inline double normalize_yaw(double yaw) {
  double y = std::fmod(yaw, kTwoPi);
  if (y < 0.0) y += kTwoPi;
  // fmod of a value just below a multiple of 2*pi can round up to 2*pi.
  if (y >= kTwoPi) y = 0.0;
  return y;
}

inline Mat3 yaw_rotation(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Mat3 r;
  r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return r;
}

/// dR/dyaw.
inline Mat3 yaw_rotation_derivative(double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  Mat3 r;
  r << -s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0;
  return r;
}

/// Uniform scale, upright rotation and translation of one object.
/// Maps local x to world as W(x) = scale * Rz(yaw) * x + translation.
struct Pose5DoF {
  double scale = 1.0;
  double yaw = 0.0;
  Vec3 translation = Vec3::Zero();

  Mat3 rotation() const { return yaw_rotation(yaw); }

  Vec3 apply(const Vec3& local) const { return scale * (rotation() * local) + translation; }

  Vec3 inverse_apply(const Vec3& world) const {
    return rotation().transpose() * (world - translation) / scale;
  }

  /// Jacobian of apply(local) with respect to the five parameters.
  PointJacobian jacobian(const Vec3& local) const {
    PointJacobian j;
    j.col(kScale) = rotation() * local;
    j.col(kYaw) = scale * (yaw_rotation_derivative(yaw) * local);
    j.block<3, 3>(0, kTx).setIdentity();
    return j;
  }

  bool finite() const { return std::isfinite(scale) && std::isfinite(yaw) && translation.allFinite(); }

  friend bool operator==(const Pose5DoF& a, const Pose5DoF& b) {
    return a.scale == b.scale && a.yaw == b.yaw && a.translation == b.translation;
  }
};

}  // namespace layoutforge
