#pragma once

// Intrinsic Tait-Bryan angles, z - y' - x'' sequence.

#include "suq/tensor_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace suq {

template <typename Scalar = double>
struct TaitBryanAngles {
  Scalar alpha{0};  // about z
  Scalar beta{0};   // about y'
  Scalar gamma{0};  // about x''
};

/// R = Rz(alpha) Ry(beta) Rx(gamma).
template <typename Scalar>
Matrix3<Scalar> rotation_matrix(const TaitBryanAngles<Scalar>& a) {
  using Axis = Eigen::AngleAxis<Scalar>;
  return (Axis(a.alpha, Vector3<Scalar>::UnitZ()) * Axis(a.beta, Vector3<Scalar>::UnitY()) *
          Axis(a.gamma, Vector3<Scalar>::UnitX()))
      .toRotationMatrix();
}

/// Angles of a proper rotation matrix. Near gimbal lock (|cos beta| < 1e-8)
/// gamma is pinned to zero and the remaining twist goes into alpha.
template <typename Scalar>
TaitBryanAngles<Scalar> angles_from_matrix(const Matrix3<Scalar>& r) {
  using std::atan2;
  using std::hypot;
  TaitBryanAngles<Scalar> a;
  const Scalar cos_beta = hypot(r(0, 0), r(1, 0));
  a.beta = atan2(-r(2, 0), cos_beta);
  if (cos_beta < Scalar(1e-8)) {
    a.gamma = Scalar(0);
    a.alpha = atan2(-r(0, 1), r(1, 1));
  } else {
    a.alpha = atan2(r(1, 0), r(0, 0));
    a.gamma = atan2(r(2, 1), r(2, 2));
  }
  return a;
}

namespace detail {
template <typename Scalar>
void require_orthonormal(const Matrix3<Scalar>& f, const char* which) {
  if ((f.transpose() * f - Matrix3<Scalar>::Identity()).norm() > Scalar(1e-6)) {
    throw std::invalid_argument(std::string("extract_angles: ") + which +
                                " frame is not orthonormal");
  }
}
}  // namespace detail

/// Angles of the rotation R = to * from^T, so that rotation_matrix(angles) * from == to.
/// Both frames must be right-handed.
template <typename Scalar>
TaitBryanAngles<Scalar> extract_angles(const Matrix3<Scalar>& frame_from,
                                       const Matrix3<Scalar>& frame_to) {
  detail::require_orthonormal(frame_from, "source");
  detail::require_orthonormal(frame_to, "target");
  return angles_from_matrix<Scalar>(frame_to * frame_from.transpose());
}

template <typename Scalar>
Matrix3<Scalar> apply_rotation(const Matrix3<Scalar>& frame, const TaitBryanAngles<Scalar>& angles) {
  return rotation_matrix(angles) * frame;
}

}  // namespace suq
