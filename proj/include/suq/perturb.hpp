#pragma once

// Perturbed Reynolds stresses. Every mode moves the barycentric point of the
// anisotropy, maps back to eigenvalues and reconstructs with k unchanged.

#include "suq/rotation.hpp"
#include "suq/tensor_ops.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace suq {

enum class PerturbationMode {
  DataFreeCorner,
  DataDrivenMagnitude,
  ComponentwiseCorrection,
  FullAnisotropyCorrection,
};

template <typename Scalar = double>
struct PerturbationSpec {
  PerturbationMode mode{PerturbationMode::DataFreeCorner};
  std::optional<Corner> corner;
  std::optional<Scalar> delta_b;
  std::optional<Scalar> p;
  std::optional<Vector2<Scalar>> p_corr;
  std::optional<TaitBryanAngles<Scalar>> angles;

  static PerturbationSpec data_free(Corner c, Scalar delta_b) {
    PerturbationSpec s;
    s.mode = PerturbationMode::DataFreeCorner;
    s.corner = c;
    s.delta_b = delta_b;
    return s;
  }
  static PerturbationSpec magnitude(Corner c, Scalar p) {
    PerturbationSpec s;
    s.mode = PerturbationMode::DataDrivenMagnitude;
    s.corner = c;
    s.p = p;
    return s;
  }
  static PerturbationSpec componentwise(const Vector2<Scalar>& p_corr) {
    PerturbationSpec s;
    s.mode = PerturbationMode::ComponentwiseCorrection;
    s.p_corr = p_corr;
    return s;
  }
  static PerturbationSpec full(const Vector2<Scalar>& p_corr, const TaitBryanAngles<Scalar>& angles) {
    PerturbationSpec s;
    s.mode = PerturbationMode::FullAnisotropyCorrection;
    s.p_corr = p_corr;
    s.angles = angles;
    return s;
  }

  /// Throws std::invalid_argument unless exactly the fields of `mode` are set
  /// and in range.
  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("PerturbationSpec: " + m); };
    const bool want_corner = mode == PerturbationMode::DataFreeCorner ||
                             mode == PerturbationMode::DataDrivenMagnitude;
    const bool want_delta = mode == PerturbationMode::DataFreeCorner;
    const bool want_p = mode == PerturbationMode::DataDrivenMagnitude;
    const bool want_corr = mode == PerturbationMode::ComponentwiseCorrection ||
                           mode == PerturbationMode::FullAnisotropyCorrection;
    const bool want_angles = mode == PerturbationMode::FullAnisotropyCorrection;
    if (corner.has_value() != want_corner) fail("corner presence does not match mode");
    if (delta_b.has_value() != want_delta) fail("delta_b presence does not match mode");
    if (p.has_value() != want_p) fail("p presence does not match mode");
    if (p_corr.has_value() != want_corr) fail("p_corr presence does not match mode");
    if (angles.has_value() != want_angles) fail("angles presence does not match mode");
    if (delta_b && !(*delta_b >= Scalar(0) && *delta_b <= Scalar(1))) fail("delta_b outside [0,1]");
    if (p && !(*p >= Scalar(0))) fail("p must be nonnegative");
  }
};

/// x* = x + delta_b (x_t - x).
template <typename Scalar>
BarycentricPoint<Scalar> perturb_point_corner(const BarycentricPoint<Scalar>& x, Corner corner,
                                              Scalar delta_b) {
  if (!(delta_b >= Scalar(0) && delta_b <= Scalar(1))) {
    throw std::invalid_argument("perturb_point_corner: delta_b outside [0,1]");
  }
  Vector3<Scalar> target = Vector3<Scalar>::Zero();
  target(static_cast<int>(corner)) = Scalar(1);
  // Blending the weights keeps delta_b = 1 exactly on the corner.
  return point_from_weights<Scalar>(x.weights + delta_b * (target - x.weights));
}

/// Moves a Euclidean distance p toward the corner, stopping at the corner.
template <typename Scalar>
BarycentricPoint<Scalar> perturb_point_magnitude(const BarycentricPoint<Scalar>& x, Corner corner,
                                                 Scalar p) {
  if (!(p >= Scalar(0))) throw std::invalid_argument("perturb_point_magnitude: p must be >= 0");
  const Vector2<Scalar> d = corner_position<Scalar>(corner) - x.position;
  const Scalar dist = d.norm();
  if (dist < Scalar(1e-14)) return x;
  if (p >= dist) return perturb_point_corner(x, corner, Scalar(1));
  return perturb_point_corner(x, corner, p / dist);
}

/// Closest point of the closed triangle to q.
template <typename Scalar>
Vector2<Scalar> project_to_triangle(const Vector2<Scalar>& q) {
  if (point_from_position(q).inside(Scalar(0))) return q;
  const Vector2<Scalar> c[3] = {corner_position<Scalar>(Corner::OneComponent),
                                corner_position<Scalar>(Corner::TwoComponent),
                                corner_position<Scalar>(Corner::ThreeComponent)};
  Vector2<Scalar> best = c[0];
  Scalar best_d2 = (q - best).squaredNorm();
  for (int e = 0; e < 3; ++e) {
    const Vector2<Scalar>& a = c[e];
    const Vector2<Scalar> ab = c[(e + 1) % 3] - a;
    Scalar t = (q - a).dot(ab) / ab.squaredNorm();
    t = std::clamp(t, Scalar(0), Scalar(1));
    const Vector2<Scalar> cand = a + t * ab;
    const Scalar d2 = (q - cand).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = cand;
    }
  }
  return best;
}

/// x* = x + p_corr, projected back onto the triangle if it left it.
template <typename Scalar>
BarycentricPoint<Scalar> perturb_point_componentwise(const BarycentricPoint<Scalar>& x,
                                                     const Vector2<Scalar>& p_corr) {
  const Vector2<Scalar> moved = x.position + p_corr;
  auto pt = point_from_position<Scalar>(moved);
  if (pt.inside(Scalar(0))) return pt;
  pt = point_from_position<Scalar>(project_to_triangle(moved));
  // Clip round-off so the weights describe a point on the closed triangle.
  pt.weights = pt.weights.cwiseMax(Scalar(0));
  pt.weights /= pt.weights.sum();
  return point_from_weights<Scalar>(pt.weights);
}

template <typename Scalar>
BarycentricPoint<Scalar> perturb_point(const BarycentricPoint<Scalar>& x,
                                       const PerturbationSpec<Scalar>& spec) {
  switch (spec.mode) {
    case PerturbationMode::DataFreeCorner:
      return perturb_point_corner(x, *spec.corner, *spec.delta_b);
    case PerturbationMode::DataDrivenMagnitude:
      return perturb_point_magnitude(x, *spec.corner, *spec.p);
    case PerturbationMode::ComponentwiseCorrection:
    case PerturbationMode::FullAnisotropyCorrection:
    default:
      return perturb_point_componentwise(x, *spec.p_corr);
  }
}

/// tau* = k (v* diag(lambda*) v*^T + 2/3 I). Degenerate inputs come back as
/// the isotropic tensor of their k.
template <typename Scalar>
ReynoldsStress<Scalar> build_perturbed_stress(const AnisotropyEigenSystem<Scalar>& eig,
                                              const PerturbationSpec<Scalar>& spec) {
  spec.validate();
  if (eig.degenerate) return ReynoldsStress<Scalar>::isotropic(std::max(eig.k, Scalar(0)));
  AnisotropyEigenSystem<Scalar> out = eig;
  out.lambda = from_barycentric(perturb_point(to_barycentric(eig), spec));
  if (spec.mode == PerturbationMode::FullAnisotropyCorrection) {
    out.frame = apply_rotation(eig.frame, *spec.angles);
  }
  return reconstruct(out);
}

}  // namespace suq
