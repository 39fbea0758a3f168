#pragma once

// Reynolds stress algebra: anisotropy eigen-decomposition, the barycentric
// realizability map and its inverse.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace suq {

template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

/// Symmetric second-moment tensor, six stored components.
template <typename Scalar = double>
struct ReynoldsStress {
  Scalar uu{0}, vv{0}, ww{0}, uv{0}, uw{0}, vw{0};

  Scalar trace() const { return uu + vv + ww; }
  Scalar tke() const { return Scalar(0.5) * trace(); }

  Matrix3<Scalar> matrix() const {
    Matrix3<Scalar> m;
    m << uu, uv, uw,
         uv, vv, vw,
         uw, vw, ww;
    return m;
  }

  // Symmetrizes the input.
  static ReynoldsStress from_matrix(const Matrix3<Scalar>& m) {
    const Scalar h(0.5);
    return {m(0, 0), m(1, 1), m(2, 2), h * (m(0, 1) + m(1, 0)),
            h * (m(0, 2) + m(2, 0)), h * (m(1, 2) + m(2, 1))};
  }

  static ReynoldsStress isotropic(Scalar k) {
    const Scalar d = Scalar(2) * k / Scalar(3);
    return {d, d, d, 0, 0, 0};
  }
};

using Stress = ReynoldsStress<double>;

/// Anisotropy eigenvalues (descending), eigenvector columns and k.
template <typename Scalar = double>
struct AnisotropyEigenSystem {
  Scalar k{0};
  Vector3<Scalar> lambda = Vector3<Scalar>::Zero();
  Matrix3<Scalar> frame = Matrix3<Scalar>::Identity();
  // k fell below the floor; lambda and frame carry the isotropic defaults.
  bool degenerate{false};
};

enum class Corner { OneComponent, TwoComponent, ThreeComponent };

template <typename Scalar = double>
struct BarycentricPoint {
  Vector2<Scalar> position = Vector2<Scalar>::Zero();
  // (C1, C2, C3) weights of the 1C, 2C and 3C corners.
  Vector3<Scalar> weights = Vector3<Scalar>::Zero();

  bool inside(Scalar tol = Scalar(1e-10)) const { return weights.minCoeff() >= -tol; }
};

template <typename Scalar = double>
Vector2<Scalar> corner_position(Corner c) {
  using std::sqrt;
  switch (c) {
    case Corner::OneComponent:
      return {Scalar(1), Scalar(0)};
    case Corner::TwoComponent:
      return {Scalar(0), Scalar(0)};
    case Corner::ThreeComponent:
    default:
      return {Scalar(0.5), sqrt(Scalar(3)) / Scalar(2)};
  }
}

/// Point from corner weights.
template <typename Scalar>
BarycentricPoint<Scalar> point_from_weights(const Vector3<Scalar>& w) {
  BarycentricPoint<Scalar> pt;
  pt.weights = w;
  pt.position = w(0) * corner_position<Scalar>(Corner::OneComponent) +
                w(1) * corner_position<Scalar>(Corner::TwoComponent) +
                w(2) * corner_position<Scalar>(Corner::ThreeComponent);
  return pt;
}

/// Point from plane coordinates; weights solved against the corner layout.
template <typename Scalar>
BarycentricPoint<Scalar> point_from_position(const Vector2<Scalar>& p) {
  using std::sqrt;
  BarycentricPoint<Scalar> pt;
  pt.position = p;
  const Scalar c3 = Scalar(2) * p(1) / sqrt(Scalar(3));
  const Scalar c1 = p(0) - Scalar(0.5) * c3;
  pt.weights << c1, Scalar(1) - c1 - c3, c3;
  return pt;
}

/// Deterministic eigenvector frame: in each column the largest-magnitude
/// component is positive (near-ties go to the lowest index), then the third
/// column is flipped if needed so that det = +1.
template <typename Scalar>
Matrix3<Scalar> normalize_frame(Matrix3<Scalar> frame) {
  using std::abs;
  for (int c = 0; c < 3; ++c) {
    const Scalar peak = frame.col(c).cwiseAbs().maxCoeff();
    const Scalar tie = peak * Scalar(1e-9);
    int lead = 0;
    while (abs(frame(lead, c)) < peak - tie) ++lead;
    if (frame(lead, c) < Scalar(0)) frame.col(c) = -frame.col(c);
  }
  if (frame.determinant() < Scalar(0)) frame.col(2) = -frame.col(2);
  return frame;
}

/// Split tau into k and the eigen-decomposed anisotropy a = tau/k - 2/3 I.
template <typename Scalar>
AnisotropyEigenSystem<Scalar> decompose(const ReynoldsStress<Scalar>& tau,
                                        Scalar k_floor = Scalar(1e-12)) {
  AnisotropyEigenSystem<Scalar> eig;
  eig.k = tau.tke();
  if (!(eig.k >= k_floor)) {
    eig.degenerate = true;
    return eig;
  }
  Matrix3<Scalar> a = tau.matrix() / eig.k;
  a.diagonal().array() -= Scalar(2) / Scalar(3);

  Eigen::SelfAdjointEigenSolver<Matrix3<Scalar>> solver(a);
  // Eigen sorts ascending.
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  Matrix3<Scalar> frame;
  for (int i = 0; i < 3; ++i) {
    eig.lambda(i) = values(2 - i);
    frame.col(i) = vectors.col(2 - i);
  }
  // Remove the trace round-off so the triple is exactly deviatoric.
  eig.lambda.array() -= eig.lambda.sum() / Scalar(3);
  // Isotropic: every frame is an eigenframe, take the identity.
  if (eig.lambda(0) - eig.lambda(2) <= Scalar(1e-12)) {
    eig.frame.setIdentity();
    return eig;
  }
  eig.frame = normalize_frame(frame);
  return eig;
}

template <typename Scalar>
BarycentricPoint<Scalar> to_barycentric(const Vector3<Scalar>& lambda) {
  Vector3<Scalar> w;
  w(0) = Scalar(0.5) * (lambda(0) - lambda(1));
  w(1) = lambda(1) - lambda(2);
  w(2) = Scalar(0.5) * (Scalar(3) * lambda(2) + Scalar(2));
  return point_from_weights(w);
}

template <typename Scalar>
BarycentricPoint<Scalar> to_barycentric(const AnisotropyEigenSystem<Scalar>& eig) {
  return to_barycentric(eig.lambda);
}

/// Inverse of to_barycentric; uses the weights only.
template <typename Scalar>
Vector3<Scalar> from_barycentric(const BarycentricPoint<Scalar>& pt) {
  const auto& w = pt.weights;
  Vector3<Scalar> lambda;
  lambda(2) = (Scalar(2) * w(2) - Scalar(2)) / Scalar(3);
  lambda(1) = w(1) + lambda(2);
  lambda(0) = Scalar(2) * w(0) + lambda(1);
  return lambda;
}

/// tau = k (V diag(lambda) V^T + 2/3 I).
template <typename Scalar>
ReynoldsStress<Scalar> reconstruct(const AnisotropyEigenSystem<Scalar>& eig) {
  Matrix3<Scalar> a = eig.frame * eig.lambda.asDiagonal() * eig.frame.transpose();
  a.diagonal().array() += Scalar(2) / Scalar(3);
  return ReynoldsStress<Scalar>::from_matrix(eig.k * a);
}

/// Positive semidefinite up to tol * max(1, 2k).
template <typename Scalar>
bool is_realizable(const ReynoldsStress<Scalar>& tau, Scalar tol = Scalar(1e-10)) {
  using std::max;
  Eigen::SelfAdjointEigenSolver<Matrix3<Scalar>> solver(tau.matrix(),
                                                       Eigen::EigenvaluesOnly);
  const Scalar scale = max(Scalar(1), Scalar(2) * tau.tke());
  return solver.eigenvalues()(0) >= -tol * scale;
}

}  // namespace suq
