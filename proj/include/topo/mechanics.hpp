#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace topo {

struct MaterialParams {
  double lambda = 2.66;
  double mu = 0.71;

  MaterialParams() = default;
  MaterialParams(double lambda_, double mu_) : lambda(lambda_), mu(mu_) {
    if (mu <= 0.0 || lambda + mu <= 0.0)
      throw std::invalid_argument("MaterialParams: need mu > 0 and lambda + mu > 0");
  }
};

struct InvertedElement : std::runtime_error {
  InvertedElement() : std::runtime_error("deformation gradient with non-positive determinant") {}
};

// Fourth-order tangent A_iJkL = dP_iJ / dF_kL for in-plane indices.
struct Tangent2 {
  double a[2][2][2][2];
  double& operator()(int i, int J, int k, int L) { return a[i][J][k][L]; }
  double operator()(int i, int J, int k, int L) const { return a[i][J][k][L]; }
};

// Compressible Neo-Hookean in plane strain (F33 = 1):
//   W = mu/2 (tr(F^T F) + 1 - 3) - mu ln J + lambda/2 (ln J)^2,  J = det F.
inline double strain_energy(const Eigen::Matrix2d& F, const MaterialParams& m) {
  double J = F.determinant();
  if (J <= 0.0) throw InvertedElement();
  double lnJ = std::log(J);
  return 0.5 * m.mu * (F.squaredNorm() + 1.0 - 3.0) - m.mu * lnJ + 0.5 * m.lambda * lnJ * lnJ;
}

// P = dW/dF = mu (F - F^-T) + lambda ln J F^-T.
inline Eigen::Matrix2d piola_stress(const Eigen::Matrix2d& F, const MaterialParams& m) {
  double J = F.determinant();
  if (J <= 0.0) throw InvertedElement();
  Eigen::Matrix2d Finvt = F.inverse().transpose();
  return m.mu * (F - Finvt) + m.lambda * std::log(J) * Finvt;
}

inline Tangent2 material_tangent(const Eigen::Matrix2d& F, const MaterialParams& m) {
  double J = F.determinant();
  if (J <= 0.0) throw InvertedElement();
  double lnJ = std::log(J);
  Eigen::Matrix2d Fi = F.inverse();
  Tangent2 A;
  for (int i = 0; i < 2; ++i)
    for (int Jx = 0; Jx < 2; ++Jx)
      for (int k = 0; k < 2; ++k)
        for (int L = 0; L < 2; ++L)
          A(i, Jx, k, L) = m.mu * (i == k && Jx == L ? 1.0 : 0.0)
                         + m.lambda * Fi(L, k) * Fi(Jx, i)
                         + (m.mu - m.lambda * lnJ) * Fi(Jx, k) * Fi(L, i);
  return A;
}

// Cauchy stress of the plane-strain embedding F3 = diag(F, 1):
//   sigma = J^-1 [ mu (F3 F3^T - I) + lambda ln J I ].
inline Eigen::Matrix3d cauchy_stress(const Eigen::Matrix2d& F, const MaterialParams& m) {
  double J = F.determinant();
  if (J <= 0.0) throw InvertedElement();
  double lnJ = std::log(J);
  Eigen::Matrix3d B = Eigen::Matrix3d::Identity();
  B.topLeftCorner<2, 2>() = F * F.transpose();
  return (m.mu * (B - Eigen::Matrix3d::Identity()) + m.lambda * lnJ * Eigen::Matrix3d::Identity()) / J;
}

inline double von_mises(const Eigen::Matrix3d& sigma) {
  Eigen::Matrix3d dev = sigma - (sigma.trace() / 3.0) * Eigen::Matrix3d::Identity();
  return std::sqrt(1.5 * dev.squaredNorm());
}

// Eshelby stress in energy-momentum format: Sigma = W0 I - F^T P (in-plane block).
inline Eigen::Matrix2d eshelby_stress(const Eigen::Matrix2d& F, const MaterialParams& m) {
  return strain_energy(F, m) * Eigen::Matrix2d::Identity() - F.transpose() * piola_stress(F, m);
}

// d sigma / dF for the closed-form Cauchy stress above; indices (a,b,k,L)
// with a,b spatial (3D embedding) and k,L in-plane.
struct CauchyTangent {
  double a[3][3][2][2];
  double& operator()(int i, int j, int k, int L) { return a[i][j][k][L]; }
  double operator()(int i, int j, int k, int L) const { return a[i][j][k][L]; }
};

inline CauchyTangent cauchy_stress_tangent(const Eigen::Matrix2d& F, const MaterialParams& m) {
  double J = F.determinant();
  if (J <= 0.0) throw InvertedElement();
  double lnJ = std::log(J);
  Eigen::Matrix2d Finvt = F.inverse().transpose();
  Eigen::Matrix3d sigma = cauchy_stress(F, m);
  CauchyTangent T;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int k = 0; k < 2; ++k)
        for (int L = 0; L < 2; ++L) {
          double dB = 0.0;  // d(F3 F3^T)_ab / dF_kL, in-plane contributions only
          if (a < 2 && b < 2)
            dB = (a == k ? F(b, L) : 0.0) + (b == k ? F(a, L) : 0.0);
          double dJ = J * Finvt(k, L);  // dJ/dF_kL
          T(a, b, k, L) = (m.mu * dB + m.lambda * Finvt(k, L) * (a == b ? 1.0 : 0.0)) / J
                        - sigma(a, b) * Finvt(k, L);
        }
  return T;
}

// d(sigma_vm)/dF via the deviator chain; zero gradient at sigma = 0.
inline Eigen::Matrix2d von_mises_tangent(const Eigen::Matrix2d& F, const MaterialParams& m) {
  Eigen::Matrix3d sigma = cauchy_stress(F, m);
  double vm = von_mises(sigma);
  Eigen::Matrix2d out = Eigen::Matrix2d::Zero();
  if (vm < 1e-300) return out;
  Eigen::Matrix3d dev = sigma - (sigma.trace() / 3.0) * Eigen::Matrix3d::Identity();
  CauchyTangent T = cauchy_stress_tangent(F, m);
  for (int k = 0; k < 2; ++k)
    for (int L = 0; L < 2; ++L) {
      double s = 0.0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) s += dev(a, b) * T(a, b, k, L);
      out(k, L) = 1.5 * s / vm;
    }
  return out;
}

}  // namespace topo
