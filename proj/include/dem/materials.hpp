#pragma once

#include <variant>

#include "dem/ad.hpp"
#include "dem/common.hpp"

namespace dem::materials {

struct LinearElastic {
  Real E;   // Young's modulus
  Real nu;  // Poisson ratio
};

struct NeoHookean {
  Real C10;  // shear-like coefficient, stress units
  Real D1;   // volumetric compliance, inverse stress units
};

using MaterialModel = std::variant<LinearElastic, NeoHookean>;

/// Enforces E > 0, -1 < nu < 0.5, C10 > 0, D1 > 0.
void validate(const MaterialModel& mat);

template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

/// eps = (grad u + grad u^T) / 2
template <typename T>
Mat3T<T> strain(const Mat3T<T>& gradu) {
  return ((gradu + gradu.transpose()) * T(0.5)).eval();
}

/// sigma = E/(1+nu) eps + E nu/((1+nu)(1-2nu)) tr(eps) I
template <typename T>
Mat3T<T> stress_linear(const Mat3T<T>& eps, Real E, Real nu) {
  if (nu >= 0.5)
    fail(ErrorKind::IncompressibleLimit,
         "linear constitutive law undefined at nu >= 0.5");
  const T a = T(E / (1.0 + nu));
  const T b = T(E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)));
  return (a * eps + b * eps.trace() * Mat3T<T>::Identity()).eval();
}

/// Psi_LE = sigma : eps / 2
template <typename T>
T energy_linear(const Mat3T<T>& eps, const Mat3T<T>& sigma) {
  return T(0.5) * (sigma.array() * eps.array()).sum();
}

template <typename T>
T energy_linear(const Mat3T<T>& gradu, Real E, Real nu) {
  const Mat3T<T> eps = strain(gradu);
  return energy_linear(eps, stress_linear(eps, E, nu));
}

/// F = grad u + I
template <typename T>
Mat3T<T> deformation_gradient(const Mat3T<T>& gradu) {
  return (gradu + Mat3T<T>::Identity()).eval();
}

/// Psi_NH = C10 [tr(Fbar Fbar^T) - 3] + (1/D1)(det F - 1)^2, with the
/// isochoric part Fbar = (det F)^(-1/3) F.
template <typename T>
T energy_neohookean(const Mat3T<T>& F, Real C10, Real D1) {
  const T J = F.determinant();
  if (!(J > T(0)))
    fail(ErrorKind::InvertedElement, "det F <= 0 in strain energy");
  const T I1 = F.squaredNorm();  // tr(F F^T)
  using std::pow;
  const T I1_bar = pow(J, T(-2.0 / 3.0)) * I1;
  return T(C10) * (I1_bar - T(3)) + (T(1) / T(D1)) * (J - T(1)) * (J - T(1));
}

/// P = dPsi_NH/dF = 2 C10 J^(-2/3) (F - (I1/3) F^-T) + (2/D1)(J-1) J F^-T
template <typename T>
Mat3T<T> pk1_stress(const Mat3T<T>& F, Real C10, Real D1) {
  const T J = F.determinant();
  if (!(J > T(0)))
    fail(ErrorKind::InvertedElement, "det F <= 0 in stress evaluation");
  const T I1 = F.squaredNorm();
  const Mat3T<T> Finv_t = F.inverse().transpose();
  using std::pow;
  return (T(2.0 * C10) * pow(J, T(-2.0 / 3.0)) *
              (F - (I1 / T(3)) * Finv_t) +
          (T(2.0) / T(D1)) * (J - T(1)) * J * Finv_t)
      .eval();
}

/// Column permutation that transposes row-major 3x3 blocks stored as the 9
/// columns of a matrix node.
inline std::vector<int> transpose3_perm() { return {0, 3, 6, 1, 4, 7, 2, 5, 8}; }

/// Energy density per row of an N x 9 grad-u node (row-major 3x3 blocks).
/// Returns an N x 1 node inside prog.
ad::NodeId taped_energy_linear(ad::Program& prog, ad::NodeId gradu9, Real E,
                               Real nu);
ad::NodeId taped_energy_neohookean(ad::Program& prog, ad::NodeId gradu9,
                                   Real C10, Real D1);
ad::NodeId taped_energy(ad::Program& prog, ad::NodeId gradu9,
                        const MaterialModel& mat);

}  // namespace dem::materials
