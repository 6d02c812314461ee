#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dem {

using Real = double;
using Vec3 = Eigen::Vector3d;
using Vec3i = Eigen::Vector3i;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using MatX3 = Eigen::Matrix<Real, Eigen::Dynamic, 3>;
using SpMat = Eigen::SparseMatrix<Real>;

/// Failure categories surfaced to callers; the CLI maps them to exit codes.
enum class ErrorKind {
  InvalidDiscretization,
  InvalidThreshold,
  InvalidOrder,
  InvalidBc,
  Lookup,
  Contract,
  NonFiniteLoss,
  IncompressibleLimit,
  InvertedElement,
  OracleFailure,
  Config,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

/// Fixed-order pairwise summation. Deterministic for a given input order and
/// better conditioned than a running sum; every reduction in the library goes
/// through here so losses are bit-reproducible.
inline Real pairwise_sum(std::span<const Real> v) {
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    Real s = v[0];
    for (std::size_t i = 1; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

inline Real pairwise_sum(const VecX& v) {
  return pairwise_sum(std::span<const Real>(v.data(), static_cast<std::size_t>(v.size())));
}

/// Deterministic uniform RNG. mt19937_64 plus an explicit bits-to-double map,
/// so streams do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Uniform in [0, 1).
  Real uniform() { return static_cast<Real>(state_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  Real normal() {
    Real u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const Real u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t raw() { return state_(); }

 private:
  std::mt19937_64 state_;
};

}  // namespace dem
