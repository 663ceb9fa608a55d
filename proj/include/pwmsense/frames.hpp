#pragma once

// Reference-frame algebra shared by every other module: Clarke transform,
// rotations between the stator (alpha-beta) and rotor (dq) frames, and the
// saliency matrix.

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

namespace pwmsense {

using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using ClarkeMat = Eigen::Matrix<double, 2, 3>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSqrt3 = std::numbers::sqrt3;

/// Three-phase quantity (volts or amperes).
struct Abc {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double& operator[](int k) { return k == 0 ? a : (k == 1 ? b : c); }
  double operator[](int k) const { return k == 0 ? a : (k == 1 ? b : c); }
  Vec3 vec() const { return {a, b, c}; }
  static Abc from(const Vec3& v) { return {v(0), v(1), v(2)}; }
};

/// Stator-fixed two-axis quantity.
struct AlphaBeta {
  double alpha = 0.0;
  double beta = 0.0;

  Vec2 vec() const { return {alpha, beta}; }
  static AlphaBeta from(const Vec2& v) { return {v(0), v(1)}; }
};

/// Rotor-fixed two-axis quantity.
struct Dq {
  double d = 0.0;
  double q = 0.0;

  Vec2 vec() const { return {d, q}; }
  static Dq from(const Vec2& v) { return {v(0), v(1)}; }
};

/// The 2x3 amplitude-invariant Clarke matrix (2/3)[1 -1/2 -1/2; 0 sqrt3/2 -sqrt3/2].
inline ClarkeMat clarke_matrix() {
  ClarkeMat c;
  c << 1.0, -0.5, -0.5, 0.0, kSqrt3 / 2.0, -kSqrt3 / 2.0;
  return (2.0 / 3.0) * c;
}

inline AlphaBeta clarke(const Abc& x) {
  return {(2.0 / 3.0) * (x.a - 0.5 * x.b - 0.5 * x.c), (2.0 / 3.0) * (kSqrt3 / 2.0) * (x.b - x.c)};
}

/// Minimal-norm zero-sum preimage of clarke, i.e. (3/2) C^T x.
inline Abc inv_clarke(const AlphaBeta& x) {
  const double h = 0.5 * kSqrt3 * x.beta;
  return {x.alpha, -0.5 * x.alpha + h, -0.5 * x.alpha - h};
}

inline Mat2 rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

inline Vec2 rotate(double theta, const Vec2& x) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * x(0) - s * x(1), s * x(0) + c * x(1)};
}

inline AlphaBeta dq_to_alphabeta(const Dq& x, double theta) {
  return AlphaBeta::from(rotate(theta, x.vec()));
}

inline Dq alphabeta_to_dq(const AlphaBeta& x, double theta) {
  return Dq::from(rotate(-theta, x.vec()));
}

/// Inverse-inductance matrix of a salient machine seen from the stator frame,
/// R(theta) diag(1/Ld, 1/Lq) R(-theta). Units 1/H.
inline Mat2 saliency(double theta, double Ld, double Lq) {
  if (!(Ld > 0.0) || !(Lq > 0.0)) {
    throw std::invalid_argument("saliency: inductances must be positive");
  }
  const double mean = (Ld + Lq) / (2.0 * Ld * Lq);
  const double diff = (Lq - Ld) / (2.0 * Ld * Lq);
  const double c2 = std::cos(2.0 * theta);
  const double s2 = std::sin(2.0 * theta);
  Mat2 s;
  s << mean + diff * c2, diff * s2, diff * s2, mean - diff * c2;
  return s;
}

}  // namespace pwmsense
