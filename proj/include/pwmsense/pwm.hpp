#pragma once

// Triangular-carrier PWM: the modulation map, the probing signal it induces
// (s0) and that signal's zero-mean primitive (s1), and the ripple
// autocorrelation matrices for single-carrier and interleaved carriers.

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pwmsense/frames.hpp"

namespace pwmsense {

enum class CarrierScheme { SingleCarrier, Interleaved };

inline std::string to_string(CarrierScheme s) {
  return s == CarrierScheme::SingleCarrier ? "single-carrier" : "interleaved";
}

inline CarrierScheme carrier_scheme_from_string(const std::string& s) {
  if (s == "single-carrier" || s == "single") return CarrierScheme::SingleCarrier;
  if (s == "interleaved") return CarrierScheme::Interleaved;
  throw std::invalid_argument("unknown carrier scheme '" + s + "'");
}

struct PwmConfig {
  CarrierScheme scheme = CarrierScheme::SingleCarrier;
  double epsilon = 250e-6;  // carrier period [s]
  double u_m = 270.0;       // output is +-u_m [V]
  int samples_per_period = 100;

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("pwm: epsilon must be positive");
    if (!(u_m > 0.0)) throw std::invalid_argument("pwm: u_m must be positive");
    if (samples_per_period < 16) throw std::invalid_argument("pwm: samples_per_period must be >= 16");
  }

  /// Carrier delay of phase k in carrier periods.
  double carrier_shift(int phase) const {
    return scheme == CarrierScheme::Interleaved ? phase / 3.0 : 0.0;
  }

  double sample_spacing() const { return epsilon / samples_per_period; }
};

namespace detail {

inline double frac(double x) { return x - std::floor(x); }

inline void check_reference(double u, double u_m) {
  if (!(std::abs(u) <= u_m)) {
    throw std::domain_error("pwm: reference " + std::to_string(u) + " V outside [-u_m, u_m] (u_m = " +
                            std::to_string(u_m) + " V)");
  }
}

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace detail

/// 1-periodic sawtooth mapping normalized time onto [-u_m/2, u_m/2).
inline double wrap(double sigma, double u_m) { return u_m * detail::frac(sigma + 0.5) - 0.5 * u_m; }

/// Natural PWM of the reference u against the triangular carrier; returns +-u_m.
inline double modulate(double u, double sigma, double u_m) {
  detail::check_reference(u, u_m);
  if (u == u_m || u == -u_m) return u;  // no switching at the limits
  const double w4 = 4.0 * wrap(sigma, u_m);
  if (w4 <= u - u_m) return u_m;
  if (w4 <= u_m - u) return -u_m;
  return u_m;
}

inline double s0(double u, double sigma, double u_m) { return modulate(u, sigma, u_m) - u; }

inline double s1(double u, double sigma, double u_m) {
  detail::check_reference(u, u_m);
  const double w = wrap(sigma, u_m);
  const double a = 0.25 * (u - u_m);
  return (1.0 - u / u_m) * w - std::abs(a - w) + std::abs(a + w);
}

inline Abc modulate_abc(const PwmConfig& cfg, const Abc& u, double sigma) {
  Abc out;
  for (int k = 0; k < 3; ++k) out[k] = modulate(u[k], sigma - cfg.carrier_shift(k), cfg.u_m);
  return out;
}

inline Abc s1_abc(const PwmConfig& cfg, const Abc& u, double sigma) {
  Abc out;
  for (int k = 0; k < 3; ++k) out[k] = s1(u[k], sigma - cfg.carrier_shift(k), cfg.u_m);
  return out;
}

inline AlphaBeta s1_alphabeta(const PwmConfig& cfg, const Abc& u, double sigma) {
  return clarke(s1_abc(cfg, u, sigma));
}

// ---------------------------------------------------------------------------
// Switching pattern

/// Edge times of one phase within a carrier period, before the carrier shift.
/// The output is low on [0, rise], high on (rise, fall], low on (fall, 1).
struct PhaseEdges {
  double rise = 0.25;
  double fall = 0.75;
  double shift = 0.0;

  bool degenerate() const { return !(rise > 0.0 && fall < 1.0 && rise < fall); }
};

struct SwitchingEdge {
  double tau;  // normalized time in [0, 1)
  int phase;
  int direction;  // +1 low->high, -1 high->low
};

struct SwitchingPattern {
  std::array<PhaseEdges, 3> phases;

  /// Interior edges sorted by time (carrier shift applied, reduced mod 1).
  std::vector<SwitchingEdge> edges() const {
    std::vector<SwitchingEdge> out;
    for (int k = 0; k < 3; ++k) {
      const PhaseEdges& p = phases[k];
      if (p.degenerate()) continue;
      out.push_back({detail::frac(p.rise + p.shift), k, +1});
      out.push_back({detail::frac(p.fall + p.shift), k, -1});
    }
    std::sort(out.begin(), out.end(), [](const SwitchingEdge& x, const SwitchingEdge& y) {
      return x.tau < y.tau || (x.tau == y.tau && x.phase < y.phase);
    });
    return out;
  }

  /// Sorted unique breakpoints in [0, 1] at which any phase voltage may change,
  /// including 0 and 1.
  std::vector<double> breakpoints() const {
    std::vector<double> pts{0.0, 1.0};
    for (const SwitchingEdge& e : edges()) pts.push_back(e.tau);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
  }
};

inline SwitchingPattern switching_pattern(const PwmConfig& cfg, const Abc& u) {
  SwitchingPattern pat;
  for (int k = 0; k < 3; ++k) {
    detail::check_reference(u[k], cfg.u_m);
    const double rise = (cfg.u_m - u[k]) / (4.0 * cfg.u_m);
    pat.phases[k] = {rise, 1.0 - rise, cfg.carrier_shift(k)};
  }
  return pat;
}

// ---------------------------------------------------------------------------
// Ripple matrices

/// Exact integral over one period of s1_abc s1_abc^T. Each s1 component is
/// piecewise linear with kinks at its two edges and at the sawtooth reset, so
/// the integrand is piecewise quadratic and Simpson's rule is exact per piece.
inline Mat3 ripple_matrix_abc(const PwmConfig& cfg, const Abc& u) {
  std::vector<double> pts{0.0, 1.0};
  const SwitchingPattern pat = switching_pattern(cfg, u);
  for (const PhaseEdges& p : pat.phases) {
    pts.push_back(detail::frac(p.rise + p.shift));
    pts.push_back(detail::frac(p.fall + p.shift));
    pts.push_back(detail::frac(0.5 + p.shift));
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  Mat3 acc = Mat3::Zero();
  Vec3 left = s1_abc(cfg, u, pts.front()).vec();
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double h = pts[i] - pts[i - 1];
    const Vec3 mid = s1_abc(cfg, u, 0.5 * (pts[i] + pts[i - 1])).vec();
    const Vec3 right = s1_abc(cfg, u, pts[i]).vec();
    acc += (h / 6.0) * (left * left.transpose() + 4.0 * mid * mid.transpose() + right * right.transpose());
    left = right;
  }
  return 0.5 * (acc + acc.transpose());
}

enum class Rank { Rank0, Rank1, Rank2 };

inline std::string to_string(Rank r) {
  switch (r) {
    case Rank::Rank0: return "0";
    case Rank::Rank1: return "1";
    case Rank::Rank2: return "2";
  }
  return "?";
}

struct RankTolerance {
  double rel = 1e-9;   // smallest/largest eigenvalue ratio below which rank is 1
  double abs = 1e-12;  // Frobenius norm [V^2] below which the matrix is zero
};

inline Rank rank_classify(const Mat2& m, RankTolerance tol = {}) {
  if (m.norm() <= tol.abs) return Rank::Rank0;
  Eigen::SelfAdjointEigenSolver<Mat2> es(m, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(1);
  return lo <= tol.rel * hi ? Rank::Rank1 : Rank::Rank2;
}

struct RippleMatrix {
  Mat2 m = Mat2::Zero();
  Rank rank = Rank::Rank0;

  double lambda() const { return m(0, 0); }
  double mu() const { return m(0, 1); }
  double nu() const { return m(1, 1); }

  /// 2-norm condition number; infinite when singular.
  double condition() const {
    Eigen::SelfAdjointEigenSolver<Mat2> es(m, Eigen::EigenvaluesOnly);
    const double lo = std::abs(es.eigenvalues()(0));
    const double hi = std::abs(es.eigenvalues()(1));
    return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  }
};

inline RippleMatrix make_ripple_matrix(const Mat2& m, RankTolerance tol = {}) {
  const Mat2 sym = 0.5 * (m + m.transpose());
  return {sym, rank_classify(sym, tol)};
}

inline RippleMatrix ripple_matrix_alphabeta(const PwmConfig& cfg, const Abc& u, RankTolerance tol = {}) {
  const ClarkeMat c = clarke_matrix();
  return make_ripple_matrix(c * ripple_matrix_abc(cfg, u) * c.transpose(), tol);
}

}  // namespace pwmsense
