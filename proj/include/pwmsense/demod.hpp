#pragma once

// Rotor angle recovery from the PWM-induced current ripple: per-period
// estimation of the virtual measurement S(theta) A, then either the
// least-squares extraction (single carrier, works at rank 1) or direct
// inversion of A followed by a parameter-free angle read-out (interleaved).

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pwmsense/frames.hpp"
#include "pwmsense/motor.hpp"
#include "pwmsense/pwm.hpp"
#include "pwmsense/sim.hpp"

namespace pwmsense {

enum class Quality { Ok, DegenerateHeld, NearLimitHeld, LargeJump };

inline std::string to_string(Quality q) {
  switch (q) {
    case Quality::Ok: return "ok";
    case Quality::DegenerateHeld: return "degenerate-held";
    case Quality::NearLimitHeld: return "near-limit-held";
    case Quality::LargeJump: return "large-jump";
  }
  return "?";
}

struct VirtualMeasurement {
  Mat2 y = Mat2::Zero();
  double window_center = 0.0;
};

/// (cos 2theta, sin 2theta) estimate; not normalized.
struct HalfAnglePair {
  double cos2 = 1.0;
  double sin2 = 0.0;
  Quality quality = Quality::Ok;

  double half_angle() const { return 0.5 * std::atan2(sin2, cos2); }
};

/// theta_hat = half_angle + k pi.
struct AngleEstimate {
  double theta_hat = 0.0;
  long k = 0;
  Quality quality = Quality::Ok;
};

struct SaliencyEstimate {
  Mat2 s = Mat2::Zero();
  Quality quality = Quality::Ok;
};

// ---------------------------------------------------------------------------
// Prefilter

inline std::size_t prefilter_length(double window_fraction, int samples_per_period) {
  return static_cast<std::size_t>(std::floor(window_fraction * samples_per_period + 1e-9)) + 1;
}

/// Zero-phase moving average of a two-channel sequence: a causal box of len
/// samples run forward and then backward. Windows shrink at the ends.
inline std::vector<AlphaBeta> zero_phase_average(std::vector<AlphaBeta> x, std::size_t len) {
  if (len <= 1 || x.empty()) return x;
  const std::size_t m = x.size();
  auto pass = [&](bool forward) {
    std::vector<AlphaBeta> y(m);
    double acc_a = 0.0, acc_b = 0.0;
    for (std::size_t step = 0; step < m; ++step) {
      const std::size_t i = forward ? step : m - 1 - step;
      acc_a += x[i].alpha;
      acc_b += x[i].beta;
      std::size_t count = step + 1;
      if (step >= len) {
        const std::size_t drop = forward ? i - len : i + len;
        acc_a -= x[drop].alpha;
        acc_b -= x[drop].beta;
        count = len;
      }
      y[i] = {acc_a / static_cast<double>(count), acc_b / static_cast<double>(count)};
    }
    x.swap(y);
  };
  pass(true);
  pass(false);
  return x;
}

/// Zero-phase moving average of the current channels over window_fraction of
/// a carrier period (floor(window_fraction * N) + 1 samples per pass).
/// Timestamps and all other fields are unchanged; 0 is the identity.
inline SampleLog prefilter(const SampleLog& log, double window_fraction) {
  const std::size_t len = prefilter_length(window_fraction, log.pwm.samples_per_period);
  SampleLog out = log;
  if (len <= 1) return out;
  std::vector<AlphaBeta> cur(log.samples.size());
  for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = log.samples[i].i;
  cur = zero_phase_average(std::move(cur), len);
  for (std::size_t i = 0; i < cur.size(); ++i) out.samples[i].i = cur[i];
  return out;
}

// ---------------------------------------------------------------------------
// Virtual measurement

namespace detail {

inline Mat2 symmetric_pinv(const Mat2& g, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Mat2> es(g);
  const Vec2 ev = es.eigenvalues();
  const double top = std::max(std::abs(ev(0)), std::abs(ev(1)));
  Vec2 inv = Vec2::Zero();
  for (int k = 0; k < 2; ++k) {
    if (top > 0.0 && std::abs(ev(k)) > rel_tol * top) inv(k) = 1.0 / ev(k);
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// s1^ab(u_ref, k / N) for every sample of the log.
inline std::vector<AlphaBeta> ripple_shape(const SampleLog& log) {
  const std::size_t n = log.pwm.samples_per_period;
  std::vector<AlphaBeta> out(log.samples.size());
  for (std::size_t idx = 0; idx < out.size(); ++idx) {
    out[idx] = s1_alphabeta(log.pwm, log.samples[idx].u_ref, static_cast<double>(idx % n) / n);
  }
  return out;
}

/// Estimates S(theta) A^ab from one carrier period: window supplies the
/// timestamps, currents and shape the (possibly prefiltered) current samples
/// and s1^ab samples.
///
/// Both the currents and the shape are stripped of their best affine fit in
/// time; the detrended currents are then regressed on the detrended shape,
/// giving eps * S(theta) on the range of A^ab, and the result is multiplied
/// by the exact A^ab / eps. Regressing instead of plainly correlating keeps
/// the part of s1 that the affine fit absorbs from biasing the estimate.
inline VirtualMeasurement estimate_yv(std::span<const Sample> window, std::span<const AlphaBeta> currents,
                                      std::span<const AlphaBeta> shape, const PwmConfig& cfg,
                                      const RippleMatrix& a_ab) {
  const std::size_t n = static_cast<std::size_t>(cfg.samples_per_period);
  if (window.size() != n || currents.size() != n || shape.size() != n) {
    throw std::invalid_argument("estimate_yv: window holds " + std::to_string(window.size()) + " samples, expected " +
                                std::to_string(n));
  }
  const double dt = cfg.sample_spacing();
  const double t0 = window.front().t;
  for (std::size_t k = 0; k < n; ++k) {
    if (!(std::abs(window[k].t - (t0 + k * dt)) <= 1e-6 * dt)) {
      throw std::invalid_argument("estimate_yv: missing or irregular samples in window");
    }
  }

  Eigen::Matrix<double, Eigen::Dynamic, 2> cur(n, 2), reg(n, 2);
  Eigen::VectorXd sig(n);
  for (std::size_t k = 0; k < n; ++k) {
    sig(k) = static_cast<double>(k) / n;
    cur(k, 0) = currents[k].alpha;
    cur(k, 1) = currents[k].beta;
    reg(k, 0) = shape[k].alpha;
    reg(k, 1) = shape[k].beta;
  }
  sig.array() -= sig.mean();
  const double sxx = sig.squaredNorm();
  auto detrend = [&](Eigen::Matrix<double, Eigen::Dynamic, 2>& m) {
    for (int c = 0; c < 2; ++c) {
      m.col(c).array() -= m.col(c).mean();
      m.col(c) -= (sig.dot(m.col(c)) / sxx) * sig;
    }
  };
  detrend(cur);
  detrend(reg);

  const Mat2 cross = cur.transpose() * reg;
  const Mat2 gram = reg.transpose() * reg;
  const Mat2 coef = cross * detail::symmetric_pinv(gram, 1e-9);

  VirtualMeasurement vm;
  vm.y = coef * a_ab.m / cfg.epsilon;
  double tsum = 0.0;
  for (const Sample& s : window) tsum += s.t;
  vm.window_center = tsum / static_cast<double>(n);
  return vm;
}

/// Unfiltered form: the shape is s1^ab(u_ref, k / N).
inline VirtualMeasurement estimate_yv(std::span<const Sample> window, const PwmConfig& cfg, const Abc& u_ref) {
  const std::size_t n = static_cast<std::size_t>(cfg.samples_per_period);
  std::vector<AlphaBeta> shape(n);
  std::vector<AlphaBeta> cur(n);
  for (std::size_t k = 0; k < n; ++k) {
    shape[k] = s1_alphabeta(cfg, u_ref, static_cast<double>(k) / n);
    cur[k] = window[k].i;
  }
  return estimate_yv(window, cur, shape, cfg, ripple_matrix_alphabeta(cfg, u_ref));
}

// ---------------------------------------------------------------------------
// Single carrier: linear least squares

struct LsIntermediate {
  double lambda = 0.0, mu = 0.0, nu = 0.0;
  double y11 = 0.0, y12 = 0.0, y21 = 0.0, y22 = 0.0;
  double L = 0.0;

  static LsIntermediate from(const Mat2& yv, const RippleMatrix& a, const MotorParams& p) {
    if (!p.salient()) throw std::invalid_argument("least-squares extraction needs Ld != Lq");
    const double scale = 2.0 * p.Ld * p.Lq / (p.Ld + p.Lq);
    return {a.lambda(), a.mu(), a.nu(), scale * yv(0, 0), scale * yv(0, 1), scale * yv(1, 0), scale * yv(1, 1),
            (p.Ld + p.Lq) / (p.Lq - p.Ld)};
  }

  /// 4x2 system matrix P of P (cos 2theta, sin 2theta)^T = L d.
  Eigen::Matrix<double, 4, 2> system_matrix() const {
    Eigen::Matrix<double, 4, 2> m;
    m << lambda, mu, mu, nu, -mu, lambda, -nu, mu;
    return m;
  }

  Eigen::Vector4d rhs() const { return {y11 - lambda, y12 - mu, y21 - mu, y22 - nu}; }
};

inline HalfAnglePair extract_single_carrier(const Mat2& yv, const RippleMatrix& a, const MotorParams& p) {
  if (a.rank == Rank::Rank0) return {1.0, 0.0, Quality::DegenerateHeld};
  const LsIntermediate v = LsIntermediate::from(yv, a, p);
  const double den = v.lambda * v.lambda + 2.0 * v.mu * v.mu + v.nu * v.nu;
  const double c = v.lambda * v.y11 + v.mu * (v.y12 - v.y21) - v.nu * v.y22 - v.lambda * v.lambda + v.nu * v.nu;
  const double s = v.mu * (v.y11 + v.y22) + v.nu * v.y12 + v.lambda * v.y21 - 2.0 * v.mu * (v.lambda + v.nu);
  return {v.L * c / den, v.L * s / den, Quality::Ok};
}

// ---------------------------------------------------------------------------
// Interleaved carriers: saliency inversion

inline SaliencyEstimate extract_interleaved(const Mat2& yv, const RippleMatrix& a, double max_condition = 1e6) {
  if (a.rank != Rank::Rank2 || !(a.condition() <= max_condition)) return {Mat2::Zero(), Quality::NearLimitHeld};
  return {yv * a.m.inverse(), Quality::Ok};
}

/// Uses only the structure of S, no inductance values.
inline HalfAnglePair angle_from_saliency(const Mat2& s, double floor_rel = 1e-9) {
  const double x = s(0, 0) - s(1, 1);
  const double y = s(0, 1) + s(1, 0);
  const double r = std::hypot(x, y);
  if (!(r > floor_rel * std::abs(s.trace()))) return {1.0, 0.0, Quality::DegenerateHeld};
  return {x / r, y / r, Quality::Ok};
}

// ---------------------------------------------------------------------------
// Half-turn bookkeeping

/// Picks the branch raw + k pi nearest the previous estimate.
inline AngleEstimate unwrap_half_angle(const AngleEstimate& prev, double raw_half_angle) {
  const long k = std::lround((prev.theta_hat - raw_half_angle) / kPi);
  AngleEstimate out{raw_half_angle + static_cast<double>(k) * kPi, k, Quality::Ok};
  if (std::abs(out.theta_hat - prev.theta_hat) > kPi / 4.0) out.quality = Quality::LargeJump;
  return out;
}

inline AngleEstimate seed_estimate(double theta0) {
  return {theta0, std::lround(theta0 / kPi), Quality::Ok};
}

// ---------------------------------------------------------------------------
// Pipeline

struct DemodOptions {
  CarrierScheme extraction = CarrierScheme::SingleCarrier;
  double prefilter_fraction = 0.01;
  double max_condition = 1e6;
  RankTolerance rank_tol;
  double transient_skip = 0.1;  // [s] excluded from error statistics
};

struct PeriodEstimate {
  double t = 0.0;  // window center
  Abc u_ref;
  RippleMatrix a;
  Mat2 yv = Mat2::Zero();
  HalfAnglePair pair;
  std::optional<Mat2> saliency;
  AngleEstimate angle;
  double theta_true = std::numeric_limits<double>::quiet_NaN();

  double error() const { return angle.theta_hat - theta_true; }
};

/// prefilter -> per-period virtual measurement -> extraction -> unwrap.
/// The ripple shape regressor goes through the same prefilter as the currents.
/// Degenerate periods keep the previous pair and angle and carry the flag.
/// The half-turn ambiguity is resolved against seed_theta (by default the
/// logged true angle of the first sample).
inline std::vector<PeriodEstimate> run_pipeline(const SampleLog& log, const MotorParams& p,
                                                const DemodOptions& opt = {},
                                                std::optional<double> seed_theta = std::nullopt) {
  log.pwm.validate();
  const std::size_t n = log.pwm.samples_per_period;
  if (log.samples.empty() || log.samples.size() % n != 0) {
    throw std::invalid_argument("run_pipeline: sample count is not a whole number of carrier periods");
  }
  if (log.samples.size() > 1) {
    const double spacing = log.samples[1].t - log.samples[0].t;
    if (std::abs(spacing - log.pwm.sample_spacing()) > 1e-6 * log.pwm.sample_spacing()) {
      throw std::invalid_argument("run_pipeline: sample spacing does not match the PWM configuration");
    }
  }
  const double seed = seed_theta.value_or(log.samples.front().theta);
  if (!std::isfinite(seed)) throw std::invalid_argument("run_pipeline: no finite seed angle available");

  const std::size_t len = prefilter_length(opt.prefilter_fraction, log.pwm.samples_per_period);
  std::vector<AlphaBeta> currents(log.samples.size());
  for (std::size_t i = 0; i < currents.size(); ++i) currents[i] = log.samples[i].i;
  currents = zero_phase_average(std::move(currents), len);
  const std::vector<AlphaBeta> shape = zero_phase_average(ripple_shape(log), len);
  std::vector<PeriodEstimate> out;
  out.reserve(log.periods());
  AngleEstimate angle = seed_estimate(seed);
  HalfAnglePair pair{std::cos(2.0 * seed), std::sin(2.0 * seed)};

  for (std::size_t j = 0; j < log.periods(); ++j) {
    const auto win = log.period(j);
    const Abc u_ref = win.front().u_ref;
    for (const Sample& s : win) {
      if (s.u_ref.a != u_ref.a || s.u_ref.b != u_ref.b || s.u_ref.c != u_ref.c) {
        throw std::invalid_argument("run_pipeline: reference changes inside carrier period " + std::to_string(j));
      }
    }
    PeriodEstimate pe;
    pe.u_ref = u_ref;
    pe.a = ripple_matrix_alphabeta(log.pwm, u_ref, opt.rank_tol);
    const VirtualMeasurement vm = estimate_yv(win, std::span(currents).subspan(j * n, n),
                                              std::span(shape).subspan(j * n, n), log.pwm, pe.a);
    pe.t = vm.window_center;
    pe.yv = vm.y;

    double theta_sum = 0.0;
    for (const Sample& s : log.period(j)) theta_sum += s.theta;
    pe.theta_true = theta_sum / static_cast<double>(n);

    HalfAnglePair next;
    if (opt.extraction == CarrierScheme::SingleCarrier) {
      next = extract_single_carrier(vm.y, pe.a, p);
    } else {
      const SaliencyEstimate se = extract_interleaved(vm.y, pe.a, opt.max_condition);
      if (se.quality == Quality::Ok) {
        pe.saliency = se.s;
        next = angle_from_saliency(se.s);
      } else {
        next = {pair.cos2, pair.sin2, se.quality};
      }
    }

    if (next.quality == Quality::Ok) {
      pair = next;
      angle = unwrap_half_angle(angle, pair.half_angle());
    } else {
      angle.quality = next.quality;
    }
    pe.pair = {pair.cos2, pair.sin2, next.quality};
    pe.angle = angle;
    out.push_back(pe);
  }
  return out;
}

/// Largest |theta_hat - theta| over estimates at or after t_from.
inline double max_angle_error(std::span<const PeriodEstimate> est, double t_from) {
  double worst = 0.0;
  for (const PeriodEstimate& e : est) {
    if (e.t >= t_from) worst = std::max(worst, std::abs(e.error()));
  }
  return worst;
}

/// Largest entrywise |S_hat - S(theta)| over estimates at or after t_from that
/// carry a saliency reconstruction.
inline double max_saliency_error(std::span<const PeriodEstimate> est, const MotorParams& p, double t_from) {
  double worst = 0.0;
  for (const PeriodEstimate& e : est) {
    if (e.t < t_from || !e.saliency) continue;
    worst = std::max(worst, (*e.saliency - saliency(e.theta_true, p.Ld, p.Lq)).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace pwmsense
