#pragma once

// Switching-exact simulation of the PWM-fed motor under a cascaded PI law
// that uses the measured angle, producing the sampled log consumed by the
// demodulator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pwmsense/frames.hpp"
#include "pwmsense/motor.hpp"
#include "pwmsense/pwm.hpp"

namespace pwmsense {

// ---------------------------------------------------------------------------
// Controller

struct ControllerTuning {
  double speed_bandwidth_hz = 5.0;
  double current_bandwidth_hz = 200.0;
  double max_current = 5.0;        // |i_q| reference limit [A]
  double voltage_fraction = 0.95;  // phase voltage limit as a fraction of u_m
};

struct ControllerGains {
  double speed_kp = 0.0;
  double speed_ki = 0.0;
  double d_kp = 0.0;
  double d_ki = 0.0;
  double q_kp = 0.0;
  double q_ki = 0.0;
  double max_current = 5.0;
  double voltage_fraction = 0.95;

  /// Pole-zero cancelling current loops; speed loop PI zero a factor 4
  /// below crossover.
  static ControllerGains tuned(const MotorParams& p, const ControllerTuning& t = {}) {
    const double wc_i = 2.0 * kPi * t.current_bandwidth_hz;
    const double wc_w = 2.0 * kPi * t.speed_bandwidth_hz;
    const double plant = p.pole_pairs * p.pole_pairs * p.phi_m / p.J;  // d omega/dt per A of i_q
    ControllerGains g;
    g.d_kp = p.Ld * wc_i;
    g.d_ki = p.Rs * wc_i;
    g.q_kp = p.Lq * wc_i;
    g.q_ki = p.Rs * wc_i;
    g.speed_kp = wc_w / plant;
    g.speed_ki = g.speed_kp * wc_w / 4.0;
    g.max_current = t.max_current;
    g.voltage_fraction = t.voltage_fraction;
    return g;
  }
};

struct ControllerState {
  double speed_integral = 0.0;  // contributes to the i_q reference [A]
  double d_integral = 0.0;      // [V]
  double q_integral = 0.0;      // [V]
};

struct ControllerMeasurement {
  Dq i;  // measured current, rotor frame [A]
  double omega = 0.0;
  double theta = 0.0;
};

struct ControllerOutput {
  Dq u_dq;
  Abc u_abc;
  bool saturated = false;
};

/// One update of the cascaded PI law (speed -> i_q, i_d = 0, currents ->
/// voltage with back-emf decoupling). Called once per carrier period with
/// dt = epsilon; the output is scaled down so that no phase exceeds
/// voltage_fraction * u_m, in which case the current integrators are frozen.
inline ControllerOutput controller_step(ControllerState& st, const ControllerMeasurement& m, double speed_target,
                                        const MotorParams& p, const ControllerGains& g, double dt) {
  const double e_w = speed_target - m.omega;
  double speed_int = st.speed_integral + g.speed_ki * e_w * dt;
  double iq_ref = g.speed_kp * e_w + speed_int;
  if (std::abs(iq_ref) > g.max_current) {
    iq_ref = std::copysign(g.max_current, iq_ref);
    speed_int = st.speed_integral;
  }

  const double e_d = 0.0 - m.i.d;
  const double e_q = iq_ref - m.i.q;
  const double d_int = st.d_integral + g.d_ki * e_d * dt;
  const double q_int = st.q_integral + g.q_ki * e_q * dt;

  const Dq phi = current_to_flux(m.i, p);
  const Dq ff{-m.omega * phi.q, m.omega * phi.d};
  Dq u{ff.d + g.d_kp * e_d + d_int, ff.q + g.q_kp * e_q + q_int};

  ControllerOutput out;
  Abc uabc = inv_clarke(dq_to_alphabeta(u, m.theta));
  const double peak = std::max({std::abs(uabc.a), std::abs(uabc.b), std::abs(uabc.c)});
  const double limit = g.voltage_fraction * p.u_m;
  if (peak > limit) {
    const double k = limit / peak;
    u = {u.d * k, u.q * k};
    uabc = {uabc.a * k, uabc.b * k, uabc.c * k};
    out.saturated = true;
  } else {
    st.d_integral = d_int;
    st.q_integral = q_int;
  }
  st.speed_integral = speed_int;
  out.u_dq = u;
  out.u_abc = uabc;
  return out;
}

// ---------------------------------------------------------------------------
// One carrier period

enum class VoltageMode { Switched, Averaged };

struct PeriodTrace {
  MotorState end;
  std::vector<MotorState> samples;  // state at sigma = k / samples_per_period
};

/// Integrates one carrier period with the reference held constant. Substeps
/// never straddle a switching edge or an ADC instant; within each constant
/// voltage piece the step is at most epsilon / base_steps.
inline PeriodTrace integrate_period(const MotorState& x0, const Abc& u_ref, double load_torque, const PwmConfig& cfg,
                                    const MotorParams& p, VoltageMode mode = VoltageMode::Switched,
                                    int base_steps = 64) {
  const int n = cfg.samples_per_period;
  const SwitchingPattern pat = switching_pattern(cfg, u_ref);

  std::vector<double> pts = pat.breakpoints();
  for (int k = 0; k < n; ++k) pts.push_back(static_cast<double>(k) / n);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

  for (const SwitchingEdge& e : pat.edges()) {
    if (!std::binary_search(pts.begin(), pts.end(), e.tau)) {
      throw std::logic_error("integrate_period: switching edge missing from the step grid");
    }
  }

  PeriodTrace out;
  out.samples.reserve(n);
  MotorState x = x0;
  int next_sample = 0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double a = pts[i];
    const double b = pts[i + 1];
    if (next_sample < n && a == static_cast<double>(next_sample) / n) {
      out.samples.push_back(x);
      ++next_sample;
    }
    const Abc u = mode == VoltageMode::Switched ? modulate_abc(cfg, u_ref, 0.5 * (a + b)) : u_ref;
    const int steps = std::max(1, static_cast<int>(std::ceil((b - a) * base_steps - 1e-9)));
    const double h = (b - a) * cfg.epsilon / steps;
    for (int s = 0; s < steps; ++s) x = rk4_step(x, u, load_torque, h, p);
  }
  out.end = x;
  return out;
}

// ---------------------------------------------------------------------------
// Scenario

struct SpikeModel {
  bool enabled = false;
  double amplitude_fraction = 0.05;  // of the peak phase current
  double decay = 0.002;              // time constant in carrier periods
};

struct ScenarioConfig {
  double rest_duration = 0.5;    // [s]
  double ramp_end_time = 8.5;    // [s]
  double final_elec_freq = 5.0;  // [Hz], electrical
  double load_fraction = 0.4;    // of rated torque
  double total_duration = 9.0;   // [s]
  double initial_theta = 0.0;    // [rad]
  PwmConfig pwm;
  ControllerTuning tuning;
  SpikeModel spikes;
  double noise_std = 0.0;  // white current noise [A]
  std::uint64_t seed = 1;

  void validate() const {
    pwm.validate();
    if (!(load_fraction >= 0.0 && load_fraction <= 1.0)) {
      throw std::invalid_argument("scenario: load_fraction must lie in [0, 1]");
    }
    if (!(rest_duration >= 0.0 && ramp_end_time >= rest_duration && total_duration > 0.0)) {
      throw std::invalid_argument("scenario: times must satisfy 0 <= rest_duration <= ramp_end_time");
    }
    if (!(final_elec_freq >= 0.0)) throw std::invalid_argument("scenario: final_elec_freq must be >= 0");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("scenario: noise_std must be >= 0");
    if (!(spikes.amplitude_fraction >= 0.0 && spikes.decay >= 0.0)) {
      throw std::invalid_argument("scenario: spike amplitude and decay must be >= 0");
    }
  }

  /// Electrical speed reference [rad/s].
  double speed_reference(double t) const {
    const double w_end = 2.0 * kPi * final_elec_freq;
    if (t <= rest_duration) return 0.0;
    if (t >= ramp_end_time) return w_end;
    return w_end * (t - rest_duration) / (ramp_end_time - rest_duration);
  }

  std::size_t periods() const { return static_cast<std::size_t>(std::llround(total_duration / pwm.epsilon)); }

  /// The same scenario compressed in time to the given duration.
  ScenarioConfig shortened(double duration) const {
    ScenarioConfig c = *this;
    const double k = duration / total_duration;
    c.rest_duration *= k;
    c.ramp_end_time *= k;
    c.total_duration = duration;
    return c;
  }
};

struct Sample {
  double t = 0.0;
  AlphaBeta i;
  Abc u_ref;
  double theta = 0.0;  // ground truth, NaN when unknown
  double omega = 0.0;
};

struct SampleLog {
  PwmConfig pwm;
  std::vector<Sample> samples;

  std::size_t periods() const { return samples.size() / pwm.samples_per_period; }

  std::span<const Sample> period(std::size_t j) const {
    const std::size_t n = pwm.samples_per_period;
    return std::span<const Sample>(samples).subspan(j * n, n);
  }
};

inline double sample_time(std::size_t index, const PwmConfig& cfg) {
  return static_cast<double>(index) * cfg.epsilon / cfg.samples_per_period;
}

/// One switching pattern per logged period, rebuilt from the held references.
inline std::vector<SwitchingPattern> switching_patterns(const SampleLog& log) {
  std::vector<SwitchingPattern> out;
  out.reserve(log.periods());
  for (std::size_t j = 0; j < log.periods(); ++j) out.push_back(switching_pattern(log.pwm, log.period(j)[0].u_ref));
  return out;
}

inline double peak_phase_current(const SampleLog& log) {
  double peak = 0.0;
  for (const Sample& s : log.samples) {
    const Abc i = inv_clarke(s.i);
    peak = std::max({peak, std::abs(i.a), std::abs(i.b), std::abs(i.c)});
  }
  return peak;
}

/// Adds a decaying current impulse on the switching phase after every edge,
/// positive for rising edges. decay is the time constant in carrier periods;
/// decay = 0 puts the whole impulse on the first sample at or after the edge.
inline SampleLog inject_spikes(const SampleLog& log, std::span<const SwitchingPattern> patterns, double amplitude,
                               double decay) {
  SampleLog out = log;
  if (amplitude == 0.0) return out;
  const std::size_t n = log.pwm.samples_per_period;
  const double eps = log.pwm.epsilon;
  const double tau = decay * eps;
  const std::size_t lookback = static_cast<std::size_t>(std::ceil(50.0 * decay)) + 1;

  for (std::size_t j = 0; j < patterns.size() && j < log.periods(); ++j) {
    for (const SwitchingEdge& e : patterns[j].edges()) {
      const double t_edge = (static_cast<double>(j) + e.tau) * eps;
      const std::size_t first = static_cast<std::size_t>(std::ceil((j + e.tau) * n - 1e-9));
      const std::size_t last = std::min(out.samples.size(), (j + 1 + lookback) * n);
      for (std::size_t idx = first; idx < last; ++idx) {
        const double dt = std::max(0.0, out.samples[idx].t - t_edge);
        double mag;
        if (tau > 0.0) {
          mag = amplitude * std::exp(-dt / tau);
          if (mag < 1e-300) break;
        } else {
          mag = idx == first ? amplitude : 0.0;
          if (idx > first) break;
        }
        Abc spike;
        spike[e.phase] = e.direction * mag;
        const AlphaBeta s = clarke(spike);
        out.samples[idx].i.alpha += s.alpha;
        out.samples[idx].i.beta += s.beta;
      }
    }
  }
  return out;
}

/// Applies the scenario's spike model with amplitude relative to the peak
/// phase current of the log.
inline SampleLog apply_spike_model(const SampleLog& log, const SpikeModel& m) {
  if (!m.enabled) return log;
  const auto pats = switching_patterns(log);
  return inject_spikes(log, pats, m.amplitude_fraction * peak_phase_current(log), m.decay);
}

/// Full closed-loop run. Once per period the controller sees the true angle
/// and speed, and the rotor-frame current averaged over the previous period
/// (ripple-free to second order whatever the carrier scheme).
inline SampleLog run_scenario(const ScenarioConfig& cfg, const MotorParams& p) {
  cfg.validate();
  p.validate();
  const ControllerGains gains = ControllerGains::tuned(p, cfg.tuning);
  const PwmConfig& pwm = cfg.pwm;
  const std::size_t periods = cfg.periods();
  const std::size_t n = pwm.samples_per_period;
  const double load = cfg.load_fraction * p.rated_torque;

  SampleLog log;
  log.pwm = pwm;
  log.samples.reserve(periods * n);

  MotorState x = MotorState::at_rest(p, cfg.initial_theta);
  ControllerState ctl;
  int saturated_run = 0;
  Dq i_meas = flux_to_current(x.phi, p);
  for (std::size_t j = 0; j < periods; ++j) {
    const double t0 = static_cast<double>(j) * pwm.epsilon;
    const ControllerMeasurement meas{i_meas, x.omega, x.theta};
    const ControllerOutput u = controller_step(ctl, meas, cfg.speed_reference(t0), p, gains, pwm.epsilon);
    saturated_run = u.saturated ? saturated_run + 1 : 0;
    if (saturated_run > 100) {
      throw std::runtime_error("run_scenario: controller saturated for more than 100 consecutive periods at t = " +
                               std::to_string(t0) + " s");
    }
    const PeriodTrace tr = integrate_period(x, u.u_abc, load, pwm, p);
    i_meas = {0.0, 0.0};
    for (std::size_t k = 0; k < n; ++k) {
      const MotorState& xs = tr.samples[k];
      log.samples.push_back({sample_time(j * n + k, pwm), stator_current(xs, p), u.u_abc, xs.theta, xs.omega});
      const Dq i = flux_to_current(xs.phi, p);
      i_meas.d += i.d / n;
      i_meas.q += i.q / n;
    }
    x = tr.end;
  }

  if (cfg.noise_std > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (Sample& s : log.samples) {
      s.i.alpha += noise(rng);
      s.i.beta += noise(rng);
    }
  }
  return apply_spike_model(log, cfg.spikes);
}

}  // namespace pwmsense
