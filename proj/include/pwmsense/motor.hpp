#pragma once

// Unsaturated PMSM in the rotor frame. The state is the stator flux linkage
// (dq), the electrical speed and the unwrapped electrical angle.

#include <cmath>
#include <stdexcept>

#include "pwmsense/frames.hpp"

namespace pwmsense {

struct MotorParams {
  double Rs = 4.25;         // [ohm]
  double Ld = 43.25e-3;     // [H]
  double Lq = 69.05e-3;     // [H]
  double phi_m = 0.45;      // [Wb], rated_torque / (n sqrt2 I_rms)
  int pole_pairs = 2;
  double J = 1e-3;          // [kg m^2]
  double u_m = 270.0;       // PWM half-range [V]
  double rated_torque = 2.12;  // [N m]

  void validate() const {
    if (!(Rs > 0.0 && Ld > 0.0 && Lq > 0.0 && phi_m > 0.0 && J > 0.0 && u_m > 0.0 && rated_torque > 0.0) ||
        pole_pairs < 1) {
      throw std::invalid_argument("motor: all parameters must be strictly positive");
    }
  }

  bool salient() const { return Ld != Lq; }
};

struct MotorState {
  Dq phi{0.45, 0.0};  // stator flux [Wb]
  double omega = 0.0;  // electrical speed [rad/s]
  double theta = 0.0;  // electrical angle [rad], unwrapped

  static MotorState at_rest(const MotorParams& p, double theta0 = 0.0) { return {{p.phi_m, 0.0}, 0.0, theta0}; }
};

inline Dq flux_to_current(const Dq& phi, const MotorParams& p) {
  return {(phi.d - p.phi_m) / p.Ld, phi.q / p.Lq};
}

inline Dq current_to_flux(const Dq& i, const MotorParams& p) { return {p.Ld * i.d + p.phi_m, p.Lq * i.q}; }

/// Electromagnetic torque n * i^T J phi = n (i_q phi_d - i_d phi_q).
inline double torque(const Dq& i, const Dq& phi, const MotorParams& p) {
  return p.pole_pairs * (i.q * phi.d - i.d * phi.q);
}

inline Dq voltage_abc_to_dq(const Abc& u, double theta) { return alphabeta_to_dq(clarke(u), theta); }

/// Time derivative of the state under the rotor-frame voltage u.
inline MotorState dynamics(const MotorState& x, const Dq& u, double load_torque, const MotorParams& p) {
  const Dq i = flux_to_current(x.phi, p);
  MotorState dx;
  dx.phi.d = u.d - p.Rs * i.d + x.omega * x.phi.q;
  dx.phi.q = u.q - p.Rs * i.q - x.omega * x.phi.d;
  dx.omega = (p.pole_pairs / p.J) * (torque(i, x.phi, p) - load_torque);
  dx.theta = x.omega;
  return dx;
}

/// Same, with the voltage given in the phase frame (so it rotates with theta).
inline MotorState dynamics_abc(const MotorState& x, const Abc& u, double load_torque, const MotorParams& p) {
  return dynamics(x, voltage_abc_to_dq(u, x.theta), load_torque, p);
}

inline MotorState axpy(const MotorState& x, double h, const MotorState& dx) {
  return {{x.phi.d + h * dx.phi.d, x.phi.q + h * dx.phi.q}, x.omega + h * dx.omega, x.theta + h * dx.theta};
}

/// One classical RK4 step with the phase voltage held constant.
inline MotorState rk4_step(const MotorState& x, const Abc& u, double load_torque, double h, const MotorParams& p) {
  const MotorState k1 = dynamics_abc(x, u, load_torque, p);
  const MotorState k2 = dynamics_abc(axpy(x, 0.5 * h, k1), u, load_torque, p);
  const MotorState k3 = dynamics_abc(axpy(x, 0.5 * h, k2), u, load_torque, p);
  const MotorState k4 = dynamics_abc(axpy(x, h, k3), u, load_torque, p);
  MotorState out = x;
  const double w = h / 6.0;
  out.phi.d += w * (k1.phi.d + 2.0 * k2.phi.d + 2.0 * k3.phi.d + k4.phi.d);
  out.phi.q += w * (k1.phi.q + 2.0 * k2.phi.q + 2.0 * k3.phi.q + k4.phi.q);
  out.omega += w * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega);
  out.theta += w * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta);
  return out;
}

inline AlphaBeta stator_current(const MotorState& x, const MotorParams& p) {
  return dq_to_alphabeta(flux_to_current(x.phi, p), x.theta);
}

/// Stored energy: rotor kinetic plus magnetic (relative to the magnet-only flux).
inline double stored_energy(const MotorState& x, const MotorParams& p) {
  const double n = p.pole_pairs;
  const double dd = x.phi.d - p.phi_m;
  return 0.5 * p.J * x.omega * x.omega / (n * n) + 0.5 * dd * dd / p.Ld + 0.5 * x.phi.q * x.phi.q / p.Lq;
}

}  // namespace pwmsense
