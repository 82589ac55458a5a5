#pragma once

#include <Eigen/Core>

#include <cmath>

namespace cisrl {

// Physical operating envelope of the reactor and the coolant range.
inline constexpr double kConcMin = 0.0;     // mol/L
inline constexpr double kConcMax = 1.0;     // mol/L
inline constexpr double kTempMin = 345.0;   // K
inline constexpr double kTempMax = 355.0;   // K
inline constexpr double kCoolantMin = 285.0;  // K
inline constexpr double kCoolantMax = 315.0;  // K

/// Reactor state: reactant concentration (mol/L) and temperature (K).
struct State {
  double c_a = 0.0;
  double temp = 0.0;

  Eigen::Vector2d vec() const { return {c_a, temp}; }
  static State from_vec(const Eigen::Vector2d& v) { return {v[0], v[1]}; }
  bool finite() const { return std::isfinite(c_a) && std::isfinite(temp); }
};

/// Manipulated input: coolant temperature (K), admissible in [285, 315].
struct Action {
  double t_c = 300.0;

  bool admissible() const { return t_c >= kCoolantMin && t_c <= kCoolantMax; }
};

/// CSTR model parameters. Defaults are the benchmark values for the
/// irreversible first-order exothermic reaction with a cooling jacket.
struct CstrParams {
  double flow = 100.0;          // q, inlet/outlet flow (L/min)
  double volume = 100.0;        // V, reaction mixture volume (L)
  double k0 = 7.2e10;           // Arrhenius pre-exponential factor (1/min)
  double e_over_r = 8750.0;     // activation energy over gas constant (K)
  double neg_dh = 5.0e4;        // -dH, heat of reaction (J/mol)
  double rho = 1000.0;          // mixture density (g/L)
  double c_p = 0.239;           // specific heat capacity (J/(g K))
  double ua = 5.0e4;            // jacket heat transfer coefficient (J/(min K))
  double c_af = 1.0;            // feed concentration (mol/L)
  double t_f = 350.0;           // feed temperature (K)

  bool valid() const {
    return flow > 0 && volume > 0 && k0 > 0 && e_over_r > 0 && neg_dh > 0 &&
           rho > 0 && c_p > 0 && ua > 0 && c_af > 0 && t_f > 0;
  }
};

/// Sampling period and internal RK4 step count (zero-order hold on the input).
struct IntegratorConfig {
  double dt = 0.1;    // sampling period (min)
  int substeps = 10;  // internal RK4 steps per sampling period

  bool valid() const { return dt > 0.0 && substeps >= 1; }
};

/// Continuous-time right-hand side of the two CSTR balance equations.
/// Returns (dc_A/dt, dT/dt) in (mol/(L min), K/min).
inline Eigen::Vector2d rhs(const State& x, const Action& u,
                           const CstrParams& p) {
  const double rate = p.k0 * std::exp(-p.e_over_r / x.temp) * x.c_a;
  const double dilution = p.flow / p.volume;
  const double dca = dilution * (p.c_af - x.c_a) - rate;
  const double dtemp = dilution * (p.t_f - x.temp) +
                       (p.neg_dh / (p.rho * p.c_p)) * rate +
                       (p.ua / (p.volume * p.rho * p.c_p)) * (u.t_c - x.temp);
  return {dca, dtemp};
}

/// One sampling period of the discrete-time map: classical RK4 applied
/// `substeps` times with the input held constant. Divergence is reported by
/// returning a non-finite state; no clamping is applied.
inline State step(const State& x, const Action& u, const CstrParams& p,
                  const IntegratorConfig& cfg) {
  const double h = cfg.dt / cfg.substeps;
  Eigen::Vector2d y = x.vec();
  for (int i = 0; i < cfg.substeps; ++i) {
    const State s0 = State::from_vec(y);
    const Eigen::Vector2d k1 = rhs(s0, u, p);
    const Eigen::Vector2d k2 = rhs(State::from_vec(y + 0.5 * h * k1), u, p);
    const Eigen::Vector2d k3 = rhs(State::from_vec(y + 0.5 * h * k2), u, p);
    const Eigen::Vector2d k4 = rhs(State::from_vec(y + h * k3), u, p);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return State::from_vec(y);
}

/// Both box constraints hold (closed intervals).
inline bool in_physical_bounds(const State& x) {
  return x.c_a >= kConcMin && x.c_a <= kConcMax && x.temp >= kTempMin &&
         x.temp <= kTempMax;
}

}  // namespace cisrl
