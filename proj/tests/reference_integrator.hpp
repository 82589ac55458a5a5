#pragma once

// Test-only oracle: adaptive Dormand-Prince RK45 with step-doubling error
// control. Independent of the fixed-step integrator under test; shares only
// the rhs formulas.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "cisrl/dynamics.hpp"

namespace cisrl::testing {

inline Eigen::Vector2d integrate_reference(const State& x0, const Action& u,
                                           const CstrParams& p, double t_end,
                                           double tol = 1e-12) {
  // Dormand-Prince 5(4) coefficients
  static const double a21 = 1.0 / 5.0;
  static const double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static const double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static const double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                      a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
  static const double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0,
                      a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                      a65 = -5103.0 / 18656.0;
  static const double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0,
                      b4 = 125.0 / 192.0, b5 = -2187.0 / 6784.0,
                      b6 = 11.0 / 84.0;
  static const double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0,
                      e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                      e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;

  const auto f = [&](const Eigen::Vector2d& y) {
    return rhs(State::from_vec(y), u, p);
  };

  Eigen::Vector2d y = x0.vec();
  double t = 0.0;
  double h = std::min(1e-3, t_end);
  while (t < t_end) {
    h = std::min(h, t_end - t);
    const Eigen::Vector2d k1 = f(y);
    const Eigen::Vector2d k2 = f(y + h * a21 * k1);
    const Eigen::Vector2d k3 = f(y + h * (a31 * k1 + a32 * k2));
    const Eigen::Vector2d k4 = f(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    const Eigen::Vector2d k5 =
        f(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    const Eigen::Vector2d k6 = f(
        y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    const Eigen::Vector2d y5 =
        y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Eigen::Vector2d k7 = f(y5);
    const Eigen::Vector2d err_vec =
        h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double scale = tol + tol * std::max(std::abs(y[i]), std::abs(y5[i]));
      err = std::max(err, std::abs(err_vec[i]) / scale);
    }
    if (err <= 1.0) {
      t += h;
      y = y5;
    }
    const double factor =
        err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
    h *= std::clamp(factor, 0.2, 5.0);
    h = std::max(h, 1e-14);
  }
  return y;
}

}  // namespace cisrl::testing
