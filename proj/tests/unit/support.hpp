#pragma once

#include "sechyp/common.hpp"
#include "sechyp/flow.hpp"
#include "sechyp/model.hpp"
#include "sechyp/rng.hpp"

#include <cmath>
#include <vector>

namespace testing_support {

using sechyp::Mat;
using sechyp::Vec;

inline Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }

/// Independent central differences (fixed step), used as a Jacobian oracle.
inline Mat central_jacobian(const sechyp::VectorFieldModel& m, const Vec& x, double h = 1e-6) {
  const int d = m.dim();
  Mat J(d, d);
  for (int i = 0; i < d; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (m.field(xp) - m.field(xm)) / (2 * h);
  }
  return J;
}

/// Classical fixed-step RK4, independent of the adaptive integrator.
inline Vec rk4(const sechyp::VectorFieldModel& m, Vec x, double T, double dt) {
  const int n = static_cast<int>(std::llround(T / dt));
  for (int k = 0; k < n; ++k) {
    const Vec k1 = m.field(x);
    const Vec k2 = m.field(x + 0.5 * dt * k1);
    const Vec k3 = m.field(x + 0.5 * dt * k2);
    const Vec k4 = m.field(x + dt * k3);
    x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return x;
}

inline const std::vector<Vec>& lorenz_points() {
  static const std::vector<Vec> pts =
      sechyp::attractor_sample(sechyp::VectorFieldModel::lorenz(), v3(1, 1, 20), 50.0, 2000, 0.05);
  return pts;
}

inline std::vector<Vec> every_nth(const std::vector<Vec>& v, std::size_t step, std::size_t count) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < v.size() && out.size() < count; i += step) out.push_back(v[i]);
  return out;
}

}  // namespace testing_support
