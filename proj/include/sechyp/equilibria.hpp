#pragma once

#include "sechyp/common.hpp"
#include "sechyp/model.hpp"

#include <json.hpp>

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

namespace sechyp {

/// |Re lambda| below this counts as a zero real part.
inline constexpr double kSpectralGapTol = 1e-8;

struct EquilibriumReport {
  Vec position;
  /// Ordered by increasing real part (ties by imaginary part).
  std::vector<std::complex<double>> eigenvalues;
  bool hyperbolic = false;
  int index = 0;
  bool lorenz_like = false;
  std::optional<double> lambda_s;
  std::optional<double> lambda_u;
  double residual = 0.0;
  int d_s = 1;
};

/// Damped Newton from n_seeds scrambled-Halton seeds in the box; roots are
/// polished to residual < 1e-12 and deduplicated at distance 1e-6. Sorted
/// lexicographically.
std::vector<Vec> find_equilibria(const VectorFieldModel& model, const Box& search_box, int n_seeds,
                                 std::uint64_t seed = 0);

/// Eigenvalues of a real matrix sorted by real part.
std::vector<std::complex<double>> sorted_spectrum(const Mat& a);

/// Spectrum, hyperbolicity, index and the generalized Lorenz-like test
/// -lambda_u < lambda_s < 0 < lambda_u with lambda_s the (d_s+1)-th eigenvalue.
EquilibriumReport classify_equilibrium(const VectorFieldModel& model, const Vec& sigma, int d_s);

struct DissipativityReport {
  struct CondA {
    Vec position;
    double value = 0.0;
    bool pass = false;
  };
  int d_s = 1;
  double q = 0.0;
  std::vector<CondA> cond_a;
  bool cond_a_pass = true;
  /// Sampled sup over the attractor sample.
  double cond_b = 0.0;
  bool cond_b_pass = false;
  /// Optional sup over a user box grid (reported beside the sampled one).
  std::optional<double> cond_b_grid;
  std::optional<double> q_max;
  std::optional<double> q_max_a;
  std::optional<double> q_max_b;
  bool passed() const { return cond_a_pass && cond_b_pass; }
};

struct DissipativityOptions {
  /// Equilibria to test in condition (a); when empty they are searched for in
  /// the sample's bounding box enlarged by 25% per side.
  std::vector<Vec> equilibria;
  bool search_equilibria = true;
  int n_seeds = 200;
  std::uint64_t seed = 0;
  /// Optional grid box for an additional sup of condition (b).
  std::optional<Box> grid_box;
  int grid_per_axis = 11;
};

/// Value of Re(lambda_1 - lambda_{d_s+1} + q lambda_d).
double cond_a_value(const std::vector<std::complex<double>>& spectrum, int d_s, double q);
/// div G(x) + (d_s q - 1) ||DG(x)||_F.
double cond_b_value(const VectorFieldModel& model, const Vec& x, int d_s, double q);

DissipativityReport strong_dissipativity(const VectorFieldModel& model, int d_s, double q,
                                         const std::vector<Vec>& attractor_sample,
                                         const DissipativityOptions& opts = {});

nlohmann::json to_json(const EquilibriumReport& r);
nlohmann::json to_json(const DissipativityReport& r);

}  // namespace sechyp
