#pragma once

#include "sechyp/common.hpp"
#include "sechyp/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace sechyp {

struct SplittingOptions {
  double tol = 1e-9;
  /// Renormalization / checkpoint interval.
  double interval = 0.5;
  /// Length of the backward excursion used to estimate E_cu (capped by T_est).
  double backward_window = 1.0;
  /// Skip the E_cu estimate (E_cu is then the orthogonal complement of E_s).
  bool need_cu = true;
};

/// Finite-time estimate of T_x M = E_s + E_cu.
///
/// E_s spans the d_s most contracted right singular directions of
/// D phi_{T_est}(x), obtained by QR iteration on the inverse one-interval
/// Jacobians so that no ill-conditioned product is ever formed. E_cu is the
/// push-forward of a complement of E_s from a short backward excursion, so it
/// approximates the covariant center-unstable bundle; at regular points its
/// first column is G(x)/|G(x)|.
struct SplittingEstimate {
  Vec base;
  int d_s = 1;
  Mat E_s;
  Mat E_cu;
  double T_est = 0.0;
  /// sigma_{d_s+1} / sigma_{d_s} of D phi_{T_est}(x); > 1 indicates domination.
  double gap = 1.0;
  /// log singular values of D phi_{T_est}(x), ascending.
  Vec log_singular;
  /// Smallest principal angle between E_s and E_cu.
  double min_angle = 0.0;
  /// Angle between G(x) and the E_cu estimate before re-basing.
  double flow_angle = 0.0;
  bool low_confidence = false;
};

SplittingEstimate finite_time_splitting(const VectorFieldModel& model, const Vec& x, int d_s,
                                        double T_est, const SplittingOptions& opts = {});

/// Largest principal angle between the column spans of two orthonormal frames.
double principal_angle(const Mat& a, const Mat& b);
/// Smallest principal angle.
double min_principal_angle(const Mat& a, const Mat& b);

struct PointDiagnostic {
  int point_index = 0;
  double margin = 0.0;
  bool pass = false;
  /// Per-point rate for expansion/domination reports (slope of the log fit).
  double rate = 0.0;
};

/// Shared shape of the cone, expansion and domination reports.
struct CheckReport {
  std::string check;
  int sampled_points = 0;
  double a = 0.0;
  double T = 0.0;
  int d_s = 1;
  double pass_fraction = 0.0;
  double worst_margin = 0.0;
  std::vector<PointDiagnostic> diagnostics;
  bool passed = false;
  std::string note;
};

struct ExpansionReport : CheckReport {
  /// Mean of the per-point least-squares slopes of min-over-planes log area.
  double theta_hat = 0.0;
  /// exp(min per-point intercept).
  double K_hat = 0.0;
};

struct DominationReport : CheckReport {
  /// Mean per-point slope of log(||D phi_t|E_s|| * ||D phi_{-t}|E_cu||).
  double slope = 0.0;
};

struct CheckOptions {
  double T_est = 5.0;
  std::uint64_t seed = 0;
  int cone_samples = 50;
  int random_planes = 20;
  SplittingOptions splitting;
};

CheckReport cone_invariance(const VectorFieldModel& model, const std::vector<Vec>& points, int d_s,
                            double a, double T, const CheckOptions& opts = {});

ExpansionReport sectional_expansion(const VectorFieldModel& model, const std::vector<Vec>& points,
                                    int d_s, double T, const CheckOptions& opts = {});

DominationReport domination(const VectorFieldModel& model, const std::vector<Vec>& points, int d_s,
                            double T, const CheckOptions& opts = {});

struct LyapunovResult {
  /// Sorted descending.
  std::vector<double> exponents;
  /// max - min of the running estimates over the last 10% of the window.
  std::vector<double> band;
  /// Time average of div G along the same orbit (Liouville cross-check).
  double mean_divergence = 0.0;
  bool wide_band = false;
  double T = 0.0;
};

struct LyapunovOptions {
  double transient = 0.0;
  double interval = 0.5;
  double tol = 1e-9;
  /// Band width above which the estimate is flagged.
  double band_flag = 0.05;
};

/// Benettin QR method with a full frame.
LyapunovResult lyapunov_spectrum(const VectorFieldModel& model, const Vec& x0, double T,
                                 const LyapunovOptions& opts = {});

nlohmann::json to_json(const SplittingEstimate& s);
nlohmann::json to_json(const CheckReport& r);
nlohmann::json to_json(const ExpansionReport& r);
nlohmann::json to_json(const DominationReport& r);
nlohmann::json to_json(const LyapunovResult& r);

/// "point_index,margin,pass" rows.
std::string diagnostics_csv(const CheckReport& r);

}  // namespace sechyp
