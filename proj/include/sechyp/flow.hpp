#pragma once

#include "sechyp/common.hpp"
#include "sechyp/model.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace sechyp {

/// Right-hand side of an autonomous ODE y' = f(y).
using OdeRhs = std::function<void(const Vec& y, Vec& dy)>;

/// Number of accepted integrator steps since process start (manifest bookkeeping).
std::uint64_t total_steps();

/// Adaptive Dormand-Prince 5(4) stepper with the classic 4th-order continuous
/// extension. Integrates from t0 towards t_end (either direction); every
/// accepted step keeps its RMS local error estimate below tol.
class DormandPrince {
 public:
  static constexpr double kMinStep = 1e-12;
  /// Accepted steps allowed per integration; slow blow-ups end here.
  static constexpr long kMaxSteps = 5'000'000;

  DormandPrince(OdeRhs rhs, Vec y0, double t0, double t_end, double tol);

  bool done() const { return t_ == t_end_; }
  /// Advances one accepted step. Throws IntegrationFailure / DivergenceError.
  void step();

  double t() const { return t_; }
  const Vec& y() const { return y_; }
  double t_prev() const { return t_prev_; }
  const Vec& y_prev() const { return y_prev_; }
  /// Derivative f(y) at the current point.
  const Vec& dy() const { return k_[0]; }
  /// Dense output inside the last accepted step [t_prev, t].
  Vec dense(double t) const;
  void dense(double t, Vec& out) const;
  /// Interpolation coefficients of the last step (5 blocks of the state size).
  const std::array<Vec, 5>& coefficients() const { return cont_; }

 private:
  double initial_step() const;
  double error_norm(const Vec& err) const;

  OdeRhs rhs_;
  double t_, t_end_, tol_, h_, dir_;
  double t_prev_;
  Vec y_, y_prev_;
  std::array<Vec, 7> k_;
  std::array<Vec, 5> cont_;
  Vec ytmp_, ynew_, err_;
  bool has_prev_ = false;
  long n_steps_ = 0;
};

/// Dense-output solution of the flow over [t0, t1].
class Trajectory {
 public:
  struct Node {
    double t;
    Vec x;
    /// Continuous-extension coefficients on [t, next node time]; empty for the last node.
    std::array<Vec, 5> coeffs;
  };

  Trajectory(std::string model_id, double t0, double t1, double tol, std::vector<Node> nodes);

  const std::string& model_id() const { return model_id_; }
  double t0() const { return t0_; }
  double t1() const { return t1_; }
  double tol() const { return tol_; }
  int dim() const { return static_cast<int>(nodes_.front().x.size()); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Vec& front() const { return nodes_.front().x; }
  const Vec& back() const { return nodes_.back().x; }

  /// Dense evaluation; exact at node times. Throws RangeError outside the span.
  Vec at(double t) const;

  /// CSV with header "t,x1,...,xd": the nodes, or a uniform grid when dt > 0.
  std::string to_csv(double dt = 0.0) const;

 private:
  std::string model_id_;
  double t0_, t1_, tol_;
  std::vector<Node> nodes_;
};

/// Integrates phi_t(x0) over [t0, t1]; t1 < t0 integrates -G backwards.
/// tol must lie in [1e-12, 1e-3].
Trajectory integrate(const VectorFieldModel& model, const Vec& x0, double t0, double t1,
                     double tol = 1e-9);
inline Trajectory integrate(const VectorFieldModel& model, const Vec& x0,
                            std::pair<double, double> span, double tol = 1e-9) {
  return integrate(model, x0, span.first, span.second, tol);
}

Vec flow_at(const Trajectory& traj, double t);

/// phi_T(x0) without storing the trajectory.
Vec flow_point(const VectorFieldModel& model, const Vec& x0, double T, double tol = 1e-9);

/// Evolution of a d x k frame under the tangent flow with periodic QR renormalization.
struct FrameEvolution {
  std::string model_id;
  int k = 0;
  std::vector<double> times;
  std::vector<Vec> points;
  /// Orthonormal frames at the recorded times.
  std::vector<Mat> frames;
  /// Accumulated log growth per column (log of R diagonals).
  std::vector<Vec> column_log_growth;
  /// Accumulated log area growth of the planes spanned by column pairs (i < j),
  /// pairs enumerated row-major.
  std::vector<Vec> pair_log_growth;
  std::vector<std::pair<int, int>> pairs;
};

/// Integrates x' = G(x), V' = DG(x) V from (x0, V0) over [0, T], renormalizing
/// by QR every `renorm` time units.
FrameEvolution tangent_flow(const VectorFieldModel& model, const Vec& x0, const Mat& V0, double T,
                            double tol = 1e-9, double renorm = 0.5);

/// One joint integration of (x, V) over a time interval; no renormalization.
std::pair<Vec, Mat> propagate_frame(const VectorFieldModel& model, const Vec& x0, const Mat& V0,
                                    double T, double tol = 1e-9);

/// The orbit of x0 sampled every `interval` up to T, together with the
/// one-interval Jacobians steps[k] = D phi over [times[k], times[k+1]].
struct JacobianChain {
  std::vector<double> times;
  std::vector<Vec> points;
  std::vector<Mat> steps;
};

JacobianChain jacobian_chain(const VectorFieldModel& model, const Vec& x0, double T,
                             double interval = 0.5, double tol = 1e-9);

/// QR with non-negative diagonal of R.
void positive_qr(const Mat& a, Mat& q, Vec& r_diag, Mat* r = nullptr);

// ---------------------------------------------------------------------------
// Trapping regions

/// {x : sum_i w_i (x_i - c_i)^2 <= R^2}
struct Ellipsoid {
  Vec center;
  Vec weights;
  double radius = 1.0;
};

using Region = std::variant<Box, Ellipsoid>;

int region_dim(const Region& r);
bool region_contains(const Region& r, const Vec& x);
/// > 0 outside, <= 0 inside (scaled level function).
double region_excess(const Region& r, const Vec& x);

struct TrapViolation {
  Vec point;
  /// <G, outward normal> for boundary samples; region excess for interior ones.
  double value;
  bool boundary;
};

struct TrapReport {
  bool passed = true;
  int n_boundary = 0;
  int n_interior = 0;
  int boundary_violations = 0;
  int interior_violations = 0;
  std::vector<TrapViolation> violations;
  std::optional<double> minimal_R;
};

/// Samples n_boundary boundary points (sign of <G, n>) and n_boundary interior
/// points whose orbits over [0, horizon] must stay inside.
TrapReport trap_check(const VectorFieldModel& model, const Region& region, int n_boundary,
                      double horizon, std::uint64_t seed = 0, double tol = 1e-8);

/// Smallest radius (bisection to rel. 1e-6) for which every one of n boundary
/// samples of the ellipsoid has <G, n> < 0. Returns nullopt if none in [lo, hi].
std::optional<double> minimal_trapping_radius(const VectorFieldModel& model, Ellipsoid shape,
                                              int n, std::uint64_t seed, double lo, double hi);

/// Long-orbit surrogate for the attracting set: integrate from x0, discard
/// t < transient, then collect n points at the given spacing.
std::vector<Vec> attractor_sample(const VectorFieldModel& model, const Vec& x0,
                                  double transient = 50.0, int n = 10000, double spacing = 0.05,
                                  double tol = 1e-9);

nlohmann::json to_json(const TrapReport& r);

}  // namespace sechyp
