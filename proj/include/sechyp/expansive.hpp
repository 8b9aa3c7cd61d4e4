#pragma once

#include "sechyp/common.hpp"
#include "sechyp/flow.hpp"
#include "sechyp/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sechyp {

/// Orbit samples on the grid t0 + k dt, optionally with the dense solution.
struct UniformSeries {
  double t0 = 0.0;
  double dt = 0.01;
  std::vector<Vec> samples;
  std::shared_ptr<const Trajectory> dense;
};

UniformSeries sample_uniform(const Trajectory& traj, double dt);

enum class Verdict { same_orbit_shift, stayed_close, separated, undecided };
std::string to_string(Verdict v);

enum class Stratum { on_leaf, near_leaf, generic, antipodal_lobe };
std::string to_string(Stratum s);

struct MatchResult {
  Vec x;
  Vec y;
  double dt = 0.01;
  /// Matched (x index, y index) cells along the optimal warp, in order.
  std::vector<std::pair<int, int>> warp;
  double sup_distance = 0.0;
  /// sup distance under the identity warp (only when the grids have equal length).
  double identity_sup = 0.0;
  Verdict verdict = Verdict::separated;
  std::optional<double> shift;
  double eps = 0.0;
  double delta = 0.0;
  /// The DP stopped once every warp exceeded delta; sup_distance is then a lower bound.
  bool aborted = false;
  // Probe bookkeeping.
  Stratum stratum = Stratum::generic;
  bool on_leaf = false;
  std::uint64_t pair_seed = 0;
  int delta_index = -1;
  int pair_index = -1;
  std::string note;
};

struct MatchOptions {
  double eps = 0.5;
  /// Threshold for the stayed-close verdict.
  double delta = std::numeric_limits<double>::infinity();
  /// Integration tolerance behind the same-orbit threshold 10 tol (1 + max|x|).
  double tol = 1e-9;
  /// Length of the window on which the shift test compares the orbits.
  double shift_window = 1.0;
};

/// Minimizes the sup of pointwise distances over monotone staircase warps
/// with steps (1,k) and (k,1), k <= 3, inside a diagonal band.
MatchResult match_orbits(const UniformSeries& x, const UniformSeries& y, int band,
                         const MatchOptions& opts = {});

/// Smallest max_j |y_j - x(t_j + s)| over |s| <= eps on the leading window;
/// returns the shift when below the same-orbit threshold.
std::optional<double> same_orbit_shift(const Trajectory& x, const std::vector<Vec>& y, double dt,
                                       double eps, double tol, double window = 1.0);

struct DeltaSummary {
  double delta = 0.0;
  int pairs = 0;
  int separated = 0;
  int stayed_close = 0;
  int same_orbit = 0;
  int on_leaf_excluded = 0;
  int undecided = 0;
  int counterexamples = 0;
};

struct ExpansivenessReport {
  double eps = 0.0;
  std::vector<double> delta_grid;
  std::optional<double> delta_star;
  int n_pairs = 0;
  double horizon = 0.0;
  bool positive_only = true;
  std::uint64_t seed = 0;
  std::vector<DeltaSummary> per_delta;
  std::vector<MatchResult> counterexamples;
  std::string message;
  bool passed() const { return counterexamples.empty(); }
};

struct ProbeOptions {
  double dt = 0.01;
  int band = 20;
  double tol = 1e-9;
  int d_s = 1;
  /// Affine-leaf distance below which a pair counts as on-leaf.
  double leaf_threshold = 1e-6;
  double T_est = 2.0;
  /// Integration chunk between early-abort checks.
  double chunk = 5.0;
};

/// Pairs are drawn around points of `sample` (an attractor sample or region sample).
ExpansivenessReport expansiveness_probe(const VectorFieldModel& model, const std::vector<Vec>& sample,
                                        double eps, const std::vector<double>& delta_grid,
                                        int n_pairs, double horizon, bool positive_only,
                                        std::uint64_t seed, const ProbeOptions& opts = {});

/// Regenerates and re-runs one probe pair from its seed. With keep_warp the
/// full warp is recomputed (no early abort).
MatchResult replay_pair(const VectorFieldModel& model, const std::vector<Vec>& sample, double eps,
                        double delta, double horizon, bool positive_only, std::uint64_t pair_seed,
                        int pair_index, const ProbeOptions& opts = {}, bool keep_warp = true);

enum class Direction { future, past, both };
std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

struct ChaosReport {
  double r = 0.0;
  Direction direction = Direction::both;
  int n_points = 0;
  double witness_fraction = 0.0;
  double neighborhood = 0.0;
  double horizon = 0.0;
  std::vector<bool> witnessed;
  /// Earliest separation time per point (future, then past when both).
  std::vector<double> witness_time;
};

ChaosReport chaos_probe(const VectorFieldModel& model, const std::vector<Vec>& sample, double r,
                        int n_points, double neighborhood, double horizon, Direction direction,
                        std::uint64_t seed, double tol = 1e-9);

/// Separation search from one point; returns the first time |phi_t y - phi_t x| >= r.
std::optional<double> separation_time(const VectorFieldModel& model, const Vec& x, const Vec& y,
                                      double r, double horizon, double tol = 1e-9);

struct CheckOutcome {
  bool pass = false;
  nlohmann::json detail;
};

using ModelCheck = std::function<CheckOutcome(const VectorFieldModel&)>;

struct RobustRow {
  std::string model_id;
  std::string check;
  bool pass = false;
  nlohmann::json detail;
};

struct RobustReport {
  std::vector<std::string> model_ids;
  std::vector<RobustRow> rows;
  bool all_pass = false;
};

/// Runs every named check on each perturbed model (magnitudes <= 0.05).
RobustReport robustness_sweep(const VectorFieldModel& model, const std::vector<Perturbation>& perturbations,
                              const std::vector<std::pair<std::string, ModelCheck>>& checks);

/// "check,model_id,pass"
std::string summary_csv(const RobustReport& r);

nlohmann::json to_json(const MatchResult& m, bool with_warp = false);
nlohmann::json to_json(const ExpansivenessReport& r);
nlohmann::json to_json(const ChaosReport& r);
nlohmann::json to_json(const RobustReport& r);

}  // namespace sechyp
