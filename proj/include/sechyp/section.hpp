#pragma once

#include "sechyp/common.hpp"
#include "sechyp/equilibria.hpp"
#include "sechyp/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sechyp {

/// Flat box section {y + F c : |c_i| <= half_widths_i} with unit normal n.
struct CrossSection {
  std::string id = "S0";
  Vec point;
  Vec normal;
  /// d x (d-1), orthonormal, orthogonal to normal.
  Mat frame;
  Vec half_widths;
  /// +1: count crossings along +normal, -1: against it, 0: both.
  int orientation = 1;
  double a0 = 0.75;

  int dim() const { return static_cast<int>(point.size()); }
  double height(const Vec& x) const { return normal.dot(x - point); }
  Vec coords(const Vec& x) const { return frame.transpose() * (x - point); }
  Vec embed(const Vec& c) const { return point + frame * c; }
  /// Inside the box scaled by `scale` (1 = full box, a0 = inner subsection).
  bool in_box(const Vec& x, double scale = 1.0) const;
};

/// Flow-orthogonal section at y unless a normal is given.
CrossSection make_section(const VectorFieldModel& model, const Vec& y, const Vec& half_widths,
                          int orientation = 1, const std::optional<Vec>& normal = std::nullopt,
                          const std::string& id = "S0");

/// Parses [{"point":[...],"normal":[...],"half_widths":[...],"orientation":1}, ...].
std::vector<CrossSection> sections_from_json(const VectorFieldModel& model, const nlohmann::json& j);
nlohmann::json to_json(const CrossSection& s);

enum class MissReason { none, left_region, exceeded_T_max, hit_singularity };
std::string to_string(MissReason r);

struct ReturnRecord {
  Vec x;
  Vec Rx;
  double tau = 0.0;
  std::string entry_section;
  std::string exit_section;
  int sign = 0;
  bool miss = false;
  MissReason reason = MissReason::none;
};

struct ReturnOptions {
  double T1 = 0.1;
  double T_max = 20.0;
  double tol = 1e-9;
  /// Orbits leaving this ball are reported as "left region".
  double escape_radius = 1e3;
  /// Orbits entering this neighborhood of an equilibrium are reported as such.
  double singular_radius = 1e-10;
  std::vector<Vec> equilibria;
};

ReturnRecord first_return(const VectorFieldModel& model, const std::vector<CrossSection>& sections,
                          const Vec& x, const ReturnOptions& opts = {});
ReturnRecord first_return(const VectorFieldModel& model, const std::vector<CrossSection>& sections,
                          const Vec& x, double T1, double T_max, double tol);

/// Iterates the return map n times from x (misses end the sequence early).
std::vector<ReturnRecord> return_orbit(const VectorFieldModel& model,
                                       const std::vector<CrossSection>& sections, const Vec& x, int n,
                                       const ReturnOptions& opts = {});

/// "entry_section,exit_section,x...,Rx...,tau,miss,reason"
std::string returns_csv(const std::vector<ReturnRecord>& records);

struct RoofSample {
  double dist = 0.0;
  double tau = 0.0;
  bool miss = false;
  bool used = false;
};

struct RoofFit {
  std::vector<RoofSample> samples;
  /// Located intersection of the stable-manifold proxy with the section.
  Vec gamma_point;
  /// Closest approach of the located point's orbit to the equilibrium.
  double gamma_check = 0.0;
  double C = 0.0;
  double b = 0.0;
  double R2 = 0.0;
  int n_used = 0;
  bool fitted = false;
  std::string flag;
};

struct RoofOptions {
  ReturnOptions ret{.T1 = 0.1, .T_max = 50.0, .tol = 1e-10, .escape_radius = 1e3, .singular_radius = 1e-10, .equilibria = {}};
  /// Distances from the located stable-manifold point; default 10^-k, k = 2..8
  /// in half-decade steps on both sides.
  std::vector<double> distances;
  /// Frame column along which the discontinuity is searched.
  int axis = 0;
  /// Half-length of the search segment as a fraction of the half-width.
  double search_fraction = 0.5;
};

/// Fits tau = -C log(dist) + b near the section's intersection with the
/// stable manifold of sigma. Needs sigma Lorenz-like.
RoofFit roof_fit(const VectorFieldModel& model, const std::vector<CrossSection>& sections,
                 int section_index, const EquilibriumReport& sigma,
                 const RoofOptions& opts = {});

struct LeafOptions {
  double T_est = 2.0;
  /// Radius of the affine leaf disks.
  double rho = 0.05;
  double tol = 1e-9;
};

/// In-section stable-leaf geometry at x.
struct LeafFrame {
  /// Section coordinates of x.
  Vec center;
  /// (d-1) x d_s orthonormal leaf directions in section coordinates.
  Mat leaf;
  /// (d-1) x (d-1-d_s) orthonormal complement (in-section unstable directions).
  Mat transverse;
  bool low_confidence = false;
};

LeafFrame leaf_frame(const CrossSection& section, const VectorFieldModel& model, const Vec& x,
                     int d_s, const LeafOptions& opts = {});

struct LeafDistance {
  double value = 0.0;
  bool low_confidence = false;
};

LeafDistance stable_leaf_distance(const CrossSection& section, const Vec& x, const Vec& y,
                                  const VectorFieldModel& model, int d_s,
                                  const LeafOptions& opts = {});

struct GrowthSeries {
  std::vector<double> distances;
  std::vector<double> factors;
  std::vector<double> taus_x;
  std::vector<double> taus_y;
  double median_factor = 0.0;
  bool separated = false;
  bool truncated = false;
  std::string flag;
};

struct GrowthOptions {
  ReturnOptions ret{.T1 = 0.1, .T_max = 20.0, .tol = 1e-10, .escape_radius = 1e3,
                    .singular_radius = 1e-10, .equilibria = {}};
  LeafOptions leaf;
  int d_s = 1;
  double delta_sep = 1.0;
  /// Maximal return-time mismatch for pairing the two orbits' returns.
  double window = 0.5;
  /// Leaf distances below this are unresolved; factors use max(d, floor).
  double resolution = 1e-6;
};

GrowthSeries leaf_separation_growth(const VectorFieldModel& model,
                                    const std::vector<CrossSection>& sections, const Vec& x,
                                    const Vec& y, int n_returns, const GrowthOptions& opts = {});

enum class Alignment { unstable, stable };

struct QuotientOptions {
  ReturnOptions ret;
  LeafOptions leaf;
  int d_s = 1;
  Alignment alignment = Alignment::unstable;
  double offset = 1e-4;
  double window = 0.5;
  /// Start of the orbit that supplies base points; empty means a point
  /// offset from the first section's base point.
  std::optional<Vec> start;
  int transient_returns = 20;
};

struct QuotientReport {
  std::vector<double> factors;
  double mu_hat = 0.0;
  double median = 0.0;
  int n_requested = 0;
  int n_used = 0;
  std::string alignment;
};

QuotientReport quotient_expansion(const VectorFieldModel& model,
                                  const std::vector<CrossSection>& sections, int n_pairs,
                                  std::uint64_t seed, const QuotientOptions& opts = {});

nlohmann::json to_json(const ReturnRecord& r);
nlohmann::json to_json(const RoofFit& r);
nlohmann::json to_json(const GrowthSeries& g);
nlohmann::json to_json(const QuotientReport& q);

}  // namespace sechyp
