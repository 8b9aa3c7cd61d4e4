#pragma once

#include "sechyp/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sechyp {

enum class ModelKind { lorenz, linear, polynomial, product };

std::string to_string(ModelKind kind);

/// One monomial contribution coeff * prod_i x_i^exponents[i] to component `target`.
struct PolyTerm {
  int target = 0;
  double coeff = 0.0;
  std::vector<int> exponents;
};

/// Axis-aligned box [lo, hi].
struct Box {
  Vec lo;
  Vec hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Vec& x) const;
};

/// A smooth vector field G on R^d together with its analytic Jacobian.
///
/// Models are immutable values. Built-in families:
///   lorenz      x' = sigma (y - x), y' = x (rho - z) - y, z' = x y - beta z
///   linear      x' = A x
///   polynomial  sums of monomials per component
///   product     planar center times contraction in R^3:
///               x' = -omega y, y' = omega x, z' = -kappa z
///
/// Two modifiers can be layered on any family: an additive linear term
/// (from additive-linear perturbation) and a time sign (negated() gives -G).
class VectorFieldModel {
 public:
  static VectorFieldModel lorenz(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0);
  static VectorFieldModel linear(Mat a);
  static VectorFieldModel diagonal(const std::vector<double>& rates);
  static VectorFieldModel polynomial(int dim, std::vector<PolyTerm> terms);
  static VectorFieldModel center_contraction(double omega = 1.0, double kappa = 1.0);

  /// Parses the model part of a JSON config; throws InputError.
  static VectorFieldModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  ModelKind kind() const { return kind_; }
  int dim() const { return dim_; }
  const std::map<std::string, double>& params() const { return params_; }
  double param(const std::string& name) const;
  const Mat& matrix() const { return matrix_; }
  const std::vector<PolyTerm>& terms() const { return terms_; }
  const Mat& additive_linear() const { return extra_; }
  double time_sign() const { return sign_; }

  /// Short human-readable identifier including parameters and modifiers.
  std::string id() const;

  Vec field(const Vec& x) const;
  void field(const Vec& x, Vec& out) const;
  Mat jacobian(const Vec& x) const;
  void jacobian(const Vec& x, Mat& out) const;
  double divergence(const Vec& x) const;

  /// The reversed field -G, whose flow is phi_{-t}.
  VectorFieldModel negated() const;

  VectorFieldModel with_params(std::map<std::string, double> params) const;
  VectorFieldModel with_matrix(Mat a) const;
  VectorFieldModel with_terms(std::vector<PolyTerm> terms) const;
  VectorFieldModel with_additive_linear(Mat extra) const;
  /// Same field with an extra tag appended to id().
  VectorFieldModel with_label(const std::string& tag) const;
  /// Relabels coordinates: new x_i = old x_{perm[i]}. Produces a polynomial
  /// (or linear) model conjugate to this one.
  VectorFieldModel permuted(const std::vector<int>& perm) const;

  bool operator==(const VectorFieldModel& other) const;

 private:
  VectorFieldModel() = default;
  void check_dim(const Vec& x) const;
  void base_field(const Vec& x, Vec& out) const;
  void base_jacobian(const Vec& x, Mat& out) const;

  ModelKind kind_ = ModelKind::lorenz;
  int dim_ = 3;
  std::map<std::string, double> params_;
  Mat matrix_;
  std::vector<PolyTerm> terms_;
  Mat extra_;
  double sign_ = 1.0;
  std::string suffix_;
};

/// Central finite differences with step h_i = max(1e-6, 1e-6 |x_i|).
Mat jacobian_fd(const VectorFieldModel& model, const Vec& x);


// Free-function forms matching the operation names.
inline Vec eval_field(const VectorFieldModel& m, const Vec& x) { return m.field(x); }
inline Mat eval_jacobian(const VectorFieldModel& m, const Vec& x) { return m.jacobian(x); }
inline double divergence(const VectorFieldModel& m, const Vec& x) { return m.divergence(x); }

enum class PerturbationMode { parameter_scale, additive_linear };

struct Perturbation {
  double relative_magnitude = 0.0;
  std::uint64_t seed = 0;
  PerturbationMode mode = PerturbationMode::parameter_scale;
  /// Region on which the field scale of additive-linear mode is sampled.
  /// Empty means the unit box around the origin.
  Box sample_region;
};

/// Deterministic in `p.seed`. Magnitude must lie in [0, 0.5).
VectorFieldModel perturb(const VectorFieldModel& model, const Perturbation& p);

/// max ||DG(x)||_2 (spectral) over 64 seeded samples of `region`.
double field_scale(const VectorFieldModel& model, const Box& region, std::uint64_t seed);

}  // namespace sechyp
