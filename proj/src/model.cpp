#include "sechyp/model.hpp"

#include "sechyp/rng.hpp"

#include <cmath>
#include <sstream>

namespace sechyp {

using nlohmann::json;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::lorenz: return "lorenz";
    case ModelKind::linear: return "linear";
    case ModelKind::polynomial: return "polynomial";
    case ModelKind::product: return "product";
  }
  return "unknown";
}

bool Box::contains(const Vec& x) const {
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

VectorFieldModel VectorFieldModel::lorenz(double sigma, double rho, double beta) {
  VectorFieldModel m;
  m.kind_ = ModelKind::lorenz;
  m.dim_ = 3;
  m.params_ = {{"sigma", sigma}, {"rho", rho}, {"beta", beta}};
  return m;
}

VectorFieldModel VectorFieldModel::linear(Mat a) {
  if (a.rows() != a.cols() || a.rows() < 1) throw InputError("linear model needs a square matrix");
  if (!a.allFinite()) throw InputError("linear model matrix must be finite");
  VectorFieldModel m;
  m.kind_ = ModelKind::linear;
  m.dim_ = static_cast<int>(a.rows());
  m.matrix_ = std::move(a);
  return m;
}

VectorFieldModel VectorFieldModel::diagonal(const std::vector<double>& rates) {
  return linear(from_std(rates).asDiagonal());
}

VectorFieldModel VectorFieldModel::polynomial(int dim, std::vector<PolyTerm> terms) {
  if (dim < 1) throw InputError("polynomial model needs dim >= 1");
  for (const auto& t : terms) {
    if (t.target < 0 || t.target >= dim) throw InputError("polynomial term target out of range");
    if (static_cast<int>(t.exponents.size()) != dim)
      throw InputError("polynomial term exponent length must equal dim");
    for (int e : t.exponents)
      if (e < 0) throw InputError("polynomial exponents must be non-negative");
    if (!std::isfinite(t.coeff)) throw InputError("polynomial coefficient must be finite");
  }
  VectorFieldModel m;
  m.kind_ = ModelKind::polynomial;
  m.dim_ = dim;
  m.terms_ = std::move(terms);
  return m;
}

VectorFieldModel VectorFieldModel::center_contraction(double omega, double kappa) {
  VectorFieldModel m;
  m.kind_ = ModelKind::product;
  m.dim_ = 3;
  m.params_ = {{"omega", omega}, {"kappa", kappa}};
  return m;
}

namespace {

double require_number(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_number())
    throw InputError(std::string("missing numeric parameter '") + key + "'");
  return obj.at(key).get<double>();
}

}  // namespace

VectorFieldModel VectorFieldModel::from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string())
    throw InputError("model config needs a string field 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  const json params = j.value("params", json::object());
  if (!params.is_object()) throw InputError("'params' must be an object");
  try {
    if (kind == "lorenz") {
      if (j.contains("dim") && j.at("dim") != 3) throw InputError("lorenz model has dim 3");
      return lorenz(require_number(params, "sigma"), require_number(params, "rho"),
                    require_number(params, "beta"));
    }
    if (kind == "product") {
      return center_contraction(params.value("omega", 1.0), params.value("kappa", 1.0));
    }
    if (kind == "linear") {
      if (!j.contains("matrix") || !j.at("matrix").is_array())
        throw InputError("linear model needs 'matrix'");
      const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
      Mat a(rows.size(), rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.size()) throw InputError("linear 'matrix' must be square");
        for (std::size_t c = 0; c < rows.size(); ++c) a(r, c) = rows[r][c];
      }
      return linear(std::move(a));
    }
    if (kind == "polynomial") {
      if (!j.contains("dim") || !j.at("dim").is_number_integer())
        throw InputError("polynomial model needs integer 'dim'");
      const int dim = j.at("dim").get<int>();
      std::vector<PolyTerm> terms;
      for (const auto& t : j.value("terms", json::array())) {
        if (!t.is_array() || t.size() != 3) throw InputError("term must be [target, coeff, [exponents]]");
        terms.push_back({t[0].get<int>(), t[1].get<double>(), t[2].get<std::vector<int>>()});
      }
      return polynomial(dim, std::move(terms));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed model config: ") + e.what());
  }
  throw InputError("unknown model kind '" + kind + "'");
}

json VectorFieldModel::to_json() const {
  json j;
  j["kind"] = to_string(kind_);
  j["dim"] = dim_;
  if (!params_.empty()) j["params"] = params_;
  if (kind_ == ModelKind::linear) {
    std::vector<std::vector<double>> rows(dim_, std::vector<double>(dim_));
    for (int r = 0; r < dim_; ++r)
      for (int c = 0; c < dim_; ++c) rows[r][c] = matrix_(r, c);
    j["matrix"] = rows;
  }
  if (kind_ == ModelKind::polynomial) {
    j["terms"] = json::array();
    for (const auto& t : terms_) j["terms"].push_back(json::array({t.target, t.coeff, t.exponents}));
  }
  if (extra_.size() > 0) {
    std::vector<std::vector<double>> rows(dim_, std::vector<double>(dim_));
    for (int r = 0; r < dim_; ++r)
      for (int c = 0; c < dim_; ++c) rows[r][c] = extra_(r, c);
    j["additive_linear"] = rows;
  }
  if (sign_ < 0) j["time_sign"] = -1;
  return j;
}

double VectorFieldModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw InputError("model has no parameter '" + name + "'");
  return it->second;
}

std::string VectorFieldModel::id() const {
  std::ostringstream os;
  os.precision(6);
  os << to_string(kind_);
  if (!params_.empty()) {
    os << "(";
    bool first = true;
    for (const auto& [k, v] : params_) {
      os << (first ? "" : ",") << k << "=" << v;
      first = false;
    }
    os << ")";
  } else {
    os << dim_ << "d";
  }
  if (extra_.size() > 0) os << "+linear";
  if (sign_ < 0) os << "/reversed";
  os << suffix_;
  return os.str();
}

void VectorFieldModel::check_dim(const Vec& x) const {
  if (x.size() != dim_)
    throw InputError("point has dimension " + std::to_string(x.size()) + ", model expects " +
                     std::to_string(dim_));
}

void VectorFieldModel::base_field(const Vec& x, Vec& out) const {
  switch (kind_) {
    case ModelKind::lorenz: {
      const double s = params_.at("sigma"), r = params_.at("rho"), b = params_.at("beta");
      out[0] = s * (x[1] - x[0]);
      out[1] = x[0] * (r - x[2]) - x[1];
      out[2] = x[0] * x[1] - b * x[2];
      return;
    }
    case ModelKind::product: {
      const double w = params_.at("omega"), k = params_.at("kappa");
      out[0] = -w * x[1];
      out[1] = w * x[0];
      out[2] = -k * x[2];
      return;
    }
    case ModelKind::linear:
      out.noalias() = matrix_ * x;
      return;
    case ModelKind::polynomial:
      out.setZero();
      for (const auto& t : terms_) {
        double v = t.coeff;
        for (int i = 0; i < dim_; ++i)
          if (t.exponents[i] > 0) v *= std::pow(x[i], t.exponents[i]);
        out[t.target] += v;
      }
      return;
  }
}

void VectorFieldModel::base_jacobian(const Vec& x, Mat& out) const {
  switch (kind_) {
    case ModelKind::lorenz: {
      const double s = params_.at("sigma"), r = params_.at("rho"), b = params_.at("beta");
      out << -s, s, 0.0,        //
          r - x[2], -1.0, -x[0],  //
          x[1], x[0], -b;
      return;
    }
    case ModelKind::product: {
      const double w = params_.at("omega"), k = params_.at("kappa");
      out << 0.0, -w, 0.0,  //
          w, 0.0, 0.0,      //
          0.0, 0.0, -k;
      return;
    }
    case ModelKind::linear:
      out = matrix_;
      return;
    case ModelKind::polynomial:
      out.setZero();
      for (const auto& t : terms_) {
        for (int j = 0; j < dim_; ++j) {
          if (t.exponents[j] == 0) continue;
          double v = t.coeff * t.exponents[j];
          for (int i = 0; i < dim_; ++i) {
            const int e = t.exponents[i] - (i == j ? 1 : 0);
            if (e > 0) v *= std::pow(x[i], e);
          }
          out(t.target, j) += v;
        }
      }
      return;
  }
}

void VectorFieldModel::field(const Vec& x, Vec& out) const {
  check_dim(x);
  out.resize(dim_);
  base_field(x, out);
  if (extra_.size() > 0) out.noalias() += extra_ * x;
  if (sign_ < 0) out = -out;
}

Vec VectorFieldModel::field(const Vec& x) const {
  Vec out(dim_);
  field(x, out);
  return out;
}

void VectorFieldModel::jacobian(const Vec& x, Mat& out) const {
  check_dim(x);
  out.resize(dim_, dim_);
  base_jacobian(x, out);
  if (extra_.size() > 0) out += extra_;
  if (sign_ < 0) out = -out;
}

Mat VectorFieldModel::jacobian(const Vec& x) const {
  Mat out(dim_, dim_);
  jacobian(x, out);
  return out;
}

double VectorFieldModel::divergence(const Vec& x) const { return jacobian(x).trace(); }

VectorFieldModel VectorFieldModel::negated() const {
  VectorFieldModel m = *this;
  m.sign_ = -sign_;
  return m;
}

VectorFieldModel VectorFieldModel::with_params(std::map<std::string, double> params) const {
  VectorFieldModel m = *this;
  for (const auto& [k, v] : params) {
    if (!m.params_.count(k)) throw InputError("model has no parameter '" + k + "'");
    m.params_[k] = v;
  }
  return m;
}

VectorFieldModel VectorFieldModel::with_matrix(Mat a) const {
  if (kind_ != ModelKind::linear || a.rows() != dim_ || a.cols() != dim_)
    throw InputError("with_matrix needs a linear model and a matching matrix");
  VectorFieldModel m = *this;
  m.matrix_ = std::move(a);
  return m;
}

VectorFieldModel VectorFieldModel::with_terms(std::vector<PolyTerm> terms) const {
  VectorFieldModel m = polynomial(dim_, std::move(terms));
  m.extra_ = extra_;
  m.sign_ = sign_;
  m.suffix_ = suffix_;
  return m;
}

VectorFieldModel VectorFieldModel::with_additive_linear(Mat extra) const {
  if (extra.rows() != dim_ || extra.cols() != dim_) throw InputError("additive term has wrong shape");
  VectorFieldModel m = *this;
  m.extra_ = std::move(extra);
  return m;
}

VectorFieldModel VectorFieldModel::with_label(const std::string& tag) const {
  VectorFieldModel m = *this;
  m.suffix_ += tag;
  return m;
}

namespace {

std::vector<PolyTerm> as_terms(const VectorFieldModel& m) {
  const int d = m.dim();
  auto mono = [d](int target, double c, std::vector<std::pair<int, int>> powers) {
    PolyTerm t{target, c, std::vector<int>(d, 0)};
    for (auto [i, e] : powers) t.exponents[i] += e;
    return t;
  };
  switch (m.kind()) {
    case ModelKind::polynomial: return m.terms();
    case ModelKind::linear: {
      std::vector<PolyTerm> terms;
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c)
          if (m.matrix()(r, c) != 0.0) terms.push_back(mono(r, m.matrix()(r, c), {{c, 1}}));
      return terms;
    }
    case ModelKind::lorenz: {
      const double s = m.param("sigma"), r = m.param("rho"), b = m.param("beta");
      return {mono(0, -s, {{0, 1}}), mono(0, s, {{1, 1}}),          //
              mono(1, r, {{0, 1}}),  mono(1, -1.0, {{1, 1}}),       //
              mono(1, -1.0, {{0, 1}, {2, 1}}),                       //
              mono(2, 1.0, {{0, 1}, {1, 1}}), mono(2, -b, {{2, 1}})};
    }
    case ModelKind::product: {
      const double w = m.param("omega"), k = m.param("kappa");
      return {mono(0, -w, {{1, 1}}), mono(1, w, {{0, 1}}), mono(2, -k, {{2, 1}})};
    }
  }
  return {};
}

}  // namespace

VectorFieldModel VectorFieldModel::permuted(const std::vector<int>& perm) const {
  if (static_cast<int>(perm.size()) != dim_) throw InputError("permutation has wrong length");
  std::vector<int> inv(dim_, -1);
  for (int i = 0; i < dim_; ++i) {
    if (perm[i] < 0 || perm[i] >= dim_ || inv[perm[i]] != -1) throw InputError("not a permutation");
    inv[perm[i]] = i;
  }
  std::vector<PolyTerm> terms;
  for (const auto& t : as_terms(*this)) {
    PolyTerm nt{inv[t.target], t.coeff, std::vector<int>(dim_)};
    for (int i = 0; i < dim_; ++i) nt.exponents[i] = t.exponents[perm[i]];
    terms.push_back(std::move(nt));
  }
  VectorFieldModel m = polynomial(dim_, std::move(terms));
  if (extra_.size() > 0) {
    Mat e(dim_, dim_);
    for (int r = 0; r < dim_; ++r)
      for (int c = 0; c < dim_; ++c) e(r, c) = extra_(perm[r], perm[c]);
    m.extra_ = e;
  }
  m.sign_ = sign_;
  return m;
}

bool VectorFieldModel::operator==(const VectorFieldModel& o) const {
  if (kind_ != o.kind_ || dim_ != o.dim_ || params_ != o.params_ || sign_ != o.sign_) return false;
  if (matrix_.size() != o.matrix_.size() || (matrix_.size() > 0 && matrix_ != o.matrix_)) return false;
  if (extra_.size() != o.extra_.size() || (extra_.size() > 0 && extra_ != o.extra_)) return false;
  if (terms_.size() != o.terms_.size()) return false;
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    const auto &a = terms_[i], &b = o.terms_[i];
    if (a.target != b.target || a.coeff != b.coeff || a.exponents != b.exponents) return false;
  }
  return true;
}

Mat jacobian_fd(const VectorFieldModel& model, const Vec& x) {
  const int d = model.dim();
  if (x.size() != d) throw InputError("point dimension mismatch");
  Mat jac(d, d);
  Vec xp = x, xm = x;
  for (int i = 0; i < d; ++i) {
    const double h = std::max(1e-6, 1e-6 * std::abs(x[i]));
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    jac.col(i) = (model.field(xp) - model.field(xm)) / (xp[i] - xm[i]);
    xp[i] = xm[i] = x[i];
  }
  return jac;
}

double field_scale(const VectorFieldModel& model, const Box& region, std::uint64_t seed) {
  Rng rng(seed);
  double scale = 0.0;
  Vec x(model.dim());
  for (int k = 0; k < 64; ++k) {
    for (int i = 0; i < model.dim(); ++i) x[i] = uniform(rng, region.lo[i], region.hi[i]);
    Eigen::JacobiSVD<Mat> svd(model.jacobian(x));
    scale = std::max(scale, svd.singularValues()[0]);
  }
  return scale;
}

static VectorFieldModel perturb_impl(const VectorFieldModel& model, const Perturbation& p);

VectorFieldModel perturb(const VectorFieldModel& model, const Perturbation& p) {
  const double m = p.relative_magnitude;
  if (!(m >= 0.0 && m < 0.5)) throw InputError("perturbation magnitude must lie in [0, 0.5)");
  if (m == 0.0) return model;
  std::ostringstream tag;
  tag.precision(4);
  tag << "~" << (p.mode == PerturbationMode::parameter_scale ? "scale" : "linear") << "(m=" << m
      << ",seed=" << p.seed << ")";
  return perturb_impl(model, p).with_label(tag.str());
}

static VectorFieldModel perturb_impl(const VectorFieldModel& model, const Perturbation& p) {
  const double m = p.relative_magnitude;
  Rng rng(split_seed(p.seed, 0x5045525455524231ULL));
  const int d = model.dim();
  if (p.mode == PerturbationMode::parameter_scale) {
    switch (model.kind()) {
      case ModelKind::lorenz:
      case ModelKind::product: {
        auto params = model.params();  // std::map: deterministic key order
        for (auto& [k, v] : params) v *= 1.0 + uniform(rng, -m, m);
        return model.with_params(params);
      }
      case ModelKind::linear: {
        Mat a = model.matrix();
        for (int c = 0; c < d; ++c)
          for (int r = 0; r < d; ++r) a(r, c) *= 1.0 + uniform(rng, -m, m);
        return model.with_matrix(a);
      }
      case ModelKind::polynomial: {
        auto terms = model.terms();
        for (auto& t : terms) t.coeff *= 1.0 + uniform(rng, -m, m);
        return model.with_terms(terms);
      }
    }
  }
  Box region = p.sample_region;
  if (region.lo.size() == 0) region = Box{Vec::Constant(d, -1.0), Vec::Constant(d, 1.0)};
  if (region.dim() != d) throw InputError("perturbation sample region has wrong dimension");
  Mat a(d, d);
  for (int c = 0; c < d; ++c)
    for (int r = 0; r < d; ++r) a(r, c) = normal(rng);
  Eigen::JacobiSVD<Mat> svd(a);
  a /= svd.singularValues()[0];
  const double eps = m * field_scale(model, region, split_seed(p.seed, 1));
  Mat extra = eps * a;
  if (model.additive_linear().size() > 0) extra += model.additive_linear();
  return model.with_additive_linear(extra);
}

}  // namespace sechyp
