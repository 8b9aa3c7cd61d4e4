#include "sechyp/flow.hpp"

#include "sechyp/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

namespace sechyp {

namespace {

std::atomic<std::uint64_t> g_steps{0};

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

void eval_dense(const std::array<Vec, 5>& c, double theta, Vec& out) {
  const double theta1 = 1.0 - theta;
  out = c[0] + theta * (c[1] + theta1 * (c[2] + theta * (c[3] + theta1 * c[4])));
}

void check_tol(double tol) {
  if (!(tol >= 1e-12 && tol <= 1e-3)) throw InputError("tol must lie in [1e-12, 1e-3]");
}

}  // namespace

std::uint64_t total_steps() { return g_steps.load(); }

DormandPrince::DormandPrince(OdeRhs rhs, Vec y0, double t0, double t_end, double tol)
    : rhs_(std::move(rhs)), t_(t0), t_end_(t_end), tol_(tol), h_(0.0),
      dir_(t_end >= t0 ? 1.0 : -1.0), t_prev_(t0), y_(std::move(y0)) {
  if (!std::isfinite(t0) || !std::isfinite(t_end)) throw InputError("time span must be finite");
  if (!y_.allFinite()) throw InputError("initial state must be finite");
  const auto n = y_.size();
  for (auto& k : k_) k.resize(n);
  ytmp_.resize(n);
  ynew_.resize(n);
  err_.resize(n);
  rhs_(y_, k_[0]);
  y_prev_ = y_;
  if (t_ != t_end_) h_ = initial_step();
}

// Absolute scale: each accepted step keeps its local error estimate <= tol.
double DormandPrince::error_norm(const Vec& err) const {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double r = err[i] / tol_;
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(err.size()));
}

double DormandPrince::initial_step() const {
  // Hairer, Norsett & Wanner, starting step heuristic.
  const Vec zero = Vec::Zero(y_.size());
  const double d0 = error_norm(y_);
  const double d1n = error_norm(k_[0]);
  double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
  h0 = std::min(h0, std::abs(t_end_ - t_));
  Vec y1 = y_ + dir_ * h0 * k_[0];
  Vec f1(y_.size());
  rhs_(y1, f1);
  const double d2 = error_norm(Vec(f1 - k_[0])) / h0;
  const double h1 = std::max(d1n, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                : std::pow(0.01 / std::max(d1n, d2), 0.2);
  return std::min({100 * h0, h1, std::abs(t_end_ - t_)});
}

void DormandPrince::step() {
  if (done()) return;
  if (n_steps_ >= kMaxSteps) throw IntegrationFailure("step budget exhausted", t_);
  auto& k = k_;
  for (;;) {
    double h = h_;
    bool last = false;
    if (h >= std::abs(t_end_ - t_)) {
      h = std::abs(t_end_ - t_);
      last = true;
    }
    if (h < kMinStep || t_ + dir_ * h == t_)
      throw IntegrationFailure("step size underflow", t_);
    const double hs = dir_ * h;
    ytmp_ = y_ + hs * a21 * k[0];
    rhs_(ytmp_, k[1]);
    ytmp_ = y_ + hs * (a31 * k[0] + a32 * k[1]);
    rhs_(ytmp_, k[2]);
    ytmp_ = y_ + hs * (a41 * k[0] + a42 * k[1] + a43 * k[2]);
    rhs_(ytmp_, k[3]);
    ytmp_ = y_ + hs * (a51 * k[0] + a52 * k[1] + a53 * k[2] + a54 * k[3]);
    rhs_(ytmp_, k[4]);
    ytmp_ = y_ + hs * (a61 * k[0] + a62 * k[1] + a63 * k[2] + a64 * k[3] + a65 * k[4]);
    rhs_(ytmp_, k[5]);
    ynew_ = y_ + hs * (a71 * k[0] + a73 * k[2] + a74 * k[3] + a75 * k[4] + a76 * k[5]);
    rhs_(ynew_, k[6]);
    err_ = hs * (e1 * k[0] + e3 * k[2] + e4 * k[3] + e5 * k[4] + e6 * k[5] + e7 * k[6]);
    const double err = error_norm(err_);
    if (!std::isfinite(err) || !ynew_.allFinite()) {
      if (!y_.allFinite()) throw DivergenceError("non-finite state", t_);
      // Retry with a smaller step; a truly diverging state ends in underflow
      // or in a non-finite accepted state below.
      h_ = 0.2 * h;
      if (h_ < kMinStep) throw DivergenceError("non-finite state", t_);
      continue;
    }
    if (err <= 1.0) {
      cont_[0] = y_;
      cont_[1] = ynew_ - y_;
      cont_[2] = hs * k[0] - cont_[1];
      cont_[3] = cont_[1] - hs * k[6] - cont_[2];
      cont_[4] = hs * (d1 * k[0] + d3 * k[2] + d4 * k[3] + d5 * k[4] + d6 * k[5] + d7 * k[6]);
      t_prev_ = t_;
      y_prev_.swap(y_);
      y_.swap(ynew_);
      t_ = last ? t_end_ : t_ + hs;
      std::swap(k[0], k[6]);
      has_prev_ = true;
      ++g_steps;
      ++n_steps_;
      const double fac = err == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 10.0);
      h_ = h * fac;
      return;
    }
    h_ = h * std::max(0.2, 0.9 * std::pow(err, -0.2));
  }
}

void DormandPrince::dense(double t, Vec& out) const {
  if (!has_prev_) {
    out = y_;
    return;
  }
  const double h = t_ - t_prev_;
  if (t == t_) {
    out = y_;
    return;
  }
  eval_dense(cont_, (t - t_prev_) / h, out);
}

Vec DormandPrince::dense(double t) const {
  Vec out(y_.size());
  dense(t, out);
  return out;
}

// ---------------------------------------------------------------------------

Trajectory::Trajectory(std::string model_id, double t0, double t1, double tol,
                       std::vector<Node> nodes)
    : model_id_(std::move(model_id)), t0_(t0), t1_(t1), tol_(tol), nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw InputError("trajectory needs at least one node");
}

Vec Trajectory::at(double t) const {
  const double lo = std::min(t0_, t1_), hi = std::max(t0_, t1_);
  if (!(t >= lo && t <= hi)) throw RangeError("time outside trajectory span");
  const bool forward = t1_ >= t0_;
  // Index of the last node not beyond t in the direction of integration.
  auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t, [forward](double v, const Node& n) {
    return forward ? v < n.t : v > n.t;
  });
  std::size_t idx = static_cast<std::size_t>(std::distance(nodes_.begin(), it));
  idx = idx == 0 ? 0 : idx - 1;
  const Node& n = nodes_[idx];
  if (t == n.t || idx + 1 == nodes_.size()) return n.x;
  const double h = nodes_[idx + 1].t - n.t;
  Vec out(n.x.size());
  eval_dense(n.coeffs, (t - n.t) / h, out);
  return out;
}

std::string Trajectory::to_csv(double dt) const {
  std::ostringstream os;
  os.precision(17);
  os << "t";
  for (int i = 1; i <= dim(); ++i) os << ",x" << i;
  os << "\n";
  auto row = [&](double t, const Vec& x) {
    os << t;
    for (Eigen::Index i = 0; i < x.size(); ++i) os << "," << x[i];
    os << "\n";
  };
  if (dt <= 0.0) {
    for (const auto& n : nodes_) row(n.t, n.x);
  } else {
    const double span = std::abs(t1_ - t0_);
    const double dir = t1_ >= t0_ ? 1.0 : -1.0;
    const auto count = static_cast<long>(std::floor(span / dt + 1e-9));
    for (long i = 0; i <= count; ++i) {
      const double t = t0_ + dir * static_cast<double>(i) * dt;
      row(t, at(t));
    }
  }
  return os.str();
}

Trajectory integrate(const VectorFieldModel& model, const Vec& x0, double t0, double t1,
                     double tol) {
  check_tol(tol);
  if (x0.size() != model.dim()) throw InputError("initial point has wrong dimension");
  std::vector<Trajectory::Node> nodes;
  nodes.push_back({t0, x0, {}});
  if (t0 != t1) {
    DormandPrince dp([&model](const Vec& y, Vec& dy) { model.field(y, dy); }, x0, t0, t1, tol);
    while (!dp.done()) {
      dp.step();
      nodes.back().coeffs = dp.coefficients();
      nodes.push_back({dp.t(), dp.y(), {}});
    }
  }
  return Trajectory(model.id(), t0, t1, tol, std::move(nodes));
}

Vec flow_at(const Trajectory& traj, double t) { return traj.at(t); }

Vec flow_point(const VectorFieldModel& model, const Vec& x0, double T, double tol) {
  check_tol(tol);
  if (T == 0.0) return x0;
  DormandPrince dp([&model](const Vec& y, Vec& dy) { model.field(y, dy); }, x0, 0.0, T, tol);
  while (!dp.done()) dp.step();
  return dp.y();
}

// ---------------------------------------------------------------------------

void positive_qr(const Mat& a, Mat& q, Vec& r_diag, Mat* r_out) {
  const auto rows = a.rows(), cols = a.cols();
  Eigen::HouseholderQR<Mat> qr(a);
  q = qr.householderQ() * Mat::Identity(rows, cols);
  Mat r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  r_diag.resize(cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    if (r(j, j) < 0.0) {
      r.row(j) *= -1.0;
      q.col(j) *= -1.0;
    }
    r_diag[j] = r(j, j);
  }
  if (r_out) *r_out = r;
}

namespace {

OdeRhs variational_rhs(const VectorFieldModel& model, int k) {
  const int d = model.dim();
  return [&model, d, k, x = Vec(d), gx = Vec(d), jac = Mat(d, d)](const Vec& y, Vec& dy) mutable {
    x = y.head(d);
    model.field(x, gx);
    model.jacobian(x, jac);
    dy.head(d) = gx;
    Eigen::Map<const Mat> v(y.data() + d, d, k);
    Eigen::Map<Mat> dv(dy.data() + d, d, k);
    dv.noalias() = jac * v;
  };
}

}  // namespace

std::pair<Vec, Mat> propagate_frame(const VectorFieldModel& model, const Vec& x0, const Mat& V0,
                                    double T, double tol) {
  check_tol(tol);
  const int d = model.dim();
  if (x0.size() != d || V0.rows() != d) throw InputError("frame dimension mismatch");
  const auto k = static_cast<int>(V0.cols());
  if (T == 0.0) return {x0, V0};
  Vec y(d + d * k);
  y.head(d) = x0;
  y.tail(d * k) = Eigen::Map<const Vec>(V0.data(), d * k);
  DormandPrince dp(variational_rhs(model, k), y, 0.0, T, tol);
  while (!dp.done()) dp.step();
  return {dp.y().head(d), Eigen::Map<const Mat>(dp.y().data() + d, d, k)};
}

FrameEvolution tangent_flow(const VectorFieldModel& model, const Vec& x0, const Mat& V0, double T,
                            double tol, double renorm) {
  const int d = model.dim();
  if (V0.rows() != d || V0.cols() < 1 || V0.cols() > d) throw InputError("V0 must be d x k, k <= d");
  if (renorm <= 0.0) throw InputError("renormalization interval must be positive");
  const auto k = static_cast<int>(V0.cols());
  FrameEvolution ev;
  ev.model_id = model.id();
  ev.k = k;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) ev.pairs.emplace_back(i, j);

  Mat q;
  Vec rd;
  positive_qr(V0, q, rd);
  if ((rd.array().abs() < 1e-300).any() || rd.minCoeff() <= 1e-14 * rd.maxCoeff())
    throw NumericError("V0 does not have full column rank");
  Vec col_growth = Vec::Zero(k), pair_growth = Vec::Zero(static_cast<Eigen::Index>(ev.pairs.size()));
  Vec x = x0;
  double t = 0.0;
  ev.times.push_back(0.0);
  ev.points.push_back(x);
  ev.frames.push_back(q);
  ev.column_log_growth.push_back(col_growth);
  ev.pair_log_growth.push_back(pair_growth);
  const double dir = T >= 0.0 ? 1.0 : -1.0;
  while (dir * (T - t) > 0.0) {
    const double dt = dir * std::min(renorm, dir * (T - t));
    auto [xn, v] = propagate_frame(model, x, q, dt, tol);
    for (std::size_t p = 0; p < ev.pairs.size(); ++p) {
      const auto [i, j] = ev.pairs[p];
      const double a = v.col(i).squaredNorm(), b = v.col(j).squaredNorm(), c = v.col(i).dot(v.col(j));
      pair_growth[static_cast<Eigen::Index>(p)] += 0.5 * std::log(std::max(a * b - c * c, std::numeric_limits<double>::min()));
    }
    positive_qr(v, q, rd);
    if ((rd.array() < 1e-300).any()) throw NumericError("tangent frame rank collapse");
    col_growth += rd.array().log().matrix();
    x = xn;
    t = (std::abs(T - (t + dt)) < 1e-12) ? T : t + dt;
    ev.times.push_back(t);
    ev.points.push_back(x);
    ev.frames.push_back(q);
    ev.column_log_growth.push_back(col_growth);
    ev.pair_log_growth.push_back(pair_growth);
  }
  return ev;
}

JacobianChain jacobian_chain(const VectorFieldModel& model, const Vec& x0, double T,
                             double interval, double tol) {
  if (interval <= 0.0) throw InputError("interval must be positive");
  const int d = model.dim();
  JacobianChain chain;
  chain.times.push_back(0.0);
  chain.points.push_back(x0);
  const Mat eye = Mat::Identity(d, d);
  const double dir = T >= 0.0 ? 1.0 : -1.0;
  double t = 0.0;
  Vec x = x0;
  while (dir * (T - t) > 1e-12) {
    const double dt = dir * std::min(interval, dir * (T - t));
    auto [xn, m] = propagate_frame(model, x, eye, dt, tol);
    x = xn;
    t = (std::abs(T - (t + dt)) < 1e-12) ? T : t + dt;
    chain.times.push_back(t);
    chain.points.push_back(x);
    chain.steps.push_back(std::move(m));
  }
  return chain;
}

// ---------------------------------------------------------------------------

int region_dim(const Region& r) {
  return std::visit([](const auto& v) -> int {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Box>) return v.dim();
    else return static_cast<int>(v.center.size());
  }, r);
}

double region_excess(const Region& r, const Vec& x) {
  if (const auto* b = std::get_if<Box>(&r)) {
    double e = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < b->dim(); ++i) {
      const double half = 0.5 * (b->hi[i] - b->lo[i]);
      const double mid = 0.5 * (b->hi[i] + b->lo[i]);
      e = std::max(e, (std::abs(x[i] - mid) - half) / half);
    }
    return e;
  }
  const auto& el = std::get<Ellipsoid>(r);
  const double v = (el.weights.array() * (x - el.center).array().square()).sum();
  return v / (el.radius * el.radius) - 1.0;
}

bool region_contains(const Region& r, const Vec& x) { return region_excess(r, x) <= 0.0; }

namespace {

void check_region(const Region& region, int d) {
  if (region_dim(region) != d) throw InputError("region dimension mismatch");
  if (const auto* b = std::get_if<Box>(&region)) {
    if ((b->hi.array() <= b->lo.array()).any()) throw InputError("degenerate box");
  } else {
    const auto& el = std::get<Ellipsoid>(region);
    if (el.weights.size() != d || (el.weights.array() <= 0.0).any() || !(el.radius > 0.0))
      throw InputError("degenerate ellipsoid");
  }
}

/// Boundary point and outward unit normal.
std::pair<Vec, Vec> sample_boundary(const Region& region, Rng& rng) {
  if (const auto* b = std::get_if<Box>(&region)) {
    const int d = b->dim();
    const auto face = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * d));
    Vec x(d), n = Vec::Zero(d);
    for (int i = 0; i < d; ++i) x[i] = uniform(rng, b->lo[i], b->hi[i]);
    const int axis = face / 2;
    if (face % 2 == 0) {
      x[axis] = b->lo[axis];
      n[axis] = -1.0;
    } else {
      x[axis] = b->hi[axis];
      n[axis] = 1.0;
    }
    return {x, n};
  }
  const auto& el = std::get<Ellipsoid>(region);
  const Vec u = random_unit(rng, static_cast<int>(el.center.size()));
  const Vec x = el.center + el.radius * (u.array() / el.weights.array().sqrt()).matrix();
  Vec n = (el.weights.array() * (x - el.center).array()).matrix();
  return {x, n / n.norm()};
}

Vec sample_interior(const Region& region, Rng& rng) {
  if (const auto* b = std::get_if<Box>(&region)) {
    Vec x(b->dim());
    for (int i = 0; i < b->dim(); ++i) x[i] = uniform(rng, b->lo[i], b->hi[i]);
    return x;
  }
  const auto& el = std::get<Ellipsoid>(region);
  const int d = static_cast<int>(el.center.size());
  const Vec u = random_unit(rng, d);
  const double rad = el.radius * std::pow(uniform01(rng), 1.0 / d);
  return el.center + rad * (u.array() / el.weights.array().sqrt()).matrix();
}

}  // namespace

TrapReport trap_check(const VectorFieldModel& model, const Region& region, int n_boundary,
                      double horizon, std::uint64_t seed, double tol) {
  const int d = model.dim();
  check_region(region, d);
  if (n_boundary < 0) throw InputError("n_boundary must be non-negative");
  TrapReport rep;
  rep.n_boundary = rep.n_interior = n_boundary;
  Rng rng(split_seed(seed, 0x54524150ULL));
  for (int s = 0; s < n_boundary; ++s) {
    auto [x, n] = sample_boundary(region, rng);
    const double v = model.field(x).dot(n);
    if (!(v < 0.0)) {
      ++rep.boundary_violations;
      rep.violations.push_back({x, v, true});
    }
  }
  for (int s = 0; s < n_boundary; ++s) {
    const Vec x0 = sample_interior(region, rng);
    double worst = region_excess(region, x0);
    if (horizon > 0.0) {
      try {
        DormandPrince dp([&model](const Vec& y, Vec& dy) { model.field(y, dy); }, x0, 0.0,
                         horizon, tol);
        while (!dp.done() && worst <= 0.0) {
          dp.step();
          worst = std::max(worst, region_excess(region, dp.y()));
        }
      } catch (const NumericError&) {
        worst = std::numeric_limits<double>::infinity();
      }
    }
    if (worst > 0.0) {
      ++rep.interior_violations;
      rep.violations.push_back({x0, worst, false});
    }
  }
  rep.passed = rep.violations.empty();
  return rep;
}

std::optional<double> minimal_trapping_radius(const VectorFieldModel& model, Ellipsoid shape,
                                              int n, std::uint64_t seed, double lo, double hi) {
  auto passes = [&](double radius) {
    shape.radius = radius;
    Rng rng(split_seed(seed, 0x52414449ULL));
    for (int s = 0; s < n; ++s) {
      auto [x, nrm] = sample_boundary(shape, rng);
      if (!(model.field(x).dot(nrm) < 0.0)) return false;
    }
    return true;
  };
  if (!passes(hi)) return std::nullopt;
  if (passes(lo)) return lo;
  while (hi - lo > 1e-6 * hi) {
    const double mid = 0.5 * (lo + hi);
    (passes(mid) ? hi : lo) = mid;
  }
  return hi;
}

std::vector<Vec> attractor_sample(const VectorFieldModel& model, const Vec& x0, double transient,
                                  int n, double spacing, double tol) {
  if (n < 1 || spacing <= 0.0 || transient < 0.0) throw InputError("bad attractor sample protocol");
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(n));
  DormandPrince dp([&model](const Vec& y, Vec& dy) { model.field(y, dy); }, x0, 0.0,
                   transient + spacing * (n - 1), tol);
  int next = 0;
  auto next_time = [&] { return transient + spacing * next; };
  if (next_time() == 0.0) out.push_back(x0), ++next;
  while (!dp.done()) {
    dp.step();
    while (next < n && next_time() <= dp.t()) {
      out.push_back(dp.dense(next_time()));
      ++next;
    }
  }
  while (next < n) out.push_back(dp.y()), ++next;
  return out;
}

nlohmann::json to_json(const TrapReport& r) {
  nlohmann::json j;
  j["passed"] = r.passed;
  j["n_boundary"] = r.n_boundary;
  j["n_interior"] = r.n_interior;
  j["boundary_violations"] = r.boundary_violations;
  j["interior_violations"] = r.interior_violations;
  j["violations"] = nlohmann::json::array();
  for (const auto& v : r.violations)
    j["violations"].push_back({{"point", to_std(v.point)}, {"value", v.value}, {"boundary", v.boundary}});
  if (r.minimal_R) j["minimal_R"] = *r.minimal_R;
  return j;
}

}  // namespace sechyp
