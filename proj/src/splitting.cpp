#include "sechyp/splitting.hpp"

#include "sechyp/flow.hpp"
#include "sechyp/parallel.hpp"
#include "sechyp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sechyp {

namespace {

/// Backward QR sweep over a Jacobian chain: returns the frame at the start of
/// the chain whose leading columns are the most contracted directions of the
/// forward product, and the accumulated log R diagonals (descending growth of
/// the inverse).
std::pair<Mat, Vec> backward_qr(const JacobianChain& chain, std::size_t first, std::size_t last) {
  const auto d = chain.points.front().size();
  Mat q = Mat::Identity(d, d);
  Vec logsum = Vec::Zero(d);
  Mat qn;
  Vec rd;
  for (std::size_t k = last; k-- > first;) {
    Eigen::PartialPivLU<Mat> lu(chain.steps[k]);
    positive_qr(lu.solve(q), qn, rd);
    if ((rd.array() <= 0.0).any()) throw NumericError("rank collapse in backward QR");
    logsum += rd.array().log().matrix();
    q.swap(qn);
  }
  return {q, logsum};
}

Mat orthonormal_complement(const Mat& e) {
  const auto d = e.rows(), k = e.cols();
  Eigen::HouseholderQR<Mat> qr(e);
  Mat full = qr.householderQ() * Mat::Identity(d, d);
  return full.rightCols(d - k);
}

double sin_angle_to_span(const Vec& v, const Mat& frame) {
  const Vec perp = v - frame * (frame.transpose() * v);
  return std::min(1.0, perp.norm() / v.norm());
}

}  // namespace

double principal_angle(const Mat& a, const Mat& b) {
  Eigen::JacobiSVD<Mat> svd(a.transpose() * b);
  const double smin = svd.singularValues().minCoeff();
  if (a.cols() != b.cols()) {
    // Largest angle from the smaller space into the larger one.
    const Mat& small = a.cols() < b.cols() ? a : b;
    const Mat& big = a.cols() < b.cols() ? b : a;
    Eigen::JacobiSVD<Mat> s2(small.transpose() * big);
    return std::acos(std::clamp(s2.singularValues().minCoeff(), 0.0, 1.0));
  }
  // acos is ill-conditioned near 1; use the sine of the residual instead.
  const Mat resid = b - a * (a.transpose() * b);
  Eigen::JacobiSVD<Mat> rs(resid);
  const double s = std::clamp(rs.singularValues().maxCoeff(), 0.0, 1.0);
  return smin > 0.7 ? std::asin(s) : std::acos(std::clamp(smin, 0.0, 1.0));
}

double min_principal_angle(const Mat& a, const Mat& b) {
  Eigen::JacobiSVD<Mat> svd(a.transpose() * b);
  return std::acos(std::clamp(svd.singularValues().maxCoeff(), 0.0, 1.0));
}

SplittingEstimate finite_time_splitting(const VectorFieldModel& model, const Vec& x, int d_s,
                                        double T_est, const SplittingOptions& opts) {
  const int d = model.dim();
  if (x.size() != d) throw InputError("point dimension mismatch");
  if (!(T_est > 0.0)) throw PreconditionError("T_est must be positive");
  if (d_s < 1 || d_s >= d) throw PreconditionError("need 1 <= d_s < d");
  SplittingEstimate est;
  est.base = x;
  est.d_s = d_s;
  est.T_est = T_est;

  const JacobianChain chain = jacobian_chain(model, x, T_est, opts.interval, opts.tol);
  auto [q, logsum] = backward_qr(chain, 0, chain.steps.size());
  est.E_s = q.leftCols(d_s);
  est.log_singular = -logsum;
  est.gap = std::exp(logsum[d_s - 1] - logsum[d_s]);
  est.low_confidence = est.gap < 1.05;

  if (!opts.need_cu) {
    est.E_cu = orthonormal_complement(est.E_s);
  } else {
    // Push a complement of E_s forward from a point slightly in the past;
    // components along E_s die out at the domination rate.
    double back = std::min(T_est, opts.backward_window);
    Mat frame;
    for (;;) {
      if (back < 0.25 * opts.interval) {
        frame = orthonormal_complement(est.E_s);
        break;
      }
      try {
        const Vec xb = flow_point(model, x, -back, std::max(opts.tol * 0.1, 1e-12));
        const JacobianChain bchain = jacobian_chain(model, xb, back, opts.interval, opts.tol);
        auto [qb, lb] = backward_qr(bchain, 0, bchain.steps.size());
        frame = orthonormal_complement(qb.leftCols(d_s));
        Mat qn;
        Vec rd;
        for (const auto& m : bchain.steps) {
          positive_qr(m * frame, qn, rd);
          frame.swap(qn);
        }
        break;
      } catch (const NumericError&) {
        back *= 0.5;
      }
    }
    est.E_cu = frame;
  }

  const Vec g = model.field(x);
  const double gn = g.norm();
  if (gn > 1e-8) {
    const Vec gu = g / gn;
    est.flow_angle = std::asin(sin_angle_to_span(gu, est.E_cu));
    const auto d_cu = est.E_cu.cols();
    Mat cu(d, d_cu);
    cu.col(0) = gu;
    if (d_cu > 1) {
      const Mat p = est.E_cu - gu * (gu.transpose() * est.E_cu);
      Eigen::JacobiSVD<Mat> svd(p, Eigen::ComputeThinU);
      cu.rightCols(d_cu - 1) = svd.matrixU().leftCols(d_cu - 1);
      // Re-orthogonalize against g once more for round-off.
      for (Eigen::Index j = 1; j < d_cu; ++j) {
        Vec c = cu.col(j);
        for (Eigen::Index i = 0; i < j; ++i) c -= cu.col(i).dot(c) * cu.col(i);
        cu.col(j) = c / c.norm();
      }
    }
    est.E_cu = cu;
  }
  est.min_angle = min_principal_angle(est.E_s, est.E_cu);
  return est;
}

// ---------------------------------------------------------------------------

namespace {

void check_points(const VectorFieldModel& model, const std::vector<Vec>& points) {
  for (const auto& p : points)
    if (p.size() != model.dim()) throw InputError("point dimension mismatch");
}

void finalize(CheckReport& rep) {
  rep.sampled_points = static_cast<int>(rep.diagnostics.size());
  const auto passes = std::count_if(rep.diagnostics.begin(), rep.diagnostics.end(),
                                    [](const PointDiagnostic& p) { return p.pass; });
  rep.pass_fraction = rep.diagnostics.empty()
                          ? 0.0
                          : static_cast<double>(passes) / static_cast<double>(rep.diagnostics.size());
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (const auto& p : rep.diagnostics) rep.worst_margin = std::min(rep.worst_margin, p.margin);
  if (rep.diagnostics.empty()) rep.worst_margin = 0.0;
}

std::pair<double, double> line_fit(const std::vector<double>& t, const std::vector<double>& y) {
  const double n = static_cast<double>(t.size());
  const double mt = std::accumulate(t.begin(), t.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxy += (t[i] - mt) * (y[i] - my);
    sxx += (t[i] - mt) * (t[i] - mt);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return {slope, my - slope * mt};
}

}  // namespace

CheckReport cone_invariance(const VectorFieldModel& model, const std::vector<Vec>& points, int d_s,
                            double a, double T, const CheckOptions& opts) {
  check_points(model, points);
  if (!(a > 0.0)) throw PreconditionError("cone aperture must be positive");
  if (!(T >= 0.0)) throw PreconditionError("T must be non-negative");
  CheckReport rep;
  rep.check = "cone_invariance";
  rep.a = a;
  rep.T = T;
  rep.d_s = d_s;
  rep.diagnostics.resize(points.size());
  parallel_for(points.size(), [&](std::size_t i) {
    auto& diag = rep.diagnostics[i];
    diag.point_index = static_cast<int>(i);
    if (T == 0.0) {
      // The identity maps every cone onto itself; boundary vectors stay on the boundary.
      diag.margin = 0.0;
      diag.pass = true;
      return;
    }
    const auto sx = finite_time_splitting(model, points[i], d_s, opts.T_est, opts.splitting);
    const JacobianChain chain = jacobian_chain(model, points[i], T, opts.splitting.interval,
                                               opts.splitting.tol);
    const auto sy = finite_time_splitting(model, chain.points.back(), d_s, opts.T_est, opts.splitting);
    const auto d_cu = sx.E_cu.cols();
    Mat basis(model.dim(), model.dim());
    basis << sy.E_s, sy.E_cu;
    Eigen::PartialPivLU<Mat> lu(basis);
    Rng rng(split_seed(opts.seed, 0x434f4e45ULL, i));
    double max_ratio = 0.0;
    for (int s = 0; s < opts.cone_samples; ++s) {
      Vec v = a * (sx.E_s * random_unit(rng, d_s)) + sx.E_cu * random_unit(rng, static_cast<int>(d_cu));
      v /= v.norm();
      for (const auto& m : chain.steps) v = m * v;
      const Vec c = lu.solve(v);
      const double ratio = c.head(d_s).norm() / c.tail(d_cu).norm();
      max_ratio = std::max(max_ratio, ratio);
    }
    diag.margin = a - max_ratio;
    diag.pass = max_ratio <= a;
    diag.rate = max_ratio;
  });
  finalize(rep);
  rep.passed = rep.pass_fraction == 1.0;
  return rep;
}

ExpansionReport sectional_expansion(const VectorFieldModel& model, const std::vector<Vec>& points,
                                    int d_s, double T, const CheckOptions& opts) {
  check_points(model, points);
  if (model.dim() - d_s < 2) throw PreconditionError("sectional expansion needs d_cu >= 2");
  if (!(T > 0.0)) throw PreconditionError("T must be positive");
  ExpansionReport rep;
  rep.check = "sectional_expansion";
  rep.T = T;
  rep.d_s = d_s;
  rep.diagnostics.resize(points.size());
  std::vector<double> intercepts(points.size());
  parallel_for(points.size(), [&](std::size_t i) {
    const auto s = finite_time_splitting(model, points[i], d_s, opts.T_est, opts.splitting);
    const auto d_cu = static_cast<int>(s.E_cu.cols());
    std::vector<Mat> planes;
    for (int p = 0; p < d_cu; ++p)
      for (int q = p + 1; q < d_cu; ++q) {
        Mat f(model.dim(), 2);
        f << s.E_cu.col(p), s.E_cu.col(q);
        planes.push_back(f);
      }
    Rng rng(split_seed(opts.seed, 0x53454354ULL, i));
    for (int r = 0; r < opts.random_planes; ++r) {
      Mat c(d_cu, 2);
      for (int k = 0; k < 2 * d_cu; ++k) c.data()[k] = normal(rng);
      Mat q;
      Vec rd;
      positive_qr(s.E_cu * c, q, rd);
      planes.push_back(q);
    }
    const JacobianChain chain = jacobian_chain(model, points[i], T, opts.splitting.interval,
                                               opts.splitting.tol);
    Mat q;
    Vec rd;
    if (d_cu > 2) {
      // The least-expanded plane at time T: span of the two weakest right
      // singular directions of D phi_T restricted to E_cu.
      Mat frame = s.E_cu, r_step, r_total = Mat::Identity(d_cu, d_cu);
      for (const auto& step : chain.steps) {
        positive_qr(step * frame, q, rd, &r_step);
        frame = q;
        r_total = r_step * r_total;
      }
      const Eigen::JacobiSVD<Mat> svd(r_total, Eigen::ComputeFullV);
      planes.push_back(s.E_cu * svd.matrixV().rightCols(2));
    }
    std::vector<double> logs(planes.size(), 0.0);
    std::vector<double> ts{0.0}, mins{0.0};
    for (std::size_t k = 0; k < chain.steps.size(); ++k) {
      double mn = std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < planes.size(); ++p) {
        positive_qr(chain.steps[k] * planes[p], q, rd);
        logs[p] += std::log(rd[0]) + std::log(rd[1]);
        planes[p] = q;
        mn = std::min(mn, logs[p]);
      }
      ts.push_back(chain.times[k + 1]);
      mins.push_back(mn);
    }
    const auto [slope, icpt] = line_fit(ts, mins);
    auto& diag = rep.diagnostics[i];
    diag.point_index = static_cast<int>(i);
    diag.rate = slope;
    diag.margin = slope;
    diag.pass = slope > 0.0;
    intercepts[i] = icpt;
  });
  finalize(rep);
  double sum = 0.0;
  for (const auto& p : rep.diagnostics) sum += p.rate;
  rep.theta_hat = points.empty() ? 0.0 : sum / static_cast<double>(points.size());
  rep.K_hat = intercepts.empty() ? 0.0 : std::exp(*std::min_element(intercepts.begin(), intercepts.end()));
  rep.passed = !points.empty() && rep.theta_hat > 0.0;
  return rep;
}

DominationReport domination(const VectorFieldModel& model, const std::vector<Vec>& points, int d_s,
                            double T, const CheckOptions& opts) {
  check_points(model, points);
  if (d_s < 1 || model.dim() - d_s < 2) throw PreconditionError("domination needs d_s >= 1 and d_cu >= 2");
  if (!(T > 0.0)) throw PreconditionError("T must be positive");
  DominationReport rep;
  rep.check = "domination";
  rep.T = T;
  rep.d_s = d_s;
  rep.diagnostics.resize(points.size());
  parallel_for(points.size(), [&](std::size_t i) {
    const auto s = finite_time_splitting(model, points[i], d_s, opts.T_est, opts.splitting);
    const JacobianChain chain = jacobian_chain(model, points[i], T, opts.splitting.interval,
                                               opts.splitting.tol);
    const auto d_cu = s.E_cu.cols();
    Mat frame = s.E_cu, qn, rfac;
    Mat racc = Mat::Identity(d_cu, d_cu);
    Vec rd;
    std::vector<double> ts, logs;
    for (std::size_t k = 0; k < chain.steps.size(); ++k) {
      positive_qr(chain.steps[k] * frame, qn, rd, &rfac);
      frame.swap(qn);
      racc = rfac * racc;
      // ||D phi_t | E_s|| is the d_s-th smallest singular value of D phi_t.
      const auto [qs, logsum] = backward_qr(chain, 0, k + 1);
      const double log_s = -logsum[d_s - 1];
      Eigen::JacobiSVD<Mat> svd(racc);
      const double log_cu_inv = -std::log(svd.singularValues().minCoeff());
      ts.push_back(chain.times[k + 1]);
      logs.push_back(log_s + log_cu_inv);
    }
    const auto [slope, icpt] = line_fit(ts, logs);
    (void)icpt;
    auto& diag = rep.diagnostics[i];
    diag.point_index = static_cast<int>(i);
    diag.rate = slope;
    diag.margin = -slope;
    diag.pass = slope < 0.0;
  });
  finalize(rep);
  double sum = 0.0;
  for (const auto& p : rep.diagnostics) sum += p.rate;
  rep.slope = points.empty() ? 0.0 : sum / static_cast<double>(points.size());
  rep.passed = !points.empty() && rep.slope < 0.0;
  return rep;
}

LyapunovResult lyapunov_spectrum(const VectorFieldModel& model, const Vec& x0, double T,
                                 const LyapunovOptions& opts) {
  const int d = model.dim();
  if (x0.size() != d) throw InputError("point dimension mismatch");
  if (!(T > 0.0)) throw InputError("T must be positive");
  Vec x = opts.transient > 0.0 ? flow_point(model, x0, opts.transient, opts.tol) : x0;

  LyapunovResult res;
  res.T = T;
  // Time-averaged divergence along the orbit, trapezoidal over accepted steps.
  {
    DormandPrince dp([&model](const Vec& y, Vec& dy) { model.field(y, dy); }, x, 0.0, T, opts.tol);
    double acc = 0.0, prev = model.divergence(x), tprev = 0.0;
    while (!dp.done()) {
      dp.step();
      const double cur = model.divergence(dp.y());
      acc += 0.5 * (prev + cur) * (dp.t() - tprev);
      prev = cur;
      tprev = dp.t();
    }
    res.mean_divergence = acc / T;
  }

  Mat q = Mat::Identity(d, d), qn;
  Vec rd, logsum = Vec::Zero(d);
  Vec band_lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec band_hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  double t = 0.0;
  while (t < T) {
    const double dt = std::min(opts.interval, T - t);
    auto [xn, v] = propagate_frame(model, x, q, dt, opts.tol);
    positive_qr(v, qn, rd);
    if ((rd.array() <= 0.0).any()) throw NumericError("tangent frame rank collapse");
    logsum += rd.array().log().matrix();
    q.swap(qn);
    x = xn;
    t = (T - (t + dt) < 1e-12) ? T : t + dt;
    if (t >= 0.9 * T) {
      Vec est = logsum / t;
      std::sort(est.data(), est.data() + d, std::greater<>());
      band_lo = band_lo.cwiseMin(est);
      band_hi = band_hi.cwiseMax(est);
    }
  }
  Vec est = logsum / T;
  std::sort(est.data(), est.data() + d, std::greater<>());
  res.exponents = to_std(est);
  res.band = to_std(band_hi - band_lo);
  res.wide_band = (band_hi - band_lo).maxCoeff() > opts.band_flag;
  return res;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json mat_json(const Mat& m) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) rows[static_cast<std::size_t>(r)].push_back(m(r, c));
  return rows;
}

}  // namespace

nlohmann::json to_json(const SplittingEstimate& s) {
  return {{"base", to_std(s.base)},      {"d_s", s.d_s},
          {"E_s", mat_json(s.E_s)},      {"E_cu", mat_json(s.E_cu)},
          {"T_est", s.T_est},            {"gap", s.gap},
          {"log_singular", to_std(s.log_singular)},
          {"min_angle", s.min_angle},    {"flow_angle", s.flow_angle},
          {"low_confidence", s.low_confidence},
          {"note", "finite-time singular-vector surrogate of the invariant splitting"}};
}

nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json j;
  j["check"] = r.check;
  j["sampled_points"] = r.sampled_points;
  j["parameters"] = {{"a", r.a}, {"T", r.T}, {"d_s", r.d_s}};
  j["pass_fraction"] = r.pass_fraction;
  j["worst_margin"] = r.worst_margin;
  j["passed"] = r.passed;
  j["diagnostics"] = nlohmann::json::array();
  for (const auto& p : r.diagnostics)
    j["diagnostics"].push_back(
        {{"point_index", p.point_index}, {"margin", p.margin}, {"pass", p.pass}, {"rate", p.rate}});
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

nlohmann::json to_json(const ExpansionReport& r) {
  auto j = to_json(static_cast<const CheckReport&>(r));
  j["theta_hat"] = r.theta_hat;
  j["K_hat"] = r.K_hat;
  return j;
}

nlohmann::json to_json(const DominationReport& r) {
  auto j = to_json(static_cast<const CheckReport&>(r));
  j["slope"] = r.slope;
  return j;
}

nlohmann::json to_json(const LyapunovResult& r) {
  return {{"exponents", r.exponents},
          {"band", r.band},
          {"sum", std::accumulate(r.exponents.begin(), r.exponents.end(), 0.0)},
          {"mean_divergence", r.mean_divergence},
          {"wide_band", r.wide_band},
          {"T", r.T}};
}

std::string diagnostics_csv(const CheckReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "point_index,margin,pass\n";
  for (const auto& p : r.diagnostics) os << p.point_index << "," << p.margin << "," << (p.pass ? 1 : 0) << "\n";
  return os.str();
}

}  // namespace sechyp
