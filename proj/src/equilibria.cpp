#include "sechyp/equilibria.hpp"

#include "sechyp/parallel.hpp"
#include "sechyp/rng.hpp"

#include <algorithm>
#include <cmath>

namespace sechyp {

namespace {

double radical_inverse(std::uint64_t i, int base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % static_cast<std::uint64_t>(base));
    i /= static_cast<std::uint64_t>(base);
    f *= inv;
  }
  return r;
}

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

std::optional<Vec> damped_newton(const VectorFieldModel& model, Vec x, const Box& box) {
  const int d = model.dim();
  Vec g = model.field(x);
  const Vec extent = box.hi - box.lo;
  for (int it = 0; it < 100; ++it) {
    const double res = g.norm();
    if (res < 1e-10) break;
    Eigen::FullPivLU<Mat> lu(model.jacobian(x));
    if (lu.rank() < d) return std::nullopt;
    const Vec dx = lu.solve(-g);
    double alpha = 1.0;
    for (;;) {
      const Vec xn = x + alpha * dx;
      const Vec gn = model.field(xn);
      if (gn.norm() < (1.0 - 1e-4 * alpha) * res) {
        x = xn;
        g = gn;
        break;
      }
      alpha *= 0.5;
      if (alpha < 1e-6) return std::nullopt;
    }
    // Seeds that wander far outside the box are abandoned.
    if (((x - box.lo).array() < -extent.array()).any() || ((x - box.hi).array() > extent.array()).any())
      return std::nullopt;
  }
  if (!(g.norm() < 1e-10)) return std::nullopt;
  // Polish with plain Newton steps while the residual improves.
  for (int it = 0; it < 8 && g.norm() >= 1e-13; ++it) {
    Eigen::FullPivLU<Mat> lu(model.jacobian(x));
    if (lu.rank() < d) break;
    const Vec xn = x + lu.solve(-g);
    const Vec gn = model.field(xn);
    if (!(gn.norm() < g.norm())) break;
    x = xn;
    g = gn;
  }
  return x;
}

}  // namespace

std::vector<Vec> find_equilibria(const VectorFieldModel& model, const Box& search_box, int n_seeds,
                                 std::uint64_t seed) {
  const int d = model.dim();
  if (search_box.dim() != d) throw InputError("search box dimension mismatch");
  if ((search_box.hi.array() <= search_box.lo.array()).any()) throw InputError("degenerate search box");
  if (d > 16) throw InputError("quasi-random seeding supports dim <= 16");
  Rng rng(split_seed(seed, 0x4551554cULL));
  Vec shift(d);
  for (int i = 0; i < d; ++i) shift[i] = uniform01(rng);

  std::vector<std::optional<Vec>> found(static_cast<std::size_t>(std::max(n_seeds, 0)));
  parallel_for(found.size(), [&](std::size_t s) {
    Vec x0(d);
    for (int i = 0; i < d; ++i) {
      const double u = std::fmod(radical_inverse(s + 1, kPrimes[i]) + shift[i], 1.0);
      x0[i] = search_box.lo[i] + u * (search_box.hi[i] - search_box.lo[i]);
    }
    found[s] = damped_newton(model, x0, search_box);
  });

  std::vector<Vec> roots;
  for (const auto& r : found) {
    if (!r || !search_box.contains(*r)) continue;
    bool dup = false;
    for (const auto& q : roots)
      if ((q - *r).norm() < 1e-6) dup = true;
    if (!dup) roots.push_back(*r);
  }
  // Signed zeros print differently; normalize them away.
  for (auto& r : roots)
    for (int i = 0; i < d; ++i)
      if (r[i] == 0.0) r[i] = 0.0;
  std::sort(roots.begin(), roots.end(), [](const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  return roots;
}

std::vector<std::complex<double>> sorted_spectrum(const Mat& a) {
  Eigen::EigenSolver<Mat> es(a, false);
  if (es.info() != Eigen::Success) throw NumericError("eigenvalue solver failed");
  std::vector<std::complex<double>> ev(es.eigenvalues().data(),
                                       es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), [](const auto& x, const auto& y) {
    return x.real() != y.real() ? x.real() < y.real() : x.imag() < y.imag();
  });
  return ev;
}

EquilibriumReport classify_equilibrium(const VectorFieldModel& model, const Vec& sigma, int d_s) {
  const int d = model.dim();
  if (sigma.size() != d) throw InputError("point dimension mismatch");
  EquilibriumReport rep;
  rep.position = sigma;
  rep.d_s = d_s;
  rep.residual = model.field(sigma).norm();
  if (!(rep.residual < 1e-10)) throw PreconditionError("point is not an equilibrium (||G|| >= 1e-10)");
  if (d_s < 1 || d_s > d - 2) throw PreconditionError("need 1 <= d_s <= d - 2");
  rep.eigenvalues = sorted_spectrum(model.jacobian(sigma));

  double min_abs_re = std::numeric_limits<double>::infinity();
  for (const auto& l : rep.eigenvalues) {
    min_abs_re = std::min(min_abs_re, std::abs(l.real()));
    if (l.real() < 0.0) ++rep.index;
    if (l.real() >= 0.0 && (!rep.lambda_u || l.real() < *rep.lambda_u)) rep.lambda_u = l.real();
  }
  rep.hyperbolic = min_abs_re > kSpectralGapTol;
  const auto& weak = rep.eigenvalues[static_cast<std::size_t>(d_s)];
  if (std::abs(weak.imag()) < 1e-8) rep.lambda_s = weak.real();
  rep.lorenz_like = rep.hyperbolic && rep.lambda_s && rep.lambda_u && rep.index == d_s + 1 &&
                    -*rep.lambda_u < *rep.lambda_s && *rep.lambda_s < 0.0 && 0.0 < *rep.lambda_u;
  return rep;
}

double cond_a_value(const std::vector<std::complex<double>>& ev, int d_s, double q) {
  return ev.front().real() - ev[static_cast<std::size_t>(d_s)].real() + q * ev.back().real();
}

double cond_b_value(const VectorFieldModel& model, const Vec& x, int d_s, double q) {
  const Mat j = model.jacobian(x);
  return j.trace() + (d_s * q - 1.0) * j.norm();
}

namespace {

struct DissipativityData {
  std::vector<std::vector<std::complex<double>>> spectra;
  // div and Frobenius norm per sample: cond_b is affine in q per point.
  std::vector<std::pair<double, double>> samples;
};

double sup_b(const std::vector<std::pair<double, double>>& s, int d_s, double q) {
  double sup = -std::numeric_limits<double>::infinity();
  for (const auto& [div, fro] : s) sup = std::max(sup, div + (d_s * q - 1.0) * fro);
  return sup;
}

bool pass_a(const DissipativityData& data, int d_s, double q) {
  for (const auto& ev : data.spectra)
    if (!(cond_a_value(ev, d_s, q) < 0.0)) return false;
  return true;
}

template <class Pred>
std::optional<double> bisect_q(double lo, double hi, Pred pass) {
  if (!pass(lo)) return std::nullopt;
  if (pass(hi)) return hi;
  while (hi - lo > 1e-5) {
    const double mid = 0.5 * (lo + hi);
    (pass(mid) ? lo : hi) = mid;
  }
  return lo;
}

}  // namespace

DissipativityReport strong_dissipativity(const VectorFieldModel& model, int d_s, double q,
                                         const std::vector<Vec>& sample,
                                         const DissipativityOptions& opts) {
  const int d = model.dim();
  if (d_s < 1 || d_s > d - 1) throw PreconditionError("need 1 <= d_s < d");
  if (!(q > 1.0 / d_s)) throw PreconditionError("q must exceed 1/d_s");
  if (sample.empty()) throw PreconditionError("attractor sample is empty");

  DissipativityReport rep;
  rep.d_s = d_s;
  rep.q = q;

  std::vector<Vec> eqs = opts.equilibria;
  if (eqs.empty() && opts.search_equilibria) {
    Vec lo = sample.front(), hi = sample.front();
    for (const auto& x : sample) {
      lo = lo.cwiseMin(x);
      hi = hi.cwiseMax(x);
    }
    const Vec pad = 0.25 * (hi - lo) + Vec::Constant(d, 1e-3);
    eqs = find_equilibria(model, Box{lo - pad, hi + pad}, opts.n_seeds, opts.seed);
  }
  DissipativityData data;
  for (const auto& e : eqs) {
    data.spectra.push_back(sorted_spectrum(model.jacobian(e)));
    const double v = cond_a_value(data.spectra.back(), d_s, q);
    rep.cond_a.push_back({e, v, v < 0.0});
    rep.cond_a_pass = rep.cond_a_pass && v < 0.0;
  }
  data.samples.resize(sample.size());
  parallel_for(sample.size(), [&](std::size_t i) {
    const Mat j = model.jacobian(sample[i]);
    data.samples[i] = {j.trace(), j.norm()};
  });
  rep.cond_b = sup_b(data.samples, d_s, q);
  rep.cond_b_pass = rep.cond_b < 0.0;

  if (opts.grid_box) {
    const Box& b = *opts.grid_box;
    if (b.dim() != d) throw InputError("grid box dimension mismatch");
    const int n = std::max(2, opts.grid_per_axis);
    std::vector<int> idx(d, 0);
    double sup = -std::numeric_limits<double>::infinity();
    for (;;) {
      Vec x(d);
      for (int i = 0; i < d; ++i) x[i] = b.lo[i] + (b.hi[i] - b.lo[i]) * idx[i] / (n - 1);
      sup = std::max(sup, cond_b_value(model, x, d_s, q));
      int k = 0;
      while (k < d && ++idx[k] == n) idx[k++] = 0;
      if (k == d) break;
    }
    rep.cond_b_grid = sup;
  }

  const double lo = 1.0 / d_s + 1e-6, hi = 10.0;
  rep.q_max_a = bisect_q(lo, hi, [&](double qq) { return pass_a(data, d_s, qq); });
  rep.q_max_b = bisect_q(lo, hi, [&](double qq) { return sup_b(data.samples, d_s, qq) < 0.0; });
  rep.q_max = bisect_q(lo, hi, [&](double qq) {
    return pass_a(data, d_s, qq) && sup_b(data.samples, d_s, qq) < 0.0;
  });
  return rep;
}

nlohmann::json to_json(const EquilibriumReport& r) {
  nlohmann::json j;
  j["position"] = to_std(r.position);
  j["eigenvalues"] = nlohmann::json::array();
  for (const auto& l : r.eigenvalues) j["eigenvalues"].push_back({l.real(), l.imag()});
  j["hyperbolic"] = r.hyperbolic;
  j["index"] = r.index;
  j["lorenz_like"] = r.lorenz_like;
  j["lambda_s"] = r.lambda_s ? nlohmann::json(*r.lambda_s) : nlohmann::json(nullptr);
  j["lambda_u"] = r.lambda_u ? nlohmann::json(*r.lambda_u) : nlohmann::json(nullptr);
  j["residual"] = r.residual;
  j["d_s"] = r.d_s;
  if (!r.hyperbolic) j["note"] = "non-hyperbolic (numerical)";
  return j;
}

nlohmann::json to_json(const DissipativityReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json("none");
  };
  nlohmann::json j;
  j["d_s"] = r.d_s;
  j["q"] = r.q;
  j["cond_a"] = nlohmann::json::array();
  for (const auto& c : r.cond_a)
    j["cond_a"].push_back({{"position", to_std(c.position)}, {"value", c.value}, {"pass", c.pass}});
  j["cond_a_pass"] = r.cond_a_pass;
  j["cond_b"] = {{"sampled_sup", r.cond_b}, {"pass", r.cond_b_pass}};
  if (r.cond_b_grid) j["cond_b"]["grid_sup"] = *r.cond_b_grid;
  j["q_max"] = opt(r.q_max);
  j["q_max_a"] = opt(r.q_max_a);
  j["q_max_b"] = opt(r.q_max_b);
  j["passed"] = r.passed();
  return j;
}

}  // namespace sechyp
