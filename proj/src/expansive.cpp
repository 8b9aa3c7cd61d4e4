#include "sechyp/expansive.hpp"

#include "sechyp/parallel.hpp"
#include "sechyp/rng.hpp"
#include "sechyp/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sechyp {

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::same_orbit_shift: return "same-orbit-shift";
    case Verdict::stayed_close: return "stayed-close";
    case Verdict::separated: return "separated";
    case Verdict::undecided: return "undecided";
  }
  return "";
}

std::string to_string(Stratum s) {
  switch (s) {
    case Stratum::on_leaf: return "on-leaf";
    case Stratum::near_leaf: return "near-leaf";
    case Stratum::generic: return "generic";
    case Stratum::antipodal_lobe: return "antipodal-lobe";
  }
  return "";
}

std::string to_string(Direction d) {
  switch (d) {
    case Direction::future: return "future";
    case Direction::past: return "past";
    case Direction::both: return "both";
  }
  return "";
}

Direction direction_from_string(const std::string& s) {
  if (s == "future") return Direction::future;
  if (s == "past") return Direction::past;
  if (s == "both") return Direction::both;
  throw InputError("direction must be future, past or both");
}

UniformSeries sample_uniform(const Trajectory& traj, double dt) {
  if (!(dt > 0.0)) throw InputError("dt must be positive");
  UniformSeries s;
  s.t0 = traj.t0();
  s.dt = dt;
  const double span = std::abs(traj.t1() - traj.t0());
  const double dir = traj.t1() >= traj.t0() ? 1.0 : -1.0;
  const auto n = static_cast<int>(std::floor(span / dt + 1e-9)) + 1;
  for (int k = 0; k < n; ++k) s.samples.push_back(traj.at(traj.t0() + dir * k * dt));
  s.dense = std::make_shared<const Trajectory>(traj);
  return s;
}

namespace {

/// Sup-cost dynamic programme over banded monotone warps, fed row by row.
class WarpDP {
 public:
  WarpDP(int n, int m, int band, double abort_above, bool keep_path)
      : n_(n), m_(m), band_(band), width_(2 * band + 1), abort_(abort_above), keep_(keep_path) {
    for (auto& r : d_) r.assign(static_cast<std::size_t>(width_), kInf);
    for (auto& r : c_) r.assign(static_cast<std::size_t>(width_), kInf);
    if (keep_) back_.assign(static_cast<std::size_t>(n_) * static_cast<std::size_t>(width_), 0);
  }

  int center(int i) const {
    if (n_ <= 1) return 0;
    return static_cast<int>(std::llround(static_cast<double>(i) * (m_ - 1) / (n_ - 1)));
  }
  int lo(int i) const { return std::max(0, center(i) - band_); }
  int hi(int i) const { return std::min(m_ - 1, center(i) + band_); }
  int rows_done() const { return rows_; }
  bool aborted() const { return aborted_; }
  double lower_bound() const { return bound_; }

  /// Processes row `rows_done()`; needs x[i] and y up to hi(i).
  void next_row(const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
    const int i = rows_;
    auto& drow = d_[static_cast<std::size_t>(i % 4)];
    auto& crow = c_[static_cast<std::size_t>(i % 3)];
    std::fill(drow.begin(), drow.end(), kInf);
    std::fill(crow.begin(), crow.end(), kInf);
    const int l = lo(i), h = hi(i), off = center(i) - band_;
    for (int j = l; j <= h; ++j) crow[static_cast<std::size_t>(j - off)] = (xs[static_cast<std::size_t>(i)] - ys[static_cast<std::size_t>(j)]).norm();
    for (int j = l; j <= h; ++j) {
      double best = kInf;
      std::uint8_t code = 0;
      if (i == 0) {
        if (j == 0) best = cost(0, 0);
      } else {
        double run = kInf;
        for (int k = 1; k <= 3; ++k) {
          const int jj = j - k + 1;
          if (jj < l) break;
          run = k == 1 ? cost(i, j) : std::max(run, cost(i, jj));
          const double pd = dval(i - 1, j - k);
          const double v = std::max(pd, run);
          if (v < best) {
            best = v;
            code = static_cast<std::uint8_t>(k);
          }
        }
        double col = cost(i, j);
        for (int k = 2; k <= 3; ++k) {
          const int ii = i - k + 1;
          if (ii < 0) break;
          const double cc = cost(ii, j);
          if (!std::isfinite(cc)) break;
          col = std::max(col, cc);
          const double pd = dval(i - k, j - 1);
          const double v = std::max(pd, col);
          if (v < best) {
            best = v;
            code = static_cast<std::uint8_t>(2 + k);
          }
        }
      }
      drow[static_cast<std::size_t>(j - off)] = best;
      if (keep_) back_[static_cast<std::size_t>(i) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(j - off)] = code;
    }
    ++rows_;
    if (i >= 2 && std::isfinite(abort_)) {
      double mn = kInf;
      for (int r = i - 2; r <= i; ++r)
        for (double v : d_[static_cast<std::size_t>(r % 4)]) mn = std::min(mn, v);
      if (mn > abort_) {
        aborted_ = true;
        bound_ = mn;
      }
    }
  }

  double result() const { return dval(n_ - 1, m_ - 1); }

  std::vector<std::pair<int, int>> path() const {
    std::vector<std::pair<int, int>> out;
    if (!keep_) return out;
    int i = n_ - 1, j = m_ - 1;
    out.emplace_back(i, j);
    while (i > 0 || j > 0) {
      const int off = center(i) - band_;
      const int code = back_[static_cast<std::size_t>(i) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(j - off)];
      if (code >= 1 && code <= 3) {
        for (int k = 1; k < code; ++k) out.emplace_back(i, j - k);
        i -= 1;
        j -= code;
      } else if (code >= 4) {
        const int k = code - 2;
        for (int r = 1; r < k; ++r) out.emplace_back(i - r, j);
        i -= k;
        j -= 1;
      } else {
        break;
      }
      out.emplace_back(i, j);
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  double dval(int i, int j) const {
    if (i < 0 || j < 0 || i < rows_ - 4 || i >= rows_ + 1) return kInf;
    if (j < lo(i) || j > hi(i)) return kInf;
    return d_[static_cast<std::size_t>(i % 4)][static_cast<std::size_t>(j - (center(i) - band_))];
  }
  double cost(int i, int j) const {
    if (i < 0 || j < lo(i) || j > hi(i)) return kInf;
    return c_[static_cast<std::size_t>(i % 3)][static_cast<std::size_t>(j - (center(i) - band_))];
  }

  int n_, m_, band_, width_;
  double abort_;
  bool keep_;
  int rows_ = 0;
  bool aborted_ = false;
  double bound_ = 0.0;
  std::array<std::vector<double>, 4> d_;
  std::array<std::vector<double>, 3> c_;
  std::vector<std::uint8_t> back_;
};

void run_dp(WarpDP& dp, const std::vector<Vec>& xs, const std::vector<Vec>& ys, int n_rows) {
  while (dp.rows_done() < n_rows && !dp.aborted()) dp.next_row(xs, ys);
}

/// Uniform samples of one orbit produced incrementally.
class Stream {
 public:
  Stream(const VectorFieldModel& model, const Vec& x0, int n, double dt, double tol)
      : dp_([&model](const Vec& y, Vec& dy) { model.field(y, dy); }, x0, 0.0, (n - 1) * dt, tol),
        n_(n), dt_(dt) {
    out_.reserve(static_cast<std::size_t>(n));
    out_.push_back(x0);
  }
  /// Integrates until sample `count - 1` exists.
  void fill(int count) {
    count = std::min(count, n_);
    Vec p;
    while (static_cast<int>(out_.size()) < count) {
      if (dp_.done()) {
        out_.push_back(dp_.y());
        continue;
      }
      dp_.step();
      for (auto k = static_cast<int>(out_.size()); k < n_ && k * dt_ <= dp_.t() + 1e-12; ++k) {
        dp_.dense(std::min(k * dt_, dp_.t()), p);
        out_.push_back(p);
      }
    }
  }
  const std::vector<Vec>& samples() const { return out_; }

 private:
  DormandPrince dp_;
  int n_;
  double dt_;
  std::vector<Vec> out_;
};

struct DirectionalMatch {
  double sup = 0.0;
  bool aborted = false;
  bool diverged = false;
  std::vector<Vec> ys;
  std::vector<std::pair<int, int>> warp;
};

DirectionalMatch streamed_match(const VectorFieldModel& model, const Vec& x, const Vec& y, double horizon,
                                double delta, const ProbeOptions& opts, bool keep_warp) {
  const int n = static_cast<int>(std::floor(horizon / opts.dt + 1e-9)) + 1;
  Stream sx(model, x, n, opts.dt, opts.tol), sy(model, y, n, opts.dt, opts.tol);
  WarpDP dp(n, n, opts.band, keep_warp ? std::numeric_limits<double>::infinity() : delta, keep_warp);
  DirectionalMatch out;
  const int chunk = std::max(1, static_cast<int>(std::llround(opts.chunk / opts.dt)));
  try {
    int filled = 1;
    while (dp.rows_done() < n && !dp.aborted()) {
      filled = std::min(n, filled + chunk);
      sx.fill(filled);
      sy.fill(filled);
      int ready = filled == n ? n : std::max(0, filled - opts.band - 1);
      run_dp(dp, sx.samples(), sy.samples(), ready);
    }
  } catch (const NumericError&) {
    out.diverged = true;
  }
  out.aborted = dp.aborted();
  // After a failed integration the sup is unknown; callers check `diverged`.
  out.sup = out.aborted ? dp.lower_bound() : (out.diverged ? 0.0 : dp.result());
  out.ys = sy.samples();
  if (keep_warp && !out.diverged) out.warp = dp.path();
  return out;
}

struct PairSetup {
  Vec x, y;
  Stratum stratum = Stratum::generic;
  bool on_leaf = false;
};

std::vector<std::size_t> slow_points(const VectorFieldModel& model, const std::vector<Vec>& sample) {
  std::vector<std::size_t> idx(sample.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> speed(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) speed[i] = model.field(sample[i]).norm();
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return speed[a] < speed[b]; });
  idx.resize(std::max<std::size_t>(1, sample.size() / 20));
  return idx;
}

Vec top_stretch_direction(const VectorFieldModel& model, const Vec& x, bool largest) {
  const Mat j = model.jacobian(x);
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (j + j.transpose()));
  return largest ? Vec(es.eigenvectors().col(j.rows() - 1)) : Vec(es.eigenvectors().col(0));
}

PairSetup make_pair(const VectorFieldModel& model, const std::vector<Vec>& sample,
                    const std::vector<std::size_t>& slow, double delta, std::uint64_t pair_seed,
                    int pair_index, const ProbeOptions& opts) {
  Rng rng(pair_seed);
  PairSetup p;
  p.stratum = static_cast<Stratum>(pair_index % 4);
  const int d = model.dim();
  if (p.stratum == Stratum::antipodal_lobe) {
    p.x = sample[slow[static_cast<std::size_t>(rng() % slow.size())]];
  } else {
    p.x = sample[static_cast<std::size_t>(rng() % sample.size())];
  }
  Mat es;
  bool have_leaf = false;
  if (opts.d_s >= 1 && opts.d_s < d) {
    try {
      SplittingOptions so;
      so.tol = opts.tol;
      so.need_cu = false;
      es = finite_time_splitting(model, p.x, opts.d_s, opts.T_est, so).E_s;
      have_leaf = true;
    } catch (const Error&) {
    }
  }
  const double scale = delta * uniform(rng, 0.5, 1.0);
  switch (p.stratum) {
    case Stratum::on_leaf:
      if (have_leaf) {
        p.y = p.x + scale * (es * random_unit(rng, opts.d_s));
        break;
      }
      [[fallthrough]];
    case Stratum::generic:
      p.y = p.x + scale * random_unit(rng, d);
      break;
    case Stratum::near_leaf: {
      if (!have_leaf) {
        p.y = p.x + scale * random_unit(rng, d);
        break;
      }
      const Vec s = es * random_unit(rng, opts.d_s);
      Vec w = random_unit(rng, d);
      w -= es * (es.transpose() * w);
      w /= w.norm();
      const double alpha = 0.1 * uniform(rng, 0.5, 1.0);
      p.y = p.x + scale * (std::cos(alpha) * s + std::sin(alpha) * w);
      break;
    }
    case Stratum::antipodal_lobe: {
      const Vec v = top_stretch_direction(model, p.x, true);
      const Vec c = p.x;
      p.x = c - 0.5 * scale * v;
      p.y = c + 0.5 * scale * v;
      break;
    }
  }
  if (have_leaf) {
    const Vec diff = p.y - p.x;
    p.on_leaf = (diff - es * (es.transpose() * diff)).norm() < opts.leaf_threshold;
  }
  return p;
}

MatchResult evaluate_pair(const VectorFieldModel& model, const PairSetup& p, double eps, double delta,
                          double horizon, bool positive_only, const ProbeOptions& opts, bool keep_warp) {
  MatchResult res;
  res.x = p.x;
  res.y = p.y;
  res.dt = opts.dt;
  res.eps = eps;
  res.delta = delta;
  res.stratum = p.stratum;
  res.on_leaf = p.on_leaf;
  auto fwd = streamed_match(model, p.x, p.y, horizon, delta, opts, keep_warp);
  res.sup_distance = fwd.sup;
  res.aborted = fwd.aborted;
  res.warp = std::move(fwd.warp);
  if (fwd.aborted || fwd.sup > delta) {
    res.verdict = Verdict::separated;
    return res;
  }
  if (fwd.diverged) {
    res.verdict = Verdict::undecided;
    res.note = "forward integration failed";
    return res;
  }
  if (!positive_only) {
    const auto bwd = streamed_match(model.negated(), p.x, p.y, horizon, delta, opts, false);
    if (bwd.aborted || (!bwd.diverged && bwd.sup > delta)) {
      res.verdict = Verdict::separated;
      res.sup_distance = std::max(res.sup_distance, bwd.sup);
      res.note = "separated in backward time";
      return res;
    }
    if (bwd.diverged) {
      res.verdict = Verdict::undecided;
      res.note = "backward integration failed";
      return res;
    }
    res.sup_distance = std::max(res.sup_distance, bwd.sup);
  }
  const double W = std::min(1.0, horizon - 2.0 * eps);
  if (W > 0.0) {
    const Trajectory tx = integrate(model, p.x, 0.0, 2.0 * eps + W, opts.tol);
    res.shift = same_orbit_shift(tx, fwd.ys, opts.dt, eps, opts.tol, W);
  }
  res.verdict = res.shift ? Verdict::same_orbit_shift : Verdict::stayed_close;
  return res;
}

}  // namespace

std::optional<double> same_orbit_shift(const Trajectory& x, const std::vector<Vec>& y, double dt,
                                       double eps, double tol, double window) {
  const double t0 = x.t0();
  const double t_hi = x.t1();
  std::vector<int> idx;
  for (int j = 0; j < static_cast<int>(y.size()); ++j) {
    const double t = t0 + j * dt;
    if (t < t0 + eps - 1e-12) continue;
    if (t > t0 + eps + window + 1e-12 || t + eps > t_hi + 1e-12) break;
    idx.push_back(j);
  }
  if (idx.empty()) return std::nullopt;
  double xmax = 0.0;
  for (const auto& n : x.nodes()) xmax = std::max(xmax, n.x.norm());
  const double threshold = 10.0 * tol * (1.0 + xmax);
  auto cost = [&](double s) {
    double worst = 0.0;
    for (int j : idx) {
      const double t = std::clamp(t0 + j * dt + s, t0, t_hi);
      worst = std::max(worst, (y[static_cast<std::size_t>(j)] - x.at(t)).norm());
    }
    return worst;
  };
  const double h = dt / 4.0;
  double best_s = 0.0, best = std::numeric_limits<double>::infinity();
  const int steps = static_cast<int>(std::ceil(2.0 * eps / h));
  for (int k = 0; k <= steps; ++k) {
    const double s = std::min(eps, -eps + k * h);
    const double c = cost(s);
    if (c < best) {
      best = c;
      best_s = s;
    }
  }
  double lo = std::max(-eps, best_s - h), hi = std::min(eps, best_s + h);
  constexpr double g = 0.6180339887498949;
  double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
  double fa = cost(a), fb = cost(b);
  for (int it = 0; it < 60; ++it) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - g * (hi - lo);
      fa = cost(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + g * (hi - lo);
      fb = cost(b);
    }
  }
  if (fa < best) {
    best = fa;
    best_s = a;
  }
  if (fb < best) {
    best = fb;
    best_s = b;
  }
  if (best <= threshold) return best_s;
  return std::nullopt;
}

MatchResult match_orbits(const UniformSeries& x, const UniformSeries& y, int band, const MatchOptions& opts) {
  if (band < 1) throw InputError("band must be >= 1");
  if (std::abs(x.dt - y.dt) > 1e-12 * std::max(1.0, x.dt)) throw InputError("grid mismatch: different dt");
  if (x.samples.empty() || y.samples.empty()) throw InputError("empty series");
  if (x.samples.size() != y.samples.size()) throw InputError("grid mismatch: different lengths");
  const int n = static_cast<int>(x.samples.size());
  MatchResult res;
  res.x = x.samples.front();
  res.y = y.samples.front();
  res.dt = x.dt;
  res.eps = opts.eps;
  res.delta = opts.delta;
  WarpDP dp(n, n, band, std::numeric_limits<double>::infinity(), true);
  run_dp(dp, x.samples, y.samples, n);
  res.sup_distance = dp.result();
  res.warp = dp.path();
  for (int i = 0; i < n; ++i)
    res.identity_sup = std::max(res.identity_sup, (x.samples[static_cast<std::size_t>(i)] - y.samples[static_cast<std::size_t>(i)]).norm());
  if (x.dense) {
    const double span = (n - 1) * x.dt;
    const double W = std::min(opts.shift_window, span - 2.0 * opts.eps);
    if (W > 0.0) res.shift = same_orbit_shift(*x.dense, y.samples, x.dt, opts.eps, opts.tol, W);
  }
  if (res.shift) {
    res.verdict = Verdict::same_orbit_shift;
  } else {
    res.verdict = res.sup_distance <= opts.delta ? Verdict::stayed_close : Verdict::separated;
  }
  return res;
}

ExpansivenessReport expansiveness_probe(const VectorFieldModel& model, const std::vector<Vec>& sample,
                                        double eps, const std::vector<double>& delta_grid, int n_pairs,
                                        double horizon, bool positive_only, std::uint64_t seed,
                                        const ProbeOptions& opts) {
  if (!(eps > 0.0)) throw PreconditionError("eps must be positive");
  if (!(horizon >= 50.0)) throw PreconditionError("horizon must be at least 50");
  if (delta_grid.empty()) throw InputError("empty delta grid");
  if (!std::is_sorted(delta_grid.begin(), delta_grid.end()) || delta_grid.front() <= 0.0)
    throw PreconditionError("delta grid must be positive and sorted ascending");
  if (sample.empty()) throw InputError("empty sample");
  if (n_pairs < 1) throw InputError("n_pairs must be positive");
  for (const auto& s : sample)
    if (s.size() != model.dim()) throw InputError("sample dimension mismatch");

  ExpansivenessReport rep;
  rep.eps = eps;
  rep.delta_grid = delta_grid;
  rep.n_pairs = n_pairs;
  rep.horizon = horizon;
  rep.positive_only = positive_only;
  rep.seed = seed;
  const auto slow = slow_points(model, sample);
  bool prefix_clean = true;
  for (std::size_t di = 0; di < delta_grid.size(); ++di) {
    const double delta = delta_grid[di];
    std::vector<MatchResult> results(static_cast<std::size_t>(n_pairs));
    parallel_for(static_cast<std::size_t>(n_pairs), [&](std::size_t p) {
      const std::uint64_t ps = split_seed(seed, di, p);
      const auto setup = make_pair(model, sample, slow, delta, ps, static_cast<int>(p), opts);
      auto r = evaluate_pair(model, setup, eps, delta, horizon, positive_only, opts, false);
      r.pair_seed = ps;
      r.pair_index = static_cast<int>(p);
      r.delta_index = static_cast<int>(di);
      results[p] = std::move(r);
    });
    DeltaSummary sum;
    sum.delta = delta;
    sum.pairs = n_pairs;
    for (auto& r : results) {
      switch (r.verdict) {
        case Verdict::separated: ++sum.separated; break;
        case Verdict::same_orbit_shift: ++sum.same_orbit; break;
        case Verdict::undecided: ++sum.undecided; break;
        case Verdict::stayed_close:
          ++sum.stayed_close;
          if (positive_only && r.on_leaf) {
            ++sum.on_leaf_excluded;
          } else {
            ++sum.counterexamples;
            rep.counterexamples.push_back(std::move(r));
          }
          break;
      }
    }
    rep.per_delta.push_back(sum);
    if (sum.counterexamples > 0) prefix_clean = false;
    if (prefix_clean) rep.delta_star = delta;
  }
  std::ostringstream msg;
  if (rep.delta_star) {
    msg << "no counterexample found at (eps=" << eps << ", delta=" << *rep.delta_star << ", N=" << n_pairs << ")";
  } else {
    msg << "no tested delta certifies expansiveness";
  }
  rep.message = msg.str();
  return rep;
}

MatchResult replay_pair(const VectorFieldModel& model, const std::vector<Vec>& sample, double eps,
                        double delta, double horizon, bool positive_only, std::uint64_t pair_seed,
                        int pair_index, const ProbeOptions& opts, bool keep_warp) {
  if (sample.empty()) throw InputError("empty sample");
  const auto slow = slow_points(model, sample);
  const auto setup = make_pair(model, sample, slow, delta, pair_seed, pair_index, opts);
  auto r = evaluate_pair(model, setup, eps, delta, horizon, positive_only, opts, keep_warp);
  r.pair_seed = pair_seed;
  r.pair_index = pair_index;
  return r;
}

// ---------------------------------------------------------------------------

std::optional<double> separation_time(const VectorFieldModel& model, const Vec& x, const Vec& y,
                                      double r, double horizon, double tol) {
  const auto d = model.dim();
  if ((y - x).norm() >= r) return 0.0;
  Vec z(2 * d);
  z << x, y;
  Vec gx(d), gy(d);
  DormandPrince dp(
      [&](const Vec& s, Vec& ds) {
        model.field(s.head(d), gx);
        model.field(s.tail(d), gy);
        ds.resize(2 * d);
        ds << gx, gy;
      },
      z, 0.0, horizon, tol);
  try {
    while (!dp.done()) {
      dp.step();
      const Vec& s = dp.y();
      if ((s.tail(d) - s.head(d)).norm() >= r) return dp.t();
    }
  } catch (const NumericError&) {
    return std::nullopt;
  }
  return std::nullopt;
}

namespace {

std::optional<double> find_witness(const VectorFieldModel& model, const Vec& x, double r,
                                   double neighborhood, double horizon, Rng& rng, double tol) {
  std::vector<Vec> dirs;
  const Vec vmax = top_stretch_direction(model, x, true);
  const Vec vmin = top_stretch_direction(model, x, false);
  dirs.push_back(vmax);
  dirs.push_back(-vmax);
  dirs.push_back(vmin);
  dirs.push_back(-vmin);
  for (int k = 0; k < 4; ++k) dirs.push_back(random_unit(rng, model.dim()));
  for (const auto& v : dirs) {
    const auto t = separation_time(model, x, x + neighborhood * v, r, horizon, tol);
    if (t) return t;
  }
  return std::nullopt;
}

}  // namespace

ChaosReport chaos_probe(const VectorFieldModel& model, const std::vector<Vec>& sample, double r,
                        int n_points, double neighborhood, double horizon, Direction direction,
                        std::uint64_t seed, double tol) {
  if (!(r > 0.0)) throw PreconditionError("r must be positive");
  if (!(neighborhood > 0.0)) throw PreconditionError("neighborhood must be positive");
  if (sample.empty()) throw InputError("empty sample");
  if (n_points < 1) throw InputError("n_points must be positive");
  ChaosReport rep;
  rep.r = r;
  rep.direction = direction;
  rep.n_points = n_points;
  rep.neighborhood = neighborhood;
  rep.horizon = horizon;
  rep.witnessed.assign(static_cast<std::size_t>(n_points), false);
  rep.witness_time.assign(static_cast<std::size_t>(n_points), 0.0);
  const VectorFieldModel reversed = model.negated();
  std::vector<char> ok(static_cast<std::size_t>(n_points), 0);
  parallel_for(static_cast<std::size_t>(n_points), [&](std::size_t i) {
    Rng pick(split_seed(seed, 0x43484153ULL, i));
    const Vec& x = sample[static_cast<std::size_t>(pick() % sample.size())];
    std::optional<double> tf, tp;
    bool good = true;
    if (direction != Direction::past) {
      Rng rng(split_seed(seed, 0x46555455ULL, i));
      tf = find_witness(model, x, r, neighborhood, horizon, rng, tol);
      good = good && tf.has_value();
    }
    if (direction != Direction::future) {
      Rng rng(split_seed(seed, 0x46555455ULL, i));
      tp = find_witness(reversed, x, r, neighborhood, horizon, rng, tol);
      good = good && tp.has_value();
    }
    ok[i] = good ? 1 : 0;
    rep.witness_time[i] = tf ? *tf : (tp ? *tp : 0.0);
  });
  int count = 0;
  for (std::size_t i = 0; i < ok.size(); ++i) {
    rep.witnessed[i] = ok[i] != 0;
    count += ok[i];
  }
  rep.witness_fraction = static_cast<double>(count) / static_cast<double>(n_points);
  return rep;
}

// ---------------------------------------------------------------------------

RobustReport robustness_sweep(const VectorFieldModel& model, const std::vector<Perturbation>& perturbations,
                              const std::vector<std::pair<std::string, ModelCheck>>& checks) {
  for (const auto& p : perturbations)
    if (!(p.relative_magnitude >= 0.0 && p.relative_magnitude <= 0.05))
      throw PreconditionError("perturbation magnitude must lie in [0, 0.05]");
  RobustReport rep;
  rep.all_pass = true;
  for (const auto& p : perturbations) {
    const VectorFieldModel pm = perturb(model, p);
    rep.model_ids.push_back(pm.id());
    for (const auto& [name, check] : checks) {
      RobustRow row;
      row.model_id = pm.id();
      row.check = name;
      try {
        const auto out = check(pm);
        row.pass = out.pass;
        row.detail = out.detail;
      } catch (const Error& e) {
        row.pass = false;
        row.detail = {{"error", e.what()}};
      }
      rep.all_pass = rep.all_pass && row.pass;
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

std::string summary_csv(const RobustReport& r) {
  std::ostringstream os;
  os << "check,model_id,pass\n";
  for (const auto& row : r.rows) os << row.check << ",\"" << row.model_id << "\"," << (row.pass ? 1 : 0) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const MatchResult& m, bool with_warp) {
  nlohmann::json j = {{"x", to_std(m.x)},
                      {"y", to_std(m.y)},
                      {"dt", m.dt},
                      {"sup_distance", m.sup_distance},
                      {"verdict", to_string(m.verdict)},
                      {"eps", m.eps},
                      {"delta", m.delta},
                      {"aborted", m.aborted},
                      {"stratum", to_string(m.stratum)},
                      {"on_leaf", m.on_leaf},
                      {"pair_seed", m.pair_seed},
                      {"pair_index", m.pair_index},
                      {"delta_index", m.delta_index}};
  j["shift"] = m.shift ? nlohmann::json(*m.shift) : nlohmann::json(nullptr);
  if (!m.note.empty()) j["note"] = m.note;
  if (with_warp) {
    nlohmann::json w = nlohmann::json::array();
    for (const auto& [a, b] : m.warp) w.push_back({a, b});
    j["warp"] = w;
    j["identity_sup"] = m.identity_sup;
  }
  return j;
}

nlohmann::json to_json(const ExpansivenessReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.per_delta)
    rows.push_back({{"delta", s.delta},
                    {"pairs", s.pairs},
                    {"separated", s.separated},
                    {"stayed_close", s.stayed_close},
                    {"same_orbit_shift", s.same_orbit},
                    {"on_leaf_excluded", s.on_leaf_excluded},
                    {"undecided", s.undecided},
                    {"counterexamples", s.counterexamples}});
  nlohmann::json ce = nlohmann::json::array();
  for (const auto& m : r.counterexamples) ce.push_back(to_json(m));
  return {{"eps", r.eps},
          {"delta_grid", r.delta_grid},
          {"delta_star", r.delta_star ? nlohmann::json(*r.delta_star) : nlohmann::json("none")},
          {"n_pairs", r.n_pairs},
          {"horizon", r.horizon},
          {"positive_only", r.positive_only},
          {"seed", r.seed},
          {"per_delta", rows},
          {"counterexamples", ce},
          {"message", r.message}};
}

nlohmann::json to_json(const ChaosReport& r) {
  std::vector<int> w(r.witnessed.begin(), r.witnessed.end());
  return {{"r", r.r},
          {"direction", to_string(r.direction)},
          {"n_points", r.n_points},
          {"witness_fraction", r.witness_fraction},
          {"neighborhood", r.neighborhood},
          {"horizon", r.horizon},
          {"witnessed", w},
          {"witness_time", r.witness_time}};
}

nlohmann::json to_json(const RobustReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"model_id", row.model_id}, {"check", row.check}, {"pass", row.pass}, {"detail", row.detail}});
  return {{"models", r.model_ids}, {"table", rows}, {"all_pass", r.all_pass}};
}

}  // namespace sechyp
