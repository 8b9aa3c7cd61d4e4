#include "sechyp/section.hpp"

#include "sechyp/flow.hpp"
#include "sechyp/parallel.hpp"
#include "sechyp/rng.hpp"
#include "sechyp/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sechyp {

namespace {

constexpr double kOnSection = 1e-7;
constexpr double kTimeTol = 1e-10;

Mat complement_columns(const Mat& e, Eigen::Index total) {
  Eigen::HouseholderQR<Mat> qr(e);
  Mat full = qr.householderQ() * Mat::Identity(total, total);
  return full.rightCols(total - e.cols());
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

int locate_section(const std::vector<CrossSection>& sections, const Vec& x) {
  for (std::size_t i = 0; i < sections.size(); ++i)
    if (std::abs(sections[i].height(x)) < kOnSection && sections[i].in_box(x)) return static_cast<int>(i);
  return -1;
}

const CrossSection& section_by_id(const std::vector<CrossSection>& sections, const std::string& id) {
  for (const auto& s : sections)
    if (s.id == id) return s;
  throw InputError("unknown section id " + id);
}

}  // namespace

bool CrossSection::in_box(const Vec& x, double scale) const {
  const Vec c = coords(x);
  for (Eigen::Index i = 0; i < c.size(); ++i)
    if (std::abs(c[i]) > scale * half_widths[i]) return false;
  return true;
}

CrossSection make_section(const VectorFieldModel& model, const Vec& y, const Vec& half_widths,
                          int orientation, const std::optional<Vec>& normal, const std::string& id) {
  const int d = model.dim();
  if (y.size() != d) throw InputError("section point has wrong dimension");
  if (d < 2) throw InputError("sections need dimension >= 2");
  if (half_widths.size() != d - 1) throw InputError("half_widths must have d-1 entries");
  if ((half_widths.array() <= 0.0).any()) throw InputError("half_widths must be positive");
  if (orientation < -1 || orientation > 1) throw InputError("orientation must be -1, 0 or 1");
  const Vec g = model.field(y);
  if (g.norm() <= 1e-8) throw PreconditionError("section base point is an equilibrium");
  CrossSection s;
  s.id = id;
  s.point = y;
  s.orientation = orientation;
  s.half_widths = half_widths;
  if (normal) {
    if (normal->size() != d || normal->norm() == 0.0) throw InputError("bad section normal");
    s.normal = *normal / normal->norm();
  } else {
    s.normal = g / g.norm();
  }
  if (std::abs(g.dot(s.normal)) / g.norm() <= 1e-6)
    throw PreconditionError("section is not transverse to the flow at its base point");
  // Gram-Schmidt of the coordinate axes against the normal, dropping the most parallel axis.
  Eigen::Index drop = 0;
  s.normal.cwiseAbs().maxCoeff(&drop);
  s.frame.resize(d, d - 1);
  int col = 0;
  for (int i = 0; i < d; ++i) {
    if (i == drop) continue;
    Vec v = Vec::Unit(d, i);
    for (int pass = 0; pass < 2; ++pass) {
      v -= s.normal.dot(v) * s.normal;
      for (int j = 0; j < col; ++j) v -= s.frame.col(j).dot(v) * s.frame.col(j);
    }
    s.frame.col(col++) = v / v.norm();
  }
  return s;
}

std::vector<CrossSection> sections_from_json(const VectorFieldModel& model, const nlohmann::json& j) {
  if (!j.is_array()) throw InputError("\"sections\" must be an array");
  std::vector<CrossSection> out;
  try {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& e = j[i];
      const Vec p = from_std(e.at("point").get<std::vector<double>>());
      const Vec hw = from_std(e.at("half_widths").get<std::vector<double>>());
      std::optional<Vec> n;
      if (e.contains("normal")) n = from_std(e.at("normal").get<std::vector<double>>());
      const int orient = e.value("orientation", 1);
      const std::string id = e.value("id", "S" + std::to_string(i));
      out.push_back(make_section(model, p, hw, orient, n, id));
      if (e.contains("inner_fraction")) out.back().a0 = e.at("inner_fraction").get<double>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("bad section definition: ") + ex.what());
  }
  return out;
}

nlohmann::json to_json(const CrossSection& s) {
  return {{"id", s.id},
          {"point", to_std(s.point)},
          {"normal", to_std(s.normal)},
          {"half_widths", to_std(s.half_widths)},
          {"orientation", s.orientation},
          {"inner_fraction", s.a0}};
}

std::string to_string(MissReason r) {
  switch (r) {
    case MissReason::none: return "";
    case MissReason::left_region: return "left region";
    case MissReason::exceeded_T_max: return "exceeded T_max";
    case MissReason::hit_singularity: return "hit singularity neighborhood";
  }
  return "";
}

// ---------------------------------------------------------------------------

ReturnRecord first_return(const VectorFieldModel& model, const std::vector<CrossSection>& sections,
                          const Vec& x, const ReturnOptions& opts) {
  if (sections.empty()) throw InputError("no sections given");
  if (x.size() != model.dim()) throw InputError("point has wrong dimension");
  if (!(opts.T1 > 0.0 && opts.T1 < opts.T_max)) throw PreconditionError("need 0 < T1 < T_max");
  ReturnRecord rec;
  rec.x = x;
  if (const int e = locate_section(sections, x); e >= 0) rec.entry_section = sections[e].id;

  DormandPrince dp([&model](const Vec& y, Vec& dy) { model.field(y, dy); }, x, 0.0, opts.T_max,
                   opts.tol);
  Vec p;
  while (!dp.done()) {
    dp.step();
    const Vec& y = dp.y();
    if (y.norm() > opts.escape_radius) {
      rec.miss = true;
      rec.reason = MissReason::left_region;
      rec.Rx = y;
      rec.tau = dp.t();
      return rec;
    }
    for (const auto& eq : opts.equilibria) {
      if ((y - eq).norm() < opts.singular_radius) {
        rec.miss = true;
        rec.reason = MissReason::hit_singularity;
        rec.Rx = y;
        rec.tau = dp.t();
        return rec;
      }
    }
    if (dp.t() <= opts.T1) continue;

    double best_t = std::numeric_limits<double>::infinity();
    int best = -1;
    Vec best_p;
    for (std::size_t j = 0; j < sections.size(); ++j) {
      const auto& s = sections[j];
      const double h0 = s.height(dp.y_prev()), h1 = s.height(y);
      const bool up = h0 < 0.0 && h1 >= 0.0, down = h0 > 0.0 && h1 <= 0.0;
      if (!(up || down)) continue;
      if ((s.orientation == 1 && !up) || (s.orientation == -1 && !down)) continue;
      double a = dp.t_prev(), b = dp.t(), ha = h0, hb = h1;
      for (int it = 0; it < 200 && std::abs(b - a) > kTimeTol; ++it) {
        const double m = 0.5 * (a + b);
        dp.dense(m, p);
        const double hm = s.height(p);
        if ((hm < 0.0) == (ha < 0.0) && hm != 0.0) {
          a = m;
          ha = hm;
        } else {
          b = m;
          hb = hm;
        }
      }
      const double tc = std::abs(ha) < std::abs(hb) ? a : b;
      if (tc <= opts.T1 || tc >= best_t) continue;
      dp.dense(tc, p);
      if (!s.in_box(p, s.a0)) continue;
      best_t = tc;
      best = static_cast<int>(j);
      best_p = p;
    }
    if (best >= 0) {
      rec.Rx = best_p;
      rec.tau = best_t;
      rec.exit_section = sections[best].id;
      const double gn = model.field(best_p).dot(sections[best].normal);
      rec.sign = gn > 0.0 ? 1 : (gn < 0.0 ? -1 : 0);
      return rec;
    }
  }
  rec.miss = true;
  rec.reason = MissReason::exceeded_T_max;
  rec.Rx = dp.y();
  rec.tau = dp.t();
  return rec;
}

ReturnRecord first_return(const VectorFieldModel& model, const std::vector<CrossSection>& sections,
                          const Vec& x, double T1, double T_max, double tol) {
  ReturnOptions o;
  o.T1 = T1;
  o.T_max = T_max;
  o.tol = tol;
  return first_return(model, sections, x, o);
}

std::vector<ReturnRecord> return_orbit(const VectorFieldModel& model,
                                       const std::vector<CrossSection>& sections, const Vec& x, int n,
                                       const ReturnOptions& opts) {
  std::vector<ReturnRecord> out;
  Vec cur = x;
  for (int i = 0; i < n; ++i) {
    out.push_back(first_return(model, sections, cur, opts));
    if (out.back().miss) break;
    cur = out.back().Rx;
  }
  return out;
}

std::string returns_csv(const std::vector<ReturnRecord>& records) {
  std::ostringstream os;
  os.precision(17);
  const int d = records.empty() ? 0 : static_cast<int>(records.front().x.size());
  os << "entry_section,exit_section";
  for (int i = 1; i <= d; ++i) os << ",x" << i;
  for (int i = 1; i <= d; ++i) os << ",Rx" << i;
  os << ",tau,miss,reason\n";
  for (const auto& r : records) {
    os << r.entry_section << "," << r.exit_section;
    for (int i = 0; i < d; ++i) os << "," << r.x[i];
    for (int i = 0; i < d; ++i) os << "," << r.Rx[i];
    os << "," << r.tau << "," << (r.miss ? 1 : 0) << "," << to_string(r.reason) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------

RoofFit roof_fit(const VectorFieldModel& model, const std::vector<CrossSection>& sections,
                 int section_index, const EquilibriumReport& sigma, const RoofOptions& opts) {
  if (!sigma.lorenz_like) throw PreconditionError("roof fit needs a Lorenz-like equilibrium");
  if (section_index < 0 || section_index >= static_cast<int>(sections.size()))
    throw InputError("section index out of range");
  const auto& s = sections[static_cast<std::size_t>(section_index)];
  if (opts.axis < 0 || opts.axis >= s.dim() - 1) throw InputError("axis out of range");
  const Vec u = s.frame.col(opts.axis);
  const double L = opts.search_fraction * s.half_widths[opts.axis];
  auto point = [&](double c) { return s.point + c * u; };
  auto ret = [&](double c) { return first_return(model, sections, point(c), opts.ret); };

  // The return map jumps across the stable manifold of sigma; bisect on the jump.
  double a = -L, b = L;
  ReturnRecord ra = ret(a), rb = ret(b);
  if (ra.miss || rb.miss) throw InsufficientDataError("search segment endpoints do not return");
  for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, L); ++it) {
    const double m = 0.5 * (a + b);
    if (m <= a || m >= b) break;
    const ReturnRecord rm = ret(m);
    if (rm.miss) {
      a = b = m;
      break;
    }
    if ((rm.Rx - ra.Rx).norm() > (rm.Rx - rb.Rx).norm()) {
      b = m;
      rb = rm;
    } else {
      a = m;
      ra = rm;
    }
  }
  const double c_star = 0.5 * (a + b);
  RoofFit fit;
  fit.gamma_point = point(c_star);
  {
    const Trajectory tr = integrate(model, fit.gamma_point, 0.0, std::min(opts.ret.T_max, 5.0), opts.ret.tol);
    double closest = std::numeric_limits<double>::infinity();
    const auto& nodes = tr.nodes();
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k)
      for (int q = 0; q < 8; ++q) {
        const double t = nodes[k].t + (nodes[k + 1].t - nodes[k].t) * q / 8.0;
        closest = std::min(closest, (tr.at(t) - sigma.position).norm());
      }
    fit.gamma_check = closest;
  }

  std::vector<double> dists = opts.distances;
  if (dists.empty())
    for (int h = 4; h <= 16; ++h) dists.push_back(std::pow(10.0, -0.5 * h));
  std::vector<RoofSample> samples(dists.size() * 2);
  parallel_for(samples.size(), [&](std::size_t i) {
    const double dist = dists[i / 2];
    const double side = (i % 2 == 0) ? 1.0 : -1.0;
    const ReturnRecord r = ret(c_star + side * dist);
    samples[i] = {dist, r.tau, r.miss, false};
  });
  int returned = 0;
  std::vector<double> xs, ys;
  for (auto& sm : samples) {
    if (sm.miss) continue;
    ++returned;
    if (sm.tau > opts.ret.T1 + 2.0) {
      sm.used = true;
      xs.push_back(-std::log(sm.dist));
      ys.push_back(sm.tau);
    }
  }
  fit.samples = samples;
  if (returned < 3) throw InsufficientDataError("too few returns for a roof fit");
  fit.n_used = static_cast<int>(xs.size());
  if (xs.size() < 3) {
    fit.flag = "bounded regime, tau <= T1+2 band";
    return fit;
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx <= 0.0) {
    fit.flag = "degenerate distance grid";
    return fit;
  }
  fit.C = sxy / sxx;
  fit.b = my - fit.C * mx;
  fit.R2 = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  fit.fitted = true;
  return fit;
}

// ---------------------------------------------------------------------------

LeafFrame leaf_frame(const CrossSection& section, const VectorFieldModel& model, const Vec& x,
                     int d_s, const LeafOptions& opts) {
  const int d = model.dim();
  if (d_s < 1 || d_s > d - 2) throw PreconditionError("leaf geometry needs 1 <= d_s <= d-2");
  SplittingOptions so;
  so.tol = opts.tol;
  so.need_cu = false;
  const auto est = finite_time_splitting(model, x, d_s, opts.T_est, so);
  const Vec g = model.field(x);
  const double gn = section.normal.dot(g);
  LeafFrame f;
  f.center = section.coords(x);
  f.low_confidence = est.low_confidence || std::abs(gn) < 1e-8 * std::max(1.0, g.norm());
  // Slide E_s along the flow into the section plane.
  Mat proj = est.E_s;
  if (gn != 0.0)
    for (int j = 0; j < d_s; ++j) proj.col(j) -= g * (section.normal.dot(est.E_s.col(j)) / gn);
  const Mat in_section = section.frame.transpose() * proj;
  Mat q;
  Vec rd;
  positive_qr(in_section, q, rd);
  if ((rd.array() <= 1e-12).any()) f.low_confidence = true;
  f.leaf = q;
  f.transverse = complement_columns(q, d - 1);
  return f;
}

namespace {

/// min |w + u a - v b| over a in [a0, a1], b in [b0, b1]. The inner minimum
/// over b is explicit and the outer function of a is convex, so a golden
/// section search is exact to round-off even for nearly parallel segments,
/// where solving the 2x2 normal equations cancels badly.
double segment_distance(const Vec& w, const Vec& u, const Vec& v, double a0, double a1, double b0,
                        double b1) {
  const double vv = v.dot(v);
  auto f = [&](double a) {
    const Vec p = w + a * u;
    const double b = vv > 0.0 ? std::clamp(p.dot(v) / vv, b0, b1) : b0;
    return (p - b * v).norm();
  };
  constexpr double g = 0.6180339887498949;
  double lo = a0, hi = a1;
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 120 && hi - lo > 0.0; ++it) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = f(d);
    }
  }
  return std::min({fc, fd, f(a0), f(a1)});
}

/// Parameter interval of {c + t l : |t| <= rho} inside the box |.| <= hw.
std::pair<double, double> clip_segment(const Vec& c, const Vec& l, double rho, const Vec& hw) {
  double lo = -rho, hi = rho;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (std::abs(l[i]) < 1e-300) continue;
    double t1 = (-hw[i] - c[i]) / l[i], t2 = (hw[i] - c[i]) / l[i];
    if (t1 > t2) std::swap(t1, t2);
    lo = std::max(lo, t1);
    hi = std::min(hi, t2);
  }
  if (lo > hi) lo = hi = 0.0;
  return {lo, hi};
}

/// Projection onto {a : |a| <= rho, -hw <= c + L a <= hw} by Dykstra's method.
Vec project_disk(const Vec& a, const Vec& c, const Mat& L, double rho, const Vec& hw) {
  const auto m = L.rows();
  std::vector<Vec> incr(static_cast<std::size_t>(m + 1), Vec::Zero(a.size()));
  Vec x = a;
  for (int it = 0; it < 100; ++it) {
    {
      Vec y = x + incr[0];
      Vec p = y;
      if (p.norm() > rho) p *= rho / p.norm();
      incr[0] = y - p;
      x = p;
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      Vec y = x + incr[static_cast<std::size_t>(i + 1)];
      const Vec row = L.row(i).transpose();
      const double rn = row.squaredNorm();
      Vec p = y;
      if (rn > 0.0) {
        const double val = c[i] + row.dot(y);
        if (val > hw[i]) p -= row * ((val - hw[i]) / rn);
        if (val < -hw[i]) p -= row * ((val + hw[i]) / rn);
      }
      incr[static_cast<std::size_t>(i + 1)] = y - p;
      x = p;
    }
  }
  return x;
}

}  // namespace

LeafDistance stable_leaf_distance(const CrossSection& section, const Vec& x, const Vec& y,
                                  const VectorFieldModel& model, int d_s, const LeafOptions& opts) {
  if (x.size() != model.dim() || y.size() != model.dim()) throw InputError("point dimension mismatch");
  if (!section.in_box(x) || !section.in_box(y)) throw PreconditionError("points must lie in the section box");
  if (x == y) return {0.0, false};
  // Fixed argument order makes the result exactly symmetric.
  const bool swap = std::lexicographical_compare(y.data(), y.data() + y.size(), x.data(), x.data() + x.size());
  const Vec& p = swap ? y : x;
  const Vec& q = swap ? x : y;
  const LeafFrame fp = leaf_frame(section, model, p, d_s, opts);
  const LeafFrame fq = leaf_frame(section, model, q, d_s, opts);
  LeafDistance out;
  out.low_confidence = fp.low_confidence || fq.low_confidence;
  const Vec w = fp.center - fq.center;
  if (d_s == 1) {
    const auto [a0, a1] = clip_segment(fp.center, fp.leaf.col(0), opts.rho, section.half_widths);
    const auto [b0, b1] = clip_segment(fq.center, fq.leaf.col(0), opts.rho, section.half_widths);
    out.value = segment_distance(w, fp.leaf.col(0), fq.leaf.col(0), a0, a1, b0, b1);
    return out;
  }
  // Accelerated projected gradient on 1/2 |w + Lp a - Lq b|^2.
  Vec a = Vec::Zero(d_s), b = Vec::Zero(d_s), ya = a, yb = b;
  double t = 1.0;
  const double step = 0.5;  // 1 / Lipschitz constant of the gradient
  for (int it = 0; it < 500; ++it) {
    const Vec r = w + fp.leaf * ya - fq.leaf * yb;
    const Vec an = project_disk(ya - step * (fp.leaf.transpose() * r), fp.center, fp.leaf, opts.rho,
                                section.half_widths);
    const Vec bn = project_disk(yb + step * (fq.leaf.transpose() * r), fq.center, fq.leaf, opts.rho,
                                section.half_widths);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    ya = an + ((t - 1.0) / tn) * (an - a);
    yb = bn + ((t - 1.0) / tn) * (bn - b);
    a = an;
    b = bn;
    t = tn;
  }
  out.value = (w + fp.leaf * a - fq.leaf * b).norm();
  return out;
}

// ---------------------------------------------------------------------------

GrowthSeries leaf_separation_growth(const VectorFieldModel& model,
                                    const std::vector<CrossSection>& sections, const Vec& x,
                                    const Vec& y, int n_returns, const GrowthOptions& opts) {
  const int sx = locate_section(sections, x), sy = locate_section(sections, y);
  if (sx < 0 || sy < 0) throw PreconditionError("both points must lie on a section");
  if (sx != sy) throw PreconditionError("points lie on different sections");
  GrowthSeries g;
  const auto& s0 = sections[static_cast<std::size_t>(sx)];
  const double d0 = stable_leaf_distance(s0, x, y, model, opts.d_s, opts.leaf).value;
  if (d0 >= 0.1) throw PreconditionError("pair is not close: leaf distance >= 0.1");
  g.distances.push_back(d0);
  Vec cx = x, cy = y;
  for (int j = 0; j < n_returns; ++j) {
    if (g.distances.back() > opts.delta_sep) break;
    const ReturnRecord rx = first_return(model, sections, cx, opts.ret);
    const ReturnRecord ry = first_return(model, sections, cy, opts.ret);
    if (rx.miss || ry.miss) {
      g.truncated = true;
      g.flag = "orbit missed: " + to_string(rx.miss ? rx.reason : ry.reason);
      break;
    }
    if (rx.exit_section != ry.exit_section) {
      g.truncated = true;
      g.flag = "returns to different sections";
      break;
    }
    const auto& s = section_by_id(sections, rx.exit_section);
    const double dj = stable_leaf_distance(s, rx.Rx, ry.Rx, model, opts.d_s, opts.leaf).value;
    if (std::abs(rx.tau - ry.tau) > opts.window && dj <= opts.delta_sep) {
      // The pairing is unreliable unless the orbits are already apart.
      g.truncated = true;
      g.flag = "return times differ by more than the pairing window";
      break;
    }
    g.taus_x.push_back(rx.tau);
    g.taus_y.push_back(ry.tau);
    if (g.distances.back() > 0.0)
      g.factors.push_back(std::max(dj, opts.resolution) / std::max(g.distances.back(), opts.resolution));
    g.distances.push_back(dj);
    cx = rx.Rx;
    cy = ry.Rx;
  }
  g.separated = g.distances.back() > opts.delta_sep;
  g.median_factor = percentile(g.factors, 0.5);
  return g;
}

QuotientReport quotient_expansion(const VectorFieldModel& model,
                                  const std::vector<CrossSection>& sections, int n_pairs,
                                  std::uint64_t seed, const QuotientOptions& opts) {
  if (sections.empty()) throw InputError("no sections given");
  if (!(opts.offset > 0.0)) throw PreconditionError("pair offset must be positive");
  if (n_pairs < 1) throw InputError("n_pairs must be positive");
  const auto& s0 = sections.front();
  Rng rng(split_seed(seed, 0x51554f54ULL));
  Vec start;
  if (opts.start) {
    start = *opts.start;
  } else {
    Vec c = 0.2 * s0.half_widths;
    for (Eigen::Index i = 1; i < c.size(); i += 2) c[i] = -c[i];
    start = s0.embed(c);
  }
  start += 1e-3 * (s0.frame * random_unit(rng, s0.dim() - 1));
  const auto orbit = return_orbit(model, sections, start, opts.transient_returns + n_pairs, opts.ret);
  std::vector<Vec> bases;
  for (std::size_t i = static_cast<std::size_t>(opts.transient_returns); i < orbit.size(); ++i)
    if (!orbit[i].miss) bases.push_back(orbit[i].Rx);

  std::vector<double> factor(bases.size(), -1.0);
  parallel_for(bases.size(), [&](std::size_t i) {
    const Vec& x = bases[i];
    const int si = locate_section(sections, x);
    if (si < 0) return;
    const auto& s = sections[static_cast<std::size_t>(si)];
    try {
      const LeafFrame f = leaf_frame(s, model, x, opts.d_s, opts.leaf);
      Rng r(split_seed(seed, 0x50414952ULL, i));
      const double sign = uniform01(r) < 0.5 ? -1.0 : 1.0;
      const Vec dir = opts.alignment == Alignment::unstable ? Vec(f.transverse.col(0)) : Vec(f.leaf.col(0));
      const Vec y = s.embed(f.center + sign * opts.offset * dir);
      if (!s.in_box(y)) return;
      const bool unstable = opts.alignment == Alignment::unstable;
      const double d0 = unstable ? stable_leaf_distance(s, x, y, model, opts.d_s, opts.leaf).value
                                 : (x - y).norm();
      if (!(d0 > 0.0)) return;
      const ReturnRecord rx = first_return(model, sections, x, opts.ret);
      const ReturnRecord ry = first_return(model, sections, y, opts.ret);
      if (rx.miss || ry.miss || rx.exit_section != ry.exit_section) return;
      if (std::abs(rx.tau - ry.tau) > opts.window) return;
      const auto& se = section_by_id(sections, rx.exit_section);
      const double d1 = unstable ? stable_leaf_distance(se, rx.Rx, ry.Rx, model, opts.d_s, opts.leaf).value
                                 : (rx.Rx - ry.Rx).norm();
      factor[i] = d1 / d0;
    } catch (const NumericError&) {
    }
  });
  QuotientReport rep;
  rep.n_requested = n_pairs;
  rep.alignment = opts.alignment == Alignment::unstable ? "unstable" : "stable";
  for (double f : factor)
    if (f >= 0.0) rep.factors.push_back(f);
  rep.n_used = static_cast<int>(rep.factors.size());
  if (rep.n_used < std::max(3, n_pairs / 2)) throw InsufficientDataError("too few successful pairs");
  rep.mu_hat = percentile(rep.factors, 0.05);
  rep.median = percentile(rep.factors, 0.5);
  return rep;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const ReturnRecord& r) {
  return {{"x", to_std(r.x)},
          {"Rx", to_std(r.Rx)},
          {"tau", r.tau},
          {"entry_section", r.entry_section},
          {"exit_section", r.exit_section},
          {"sign", r.sign},
          {"miss", r.miss},
          {"reason", to_string(r.reason)}};
}

nlohmann::json to_json(const RoofFit& r) {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& x : r.samples)
    s.push_back({{"dist", x.dist}, {"tau", x.tau}, {"miss", x.miss}, {"used", x.used}});
  nlohmann::json j = {{"samples", s},
                      {"gamma_point", to_std(r.gamma_point)},
                      {"gamma_check", r.gamma_check},
                      {"C", r.C},
                      {"b", r.b},
                      {"R2", r.R2},
                      {"n_used", r.n_used},
                      {"fitted", r.fitted}};
  if (!r.flag.empty()) j["flag"] = r.flag;
  return j;
}

nlohmann::json to_json(const GrowthSeries& g) {
  nlohmann::json j = {{"distances", g.distances},   {"factors", g.factors},
                      {"taus_x", g.taus_x},         {"taus_y", g.taus_y},
                      {"median_factor", g.median_factor},
                      {"separated", g.separated},   {"truncated", g.truncated}};
  if (!g.flag.empty()) j["flag"] = g.flag;
  return j;
}

nlohmann::json to_json(const QuotientReport& q) {
  return {{"factors", q.factors},   {"mu_hat", q.mu_hat},       {"median", q.median},
          {"n_requested", q.n_requested}, {"n_used", q.n_used}, {"alignment", q.alignment}};
}

}  // namespace sechyp
