#include "sechyp/cli.hpp"

#include "sechyp/equilibria.hpp"
#include "sechyp/expansive.hpp"
#include "sechyp/flow.hpp"
#include "sechyp/parallel.hpp"
#include "sechyp/rng.hpp"
#include "sechyp/splitting.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace sechyp {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::set<std::string> kTopKeys = {"name",   "description", "model",     "d_s",        "seed",  "tol",
                                        "sections", "region",    "attractor", "equilibria", "probes", "threads"};

// ---------------------------------------------------------------------------
// Typed lookups with schema errors.

const json& field_or_null(const json& j, const std::string& key) {
  static const json null_value;
  if (!j.is_object()) return null_value;
  auto it = j.find(key);
  return it == j.end() ? null_value : *it;
}

double num(const json& j, const std::string& key, double def) {
  const json& v = field_or_null(j, key);
  if (v.is_null()) return def;
  if (!v.is_number()) throw InputError("'" + key + "' must be a number");
  return v.get<double>();
}

int integer(const json& j, const std::string& key, int def) {
  const json& v = field_or_null(j, key);
  if (v.is_null()) return def;
  if (!v.is_number_integer()) throw InputError("'" + key + "' must be an integer");
  return v.get<int>();
}

bool boolean(const json& j, const std::string& key, bool def) {
  const json& v = field_or_null(j, key);
  if (v.is_null()) return def;
  if (!v.is_boolean()) throw InputError("'" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string str(const json& j, const std::string& key, const std::string& def) {
  const json& v = field_or_null(j, key);
  if (v.is_null()) return def;
  if (!v.is_string()) throw InputError("'" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<double> numbers(const json& v, const std::string& what) {
  if (!v.is_array()) throw InputError("'" + what + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw InputError("'" + what + "' must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

Vec vec(const json& v, const std::string& what, int dim) {
  auto xs = numbers(v, what);
  if (static_cast<int>(xs.size()) != dim)
    throw InputError("'" + what + "' must have " + std::to_string(dim) + " entries");
  return from_std(xs);
}

Box parse_box(const json& j, int dim, const std::string& what) {
  if (!j.is_object()) throw InputError("'" + what + "' must be an object with lo and hi");
  Box b{vec(field_or_null(j, "lo"), what + ".lo", dim), vec(field_or_null(j, "hi"), what + ".hi", dim)};
  for (int i = 0; i < dim; ++i)
    if (!(b.lo[i] < b.hi[i])) throw InputError("'" + what + "' needs lo < hi");
  return b;
}

Region parse_region(const json& j, int dim) {
  const std::string kind = str(j, "kind", "");
  if (kind == "box") return parse_box(j, dim, "region");
  if (kind == "ellipsoid") {
    Ellipsoid e;
    e.center = vec(field_or_null(j, "center"), "region.center", dim);
    e.weights = j.contains("weights") ? vec(j["weights"], "region.weights", dim) : Vec::Ones(dim);
    e.radius = num(j, "radius", 0.0);
    if (!(e.radius > 0.0) || (e.weights.array() <= 0.0).any())
      throw InputError("ellipsoid region needs radius > 0 and positive weights");
    return e;
  }
  throw InputError("region.kind must be \"box\" or \"ellipsoid\"");
}

// ---------------------------------------------------------------------------
// Small numerics for reports.

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

const CrossSection& section_at(const Config& cfg, int index) {
  if (cfg.sections.empty()) throw InputError("config has no sections");
  if (index < 0 || index >= static_cast<int>(cfg.sections.size()))
    throw InputError("section index out of range");
  return cfg.sections[static_cast<std::size_t>(index)];
}

Vec orbit_start(const Config& cfg) {
  const json& a = field_or_null(cfg.raw, "attractor");
  const int d = cfg.model.dim();
  if (a.contains("start")) return vec(a["start"], "attractor.start", d);
  if (a.contains("box")) {
    const Box b = parse_box(a["box"], d, "attractor.box");
    return 0.5 * (b.lo + b.hi);
  }
  return Vec::Ones(d);
}

Box equilibrium_box(const Config& cfg) {
  const json& e = field_or_null(cfg.raw, "equilibria");
  const int d = cfg.model.dim();
  if (e.contains("box")) return parse_box(e["box"], d, "equilibria.box");
  const auto pts = attractor_points(cfg, 2000, 0.05, 0);
  Vec lo = pts.front(), hi = pts.front();
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec pad = (0.25 * (hi - lo)).cwiseMax(Vec::Constant(d, 1.0));
  return {lo - pad, hi + pad};
}

std::vector<EquilibriumReport> classified_equilibria(const Config& cfg) {
  const json& e = field_or_null(cfg.raw, "equilibria");
  const auto roots = find_equilibria(cfg.model, equilibrium_box(cfg), integer(e, "seeds", 200), cfg.seed);
  std::vector<EquilibriumReport> out;
  for (const auto& r : roots) out.push_back(classify_equilibrium(cfg.model, r, cfg.d_s));
  return out;
}

/// First crossing of the section from the attracting set, then the return orbit.
std::vector<ReturnRecord> section_orbit(const Config& cfg, const CrossSection& s, int n, const ReturnOptions& ret) {
  const Vec x0 = attractor_points(cfg, 1, 0.05, 0).front();
  ReturnOptions entry = ret;
  entry.T_max = std::max(ret.T_max, 50.0);
  const auto first = first_return(cfg.model, {s}, x0, entry);
  if (first.miss) throw InsufficientDataError("orbit from the attracting set never crosses the section");
  return return_orbit(cfg.model, {s}, first.Rx, n, ret);
}

CheckOptions check_options(const Config& cfg, const json& p) {
  CheckOptions o;
  o.T_est = num(p, "T_est", 5.0);
  o.seed = cfg.seed;
  o.cone_samples = integer(p, "cone_samples", 50);
  o.random_planes = integer(p, "random_planes", 20);
  o.splitting.tol = cfg.tol;
  return o;
}

std::string gp_header(const std::string& title) {
  return "# gnuplot script\nset datafile separator ','\nset key autotitle columnhead\nset title '" + title + "'\n";
}

// ---------------------------------------------------------------------------
// Commands.

CommandResult cmd_classify(const Config& cfg) {
  CommandResult r;
  const auto eqs = classified_equilibria(cfg);
  json list = json::array();
  bool all_hyp = !eqs.empty(), any_ll = false;
  for (const auto& e : eqs) {
    list.push_back(to_json(e));
    all_hyp = all_hyp && e.hyperbolic;
    any_ll = any_ll || e.lorenz_like;
  }
  r.passed = all_hyp && any_ll;
  r.report = {{"count", eqs.size()}, {"equilibria", list}, {"all_hyperbolic", all_hyp}, {"any_lorenz_like", any_ll}};
  return r;
}

CommandResult cmd_dissipativity(const Config& cfg) {
  const json& p = cfg.probe("dissipativity");
  const double q = num(p, "q", 1.2);
  const int n = integer(p, "points", 10000);
  const double spacing = num(p, "spacing", 0.05);
  DissipativityOptions o;
  o.seed = cfg.seed;
  if (field_or_null(cfg.raw, "equilibria").contains("box")) {
    for (const auto& e : classified_equilibria(cfg)) o.equilibria.push_back(e.position);
    o.search_equilibria = false;
  }
  if (p.contains("grid_box")) o.grid_box = parse_box(p["grid_box"], cfg.model.dim(), "grid_box");
  const auto rep = strong_dissipativity(cfg.model, cfg.d_s, q, attractor_points(cfg, n, spacing, 1), o);
  CommandResult r;
  r.passed = rep.passed();
  r.report = to_json(rep);
  r.report["parameters"] = {{"q", q}, {"points", n}, {"spacing", spacing}};
  return r;
}

CommandResult cmd_trap(const Config& cfg) {
  const json& p = cfg.probe("trap");
  if (!cfg.raw.contains("region")) throw InputError("config has no region");
  const Region region = parse_region(cfg.raw["region"], cfg.model.dim());
  const int n = integer(p, "boundary_points", 2000);
  const double horizon = num(p, "horizon", 10.0);
  auto rep = trap_check(cfg.model, region, n, horizon, cfg.seed, std::max(cfg.tol, 1e-8));
  if (p.contains("radius_bracket") && std::holds_alternative<Ellipsoid>(region)) {
    const auto br = numbers(p["radius_bracket"], "radius_bracket");
    if (br.size() != 2) throw InputError("radius_bracket needs two entries");
    rep.minimal_R = minimal_trapping_radius(cfg.model, std::get<Ellipsoid>(region), n, cfg.seed, br[0], br[1]);
  }
  CommandResult r;
  r.passed = rep.passed;
  r.report = to_json(rep);
  r.report["parameters"] = {{"boundary_points", n}, {"horizon", horizon}};
  return r;
}

CommandResult cmd_cones(const Config& cfg) {
  const json& p = cfg.probe("cones");
  const double a = num(p, "a", 0.5), T = num(p, "T", 2.0);
  const int n = integer(p, "points", 1000);
  const double spacing = num(p, "spacing", 0.5);
  const auto rep = cone_invariance(cfg.model, attractor_points(cfg, n, spacing, 2), cfg.d_s, a, T, check_options(cfg, p));
  CommandResult r;
  r.passed = rep.passed;
  r.report = to_json(rep);
  r.report["parameters"] = {{"a", a}, {"T", T}, {"points", n}, {"spacing", spacing}};
  // The aperture and time are existential, so also report which small-grid
  // pairs pass on a thinner sample. Informational; the verdict uses (a, T).
  const int grid_points = integer(p, "grid_points", 100);
  if (grid_points > 0) {
    const auto pts = attractor_points(cfg, grid_points, spacing, 7);
    json grid = json::array();
    for (double ga : {0.1, 0.25, 0.5, 1.0})
      for (double gT : {1.0, 2.0, 5.0}) {
        const auto g = cone_invariance(cfg.model, pts, cfg.d_s, ga, gT, check_options(cfg, p));
        grid.push_back({{"a", ga}, {"T", gT}, {"pass_fraction", g.pass_fraction}, {"worst_margin", g.worst_margin},
                        {"passed", g.passed}});
      }
    r.report["grid"] = {{"points", grid_points}, {"pairs", grid}};
  }
  r.artifacts.push_back({"cones.csv", diagnostics_csv(rep)});
  r.artifacts.push_back({"cones.gp", gp_header("cone margin per point") +
                                         "plot 'cones.csv' using 1:2 with points pt 7 ps 0.4 title 'margin'\n"});
  return r;
}

CommandResult cmd_expansion(const Config& cfg) {
  const json& p = cfg.probe("expansion");
  const double T = num(p, "T", 10.0);
  const int n = integer(p, "points", 1000);
  const double spacing = num(p, "spacing", 0.5);
  const auto rep = sectional_expansion(cfg.model, attractor_points(cfg, n, spacing, 3), cfg.d_s, T, check_options(cfg, p));
  CommandResult r;
  r.passed = rep.passed;
  r.report = to_json(rep);
  r.report["parameters"] = {{"T", T}, {"points", n}, {"spacing", spacing}};
  r.artifacts.push_back({"expansion.csv", diagnostics_csv(rep)});
  return r;
}

CommandResult cmd_domination(const Config& cfg) {
  const json& p = cfg.probe("domination");
  const double T = num(p, "T", 10.0);
  const int n = integer(p, "points", 200);
  const double spacing = num(p, "spacing", 0.5);
  const auto rep = domination(cfg.model, attractor_points(cfg, n, spacing, 4), cfg.d_s, T, check_options(cfg, p));
  CommandResult r;
  r.passed = rep.passed;
  r.report = to_json(rep);
  r.report["parameters"] = {{"T", T}, {"points", n}, {"spacing", spacing}};
  r.artifacts.push_back({"domination.csv", diagnostics_csv(rep)});
  return r;
}

CommandResult cmd_lyapunov(const Config& cfg) {
  const json& p = cfg.probe("lyapunov");
  LyapunovOptions o;
  o.transient = num(p, "transient", 10.0);
  o.tol = cfg.tol;
  const double T = num(p, "T", 1000.0);
  const double tolerance = num(p, "liouville_tolerance", 0.02);
  const Vec x0 = attractor_points(cfg, 1, 0.05, 0).front();
  const auto res = lyapunov_spectrum(cfg.model, x0, T, o);
  double sum = 0.0;
  for (double l : res.exponents) sum += l;
  CommandResult r;
  r.passed = std::abs(sum - res.mean_divergence) <= tolerance;
  r.report = to_json(res);
  r.report["sum"] = sum;
  r.report["liouville_gap"] = std::abs(sum - res.mean_divergence);
  r.report["parameters"] = {{"T", T}, {"transient", o.transient}, {"liouville_tolerance", tolerance}};
  return r;
}

CommandResult cmd_poincare(const Config& cfg) {
  const json& p = cfg.probe("poincare");
  const int index = integer(p, "section", 0);
  const auto& s = section_at(cfg, index);
  const int n = integer(p, "crossings", 1000);
  ReturnOptions ret;
  ret.T1 = num(p, "T1", 0.1);
  ret.T_max = num(p, "T_max", 20.0);
  ret.tol = cfg.tol;
  const double min_fraction = num(p, "min_fraction", 0.95);
  const double max_residual = num(p, "max_residual", 1e-7);
  const auto recs = section_orbit(cfg, s, n, ret);

  int returned = 0;
  double worst_residual = 0.0;
  bool orientation_ok = true;
  std::vector<double> taus;
  std::map<std::string, int> misses;
  for (const auto& rec : recs) {
    if (rec.miss) {
      ++misses[to_string(rec.reason)];
      continue;
    }
    ++returned;
    taus.push_back(rec.tau);
    worst_residual = std::max(worst_residual, std::abs(s.height(rec.Rx)));
    if (s.orientation != 0 && rec.sign != s.orientation) orientation_ok = false;
  }
  const double fraction = static_cast<double>(returned) / n;
  CommandResult r;
  r.report = {{"section", to_json(s)},
              {"requested", n},
              {"returned", returned},
              {"return_fraction", fraction},
              {"misses", misses},
              {"max_residual", worst_residual},
              {"orientation_ok", orientation_ok},
              {"tau", {{"min", percentile(taus, 0)},
                       {"p2_5", percentile(taus, 2.5)},
                       {"median", percentile(taus, 50)},
                       {"p97_5", percentile(taus, 97.5)},
                       {"max", percentile(taus, 100)}}}};
  bool band_ok = true;
  if (p.contains("tau_band")) {
    const auto band = numbers(p["tau_band"], "tau_band");
    if (band.size() != 2) throw InputError("tau_band needs two entries");
    const auto inside = std::count_if(taus.begin(), taus.end(), [&](double t) { return t >= band[0] && t <= band[1]; });
    const double f = taus.empty() ? 0.0 : static_cast<double>(inside) / static_cast<double>(taus.size());
    r.report["tau_band"] = {{"band", band}, {"fraction", f}};
    band_ok = f >= min_fraction;
  }
  r.passed = fraction >= min_fraction && worst_residual < max_residual && orientation_ok && band_ok;
  r.report["parameters"] = {{"section", index}, {"crossings", n}, {"T1", ret.T1}, {"T_max", ret.T_max},
                            {"min_fraction", min_fraction}, {"max_residual", max_residual}};
  r.artifacts.push_back({"returns.csv", returns_csv(recs)});
  const int d = cfg.model.dim();
  std::ostringstream gp;
  gp << gp_header("return times") << "# columns: 3.." << 2 + d << " = x, " << 3 + d << ".." << 2 + 2 * d
     << " = Rx, " << 3 + 2 * d << " = tau\n"
     << "plot 'returns.csv' using " << 3 + 2 * d << " with points pt 7 ps 0.4 title 'tau'\n";
  r.artifacts.push_back({"poincare.gp", gp.str()});
  return r;
}

CommandResult cmd_roof(const Config& cfg) {
  const json& p = cfg.probe("roof");
  const int index = integer(p, "section", 0);
  const auto& s = section_at(cfg, index);
  EquilibriumReport sigma;
  if (p.contains("equilibrium")) {
    sigma = classify_equilibrium(cfg.model, vec(p["equilibrium"], "roof.equilibrium", cfg.model.dim()), cfg.d_s);
  } else {
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (const auto& e : classified_equilibria(cfg)) {
      if (!e.lorenz_like) continue;
      const double dist = std::abs(s.height(e.position));
      if (dist < best) {
        best = dist;
        sigma = e;
        found = true;
      }
    }
    if (!found) throw PreconditionError("no Lorenz-like equilibrium for the roof fit");
  }
  RoofOptions o;
  o.ret.tol = std::min(cfg.tol, 1e-10);
  o.ret.T_max = num(p, "T_max", 50.0);
  o.axis = integer(p, "axis", 0);
  o.search_fraction = num(p, "search_fraction", 0.5);
  if (p.contains("distances")) o.distances = numbers(p["distances"], "distances");
  const auto fit = roof_fit(cfg.model, cfg.sections, index, sigma, o);
  CommandResult r;
  r.passed = fit.fitted && fit.R2 > num(p, "min_R2", 0.9) && fit.C > 0.0;
  r.report = to_json(fit);
  r.report["equilibrium"] = to_json(sigma);
  r.report["parameters"] = {{"section", index}, {"T_max", o.ret.T_max}, {"axis", o.axis}};
  std::ostringstream csv;
  csv << "dist,tau,miss,used\n";
  for (const auto& smp : fit.samples)
    csv << fmt(smp.dist) << "," << fmt(smp.tau) << "," << smp.miss << "," << smp.used << "\n";
  r.artifacts.push_back({"roof.csv", csv.str()});
  r.artifacts.push_back({"roof.gp", gp_header("return time near the stable-manifold trace") +
                                        "set xlabel '-log(dist)'\nC = " + fmt(fit.C) + "\nb = " + fmt(fit.b) +
                                        "\nplot 'roof.csv' using (-log($1)):2 with points pt 7 title 'tau', "
                                        "C*x + b with lines title 'fit'\n"});
  return r;
}

struct PairDraw {
  Vec x, y;
};

/// Off-leaf pair: offset 10^U(-5,-2) along a direction at most 60 degrees from
/// the in-section transverse space.
PairDraw off_leaf_pair(const Config& cfg, const CrossSection& s, const Vec& x, Rng& rng, const LeafOptions& lo) {
  const LeafFrame f = leaf_frame(s, cfg.model, x, cfg.d_s, lo);
  const double offset = std::pow(10.0, uniform(rng, -5.0, -2.0));
  const double beta = uniform(rng, -M_PI / 3.0, M_PI / 3.0);
  const Vec t = f.transverse * random_unit(rng, static_cast<int>(f.transverse.cols()));
  const Vec l = f.leaf * random_unit(rng, static_cast<int>(f.leaf.cols()));
  return {x, s.embed(f.center + offset * (std::cos(beta) * t + std::sin(beta) * l))};
}

CommandResult cmd_growth(const Config& cfg) {
  const json& p = cfg.probe("growth");
  const int index = integer(p, "section", 0);
  const auto& s = section_at(cfg, index);
  const int n_pairs = integer(p, "pairs", 1000);
  const int n_returns = integer(p, "returns", 60);
  const int onleaf_pairs = integer(p, "onleaf_pairs", 20);
  const int onleaf_returns = integer(p, "onleaf_returns", 5);
  const double onleaf_offset = num(p, "onleaf_offset", 1e-4);
  const int transient = integer(p, "transient_returns", 20);
  const double min_median = num(p, "min_median_factor", 1.2);
  GrowthOptions o;
  o.d_s = cfg.d_s;
  o.delta_sep = num(p, "delta_sep", 1.0);
  o.window = num(p, "window", 0.5);
  o.leaf.tol = cfg.tol;
  if (n_pairs < 1) throw InputError("growth needs pairs >= 1");

  ReturnOptions base_ret;
  base_ret.tol = cfg.tol;
  const auto orbit = section_orbit(cfg, s, transient + n_pairs + onleaf_pairs, base_ret);
  std::vector<Vec> bases;
  for (std::size_t k = static_cast<std::size_t>(transient); k < orbit.size(); ++k)
    if (!orbit[k].miss && s.in_box(orbit[k].Rx, s.a0)) bases.push_back(orbit[k].Rx);
  if (static_cast<int>(bases.size()) < n_pairs + onleaf_pairs)
    throw InsufficientDataError("not enough section crossings for the growth pairs");

  std::vector<GrowthSeries> series(static_cast<std::size_t>(n_pairs));
  std::vector<std::string> errors(static_cast<std::size_t>(n_pairs));
  parallel_for(series.size(), [&](std::size_t i) {
    Rng rng(split_seed(cfg.seed, 0x67726f77ULL, i));
    try {
      const auto pr = off_leaf_pair(cfg, s, bases[i], rng, o.leaf);
      series[i] = leaf_separation_growth(cfg.model, cfg.sections, pr.x, pr.y, n_returns, o);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  std::vector<double> pooled, per_pair;
  int separated = 0, failed = 0;
  std::ostringstream csv;
  csv << "pair,step,distance,factor\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!errors[i].empty()) {
      ++failed;
      continue;
    }
    const auto& g = series[i];
    separated += g.separated ? 1 : 0;
    pooled.insert(pooled.end(), g.factors.begin(), g.factors.end());
    if (!g.factors.empty()) per_pair.push_back(g.median_factor);
    for (std::size_t k = 0; k < g.distances.size(); ++k)
      csv << i << "," << k << "," << fmt(g.distances[k]) << "," << (k == 0 ? std::string() : fmt(g.factors[k - 1]))
          << "\n";
  }
  const double pooled_median = percentile(pooled, 50);
  const double separated_fraction = static_cast<double>(separated) / n_pairs;

  // On-leaf control: pairs displaced along the leaf should stay together.
  json onleaf = json::array();
  bool onleaf_ok = true;
  ReturnOptions ret = o.ret;
  for (int j = 0; j < onleaf_pairs; ++j) {
    const Vec& x = bases[static_cast<std::size_t>(n_pairs + j)];
    const LeafFrame f = leaf_frame(s, cfg.model, x, cfg.d_s, o.leaf);
    const Vec y = s.embed(f.center + onleaf_offset * f.leaf.col(0));
    const auto rx = return_orbit(cfg.model, cfg.sections, x, onleaf_returns, ret);
    const auto ry = return_orbit(cfg.model, cfg.sections, y, onleaf_returns, ret);
    std::vector<double> dist;
    bool ok = static_cast<int>(rx.size()) == onleaf_returns && static_cast<int>(ry.size()) == onleaf_returns;
    for (std::size_t k = 0; ok && k < rx.size(); ++k) {
      if (rx[k].miss || ry[k].miss) {
        ok = false;
        break;
      }
      dist.push_back((rx[k].Rx - ry[k].Rx).norm());
      ok = ok && dist.back() < onleaf_offset;
    }
    onleaf_ok = onleaf_ok && ok;
    onleaf.push_back({{"distances", dist}, {"contracted", ok}});
  }

  CommandResult r;
  r.passed = failed == 0 && pooled_median > min_median && separated_fraction == 1.0 && onleaf_ok;
  r.report = {{"pairs", n_pairs},
              {"failed_pairs", failed},
              {"pooled_median_factor", pooled_median},
              {"median_of_pair_medians", percentile(per_pair, 50)},
              {"min_pair_median", percentile(per_pair, 0)},
              {"separated_fraction", separated_fraction},
              {"onleaf_control", {{"pairs", onleaf_pairs}, {"returns", onleaf_returns}, {"all_contracted", onleaf_ok},
                                  {"series", onleaf}}},
              {"parameters", {{"section", index}, {"returns", n_returns}, {"delta_sep", o.delta_sep},
                              {"window", o.window}, {"onleaf_offset", onleaf_offset},
                              {"min_median_factor", min_median}}}};
  json errs = json::array();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) errs.push_back({{"pair", i}, {"error", errors[i]}});
  r.report["errors"] = errs;
  r.artifacts.push_back({"growth.csv", csv.str()});
  r.artifacts.push_back({"growth.gp", gp_header("leaf distance along paired returns") +
                                          "set logscale y\nplot 'growth.csv' using 2:3 with points pt 7 ps 0.3 "
                                          "title 'leaf distance'\n"});
  return r;
}

CommandResult cmd_quotient(const Config& cfg) {
  const json& p = cfg.probe("quotient");
  const int n = integer(p, "pairs", 1000);
  const int n_control = integer(p, "control_pairs", 200);
  QuotientOptions o;
  o.ret.tol = cfg.tol;
  o.leaf.tol = cfg.tol;
  o.d_s = cfg.d_s;
  o.offset = num(p, "offset", 1e-4);
  o.window = num(p, "window", 0.5);
  o.transient_returns = integer(p, "transient_returns", 20);
  o.start = attractor_points(cfg, 1, 0.05, 0).front();
  section_at(cfg, 0);
  const auto unstable = quotient_expansion(cfg.model, cfg.sections, n, cfg.seed, o);
  o.alignment = Alignment::stable;
  const auto stable = quotient_expansion(cfg.model, cfg.sections, n_control, split_seed(cfg.seed, 0x737462ULL), o);
  const double control_max = stable.factors.empty() ? std::nan("")
                                                     : *std::max_element(stable.factors.begin(), stable.factors.end());
  CommandResult r;
  r.passed = unstable.mu_hat > 1.0 && control_max < 1.0;
  r.report = {{"unstable", to_json(unstable)},
              {"stable_control", to_json(stable)},
              {"stable_control_max", control_max},
              {"parameters", {{"pairs", n}, {"control_pairs", n_control}, {"offset", o.offset}}}};
  std::ostringstream csv;
  csv << "alignment,index,factor\n";
  for (std::size_t i = 0; i < unstable.factors.size(); ++i) csv << "unstable," << i << "," << fmt(unstable.factors[i]) << "\n";
  for (std::size_t i = 0; i < stable.factors.size(); ++i) csv << "stable," << i << "," << fmt(stable.factors[i]) << "\n";
  r.artifacts.push_back({"quotient.csv", csv.str()});
  return r;
}

std::vector<double> delta_grid_of(const json& p) {
  if (!p.contains("delta_grid")) return {0.001};
  return numbers(p["delta_grid"], "delta_grid");
}

CommandResult cmd_expansive(const Config& cfg) {
  const json& p = cfg.probe("expansive");
  const double eps = num(p, "eps", 0.5);
  const auto grid = delta_grid_of(p);
  const int n = integer(p, "pairs", 10000);
  const double horizon = num(p, "horizon", 100.0);
  const bool positive_only = boolean(p, "positive_only", true);
  const int bundle = integer(p, "bundle", 5);
  ProbeOptions o;
  o.dt = num(p, "dt", 0.01);
  o.band = integer(p, "band", 20);
  o.tol = cfg.tol;
  o.d_s = cfg.d_s;
  const auto sample = attractor_points(cfg, integer(p, "sample_points", 5000), num(p, "spacing", 0.05), 5);
  const auto rep = expansiveness_probe(cfg.model, sample, eps, grid, n, horizon, positive_only, cfg.seed, o);

  CommandResult r;
  r.passed = rep.passed();
  r.report = to_json(rep);
  r.report["parameters"] = {{"eps", eps}, {"delta_grid", grid}, {"pairs", n}, {"horizon", horizon},
                            {"positive_only", positive_only}, {"band", o.band}, {"dt", o.dt}};
  std::ostringstream sum;
  sum << "delta,pairs,separated,stayed_close,same_orbit,on_leaf_excluded,undecided,counterexamples\n";
  for (const auto& d : rep.per_delta)
    sum << fmt(d.delta) << "," << d.pairs << "," << d.separated << "," << d.stayed_close << "," << d.same_orbit << ","
        << d.on_leaf_excluded << "," << d.undecided << "," << d.counterexamples << "\n";
  r.artifacts.push_back({"expansive.csv", sum.str()});

  const int k_max = std::min<int>(bundle, static_cast<int>(rep.counterexamples.size()));
  for (int k = 0; k < k_max; ++k) {
    const auto& ce = rep.counterexamples[static_cast<std::size_t>(k)];
    const MatchResult replay =
        replay_pair(cfg.model, sample, eps, ce.delta, horizon, positive_only, ce.pair_seed, ce.pair_index, o, true);
    const std::string stem = "counterexample_" + std::to_string(k);
    json j = to_json(replay, true);
    j["replayed_verdict_matches"] = replay.verdict == ce.verdict;
    j["x_csv"] = stem + "_x.csv";
    j["y_csv"] = stem + "_y.csv";
    r.artifacts.push_back({stem + ".json", j.dump(2) + "\n"});
    r.artifacts.push_back({stem + "_x.csv", integrate(cfg.model, replay.x, 0.0, horizon, cfg.tol).to_csv(o.dt)});
    r.artifacts.push_back({stem + "_y.csv", integrate(cfg.model, replay.y, 0.0, horizon, cfg.tol).to_csv(o.dt)});
    r.artifacts.push_back({stem + ".gp", gp_header("counterexample " + std::to_string(k)) +
                                             "splot '" + stem + "_x.csv' using 2:3:4 with lines title 'x', '" + stem +
                                             "_y.csv' using 2:3:4 with lines title 'y'\n"});
  }
  return r;
}

CommandResult cmd_chaos(const Config& cfg) {
  const json& p = cfg.probe("chaos");
  const double radius = num(p, "r", 1.0);
  const int n = integer(p, "points", 50);
  const double nb = num(p, "neighborhood", 1e-4);
  const double horizon = num(p, "horizon", 50.0);
  const Direction dir = direction_from_string(str(p, "direction", "both"));
  const auto sample = attractor_points(cfg, integer(p, "sample_points", 2000), num(p, "spacing", 0.05), 6);
  const auto rep = chaos_probe(cfg.model, sample, radius, n, nb, horizon, dir, cfg.seed, cfg.tol);
  CommandResult r;
  r.passed = rep.witness_fraction == 1.0;
  r.report = to_json(rep);
  r.report["parameters"] = {{"r", radius}, {"points", n}, {"neighborhood", nb}, {"horizon", horizon},
                            {"direction", to_string(dir)}};
  return r;
}

const std::vector<std::string> kDefaultRobustChecks = {"classify", "dissipativity", "expansion", "cones",
                                                       "growth",   "expansive",     "chaos"};

CommandResult cmd_robust(const Config& cfg) {
  const json& p = cfg.probe("robust");
  const double magnitude = num(p, "magnitude", 0.02);
  const int n_seeds = integer(p, "seeds", 8);
  const std::string mode = str(p, "mode", "parameter_scale");
  std::vector<std::string> names = kDefaultRobustChecks;
  if (p.contains("checks")) {
    names.clear();
    if (!p["checks"].is_array()) throw InputError("'checks' must be an array of command names");
    for (const auto& c : p["checks"]) {
      if (!c.is_string()) throw InputError("'checks' must be an array of command names");
      names.push_back(c.get<std::string>());
    }
  }
  for (const auto& nm : names) {
    const auto& all = command_names();
    if (nm == "robust" || std::find(all.begin(), all.end(), nm) == all.end())
      throw InputError("unknown robust check '" + nm + "'");
  }
  if (!(magnitude >= 0.0 && magnitude <= 0.05)) throw PreconditionError("perturbation magnitude must lie in [0, 0.05]");

  std::vector<Perturbation> perts;
  for (int i = 0; i < n_seeds; ++i) {
    Perturbation pt;
    pt.relative_magnitude = magnitude;
    pt.seed = split_seed(cfg.seed, 0x726f62ULL, static_cast<std::uint64_t>(i));
    if (mode == "parameter_scale") {
      pt.mode = PerturbationMode::parameter_scale;
    } else if (mode == "additive_linear") {
      pt.mode = PerturbationMode::additive_linear;
      pt.sample_region = equilibrium_box(cfg);
    } else {
      throw InputError("robust.mode must be parameter_scale or additive_linear");
    }
    perts.push_back(pt);
  }
  std::vector<std::pair<std::string, ModelCheck>> checks;
  for (const auto& nm : names) {
    checks.emplace_back(nm, [&cfg, nm](const VectorFieldModel& m) {
      Config c = cfg;
      c.model = m;
      if (cfg.raw.contains("sections")) c.sections = sections_from_json(m, cfg.raw["sections"]);
      const CommandResult res = run_command(nm, c);
      json detail = res.report;
      detail.erase("counterexamples");
      detail.erase("diagnostics");
      detail.erase("series");
      return CheckOutcome{res.passed, detail};
    });
  }
  const auto rep = robustness_sweep(cfg.model, perts, checks);
  CommandResult r;
  r.passed = rep.all_pass;
  r.report = to_json(rep);
  r.report["parameters"] = {{"magnitude", magnitude}, {"seeds", n_seeds}, {"mode", mode}, {"checks", names}};
  r.report["scope"] = "robustness under tested perturbations";
  r.artifacts.push_back({"robust.csv", summary_csv(rep)});
  return r;
}

using CommandFn = CommandResult (*)(const Config&);

const std::vector<std::pair<std::string, CommandFn>>& registry() {
  static const std::vector<std::pair<std::string, CommandFn>> r = {
      {"classify", cmd_classify},     {"dissipativity", cmd_dissipativity}, {"trap", cmd_trap},
      {"cones", cmd_cones},           {"expansion", cmd_expansion},         {"domination", cmd_domination},
      {"lyapunov", cmd_lyapunov},     {"poincare", cmd_poincare},           {"roof", cmd_roof},
      {"growth", cmd_growth},         {"quotient", cmd_quotient},           {"expansive", cmd_expansive},
      {"chaos", cmd_chaos},           {"robust", cmd_robust}};
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

const json& Config::probe(const std::string& command) const {
  static const json empty = json::object();
  const json& probes = field_or_null(raw, "probes");
  const json& p = field_or_null(probes, command);
  return p.is_null() ? empty : p;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : registry()) n.push_back(name);
    return n;
  }();
  return names;
}

json apply_overrides(json raw, const Overrides& o) {
  if (!raw.is_object()) throw InputError("config must be a JSON object");
  if (o.seed) raw["seed"] = *o.seed;
  if (o.d_s) raw["d_s"] = *o.d_s;
  auto& e = raw["probes"]["expansive"];
  if (o.eps) e["eps"] = *o.eps;
  if (o.delta_grid) e["delta_grid"] = *o.delta_grid;
  if (o.pairs) e["pairs"] = *o.pairs;
  if (o.horizon) e["horizon"] = *o.horizon;
  if (e.is_null()) raw["probes"].erase("expansive");
  if (raw["probes"].empty()) raw.erase("probes");
  return raw;
}

Config parse_config(const json& raw) {
  if (!raw.is_object()) throw InputError("config must be a JSON object");
  for (const auto& [key, value] : raw.items())
    if (!kTopKeys.count(key)) throw InputError("unknown config key '" + key + "'");
  if (!raw.contains("model")) throw InputError("config needs a 'model'");
  Config c;
  c.raw = raw;
  c.model = VectorFieldModel::from_json(raw["model"]);
  const int d = c.model.dim();
  c.d_s = integer(raw, "d_s", 1);
  if (c.d_s < 1 || c.d_s >= d) throw InputError("d_s must satisfy 1 <= d_s < dim");
  const json& seed = field_or_null(raw, "seed");
  if (!seed.is_null()) {
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
      throw InputError("'seed' must be a non-negative integer");
    c.seed = seed.get<std::uint64_t>();
  }
  c.tol = num(raw, "tol", 1e-9);
  if (!(c.tol >= 1e-12 && c.tol <= 1e-3)) throw InputError("tol must lie in [1e-12, 1e-3]");
  if (raw.contains("sections")) c.sections = sections_from_json(c.model, raw["sections"]);
  if (raw.contains("region")) parse_region(raw["region"], d);
  const json& a = field_or_null(raw, "attractor");
  if (!a.is_null()) {
    if (!a.is_object()) throw InputError("'attractor' must be an object");
    for (const auto& [key, value] : a.items())
      if (key != "start" && key != "transient" && key != "box") throw InputError("unknown attractor key '" + key + "'");
    if (a.contains("start")) vec(a["start"], "attractor.start", d);
    if (a.contains("box")) parse_box(a["box"], d, "attractor.box");
    if (num(a, "transient", 50.0) < 0.0) throw InputError("attractor.transient must be >= 0");
  }
  const json& e = field_or_null(raw, "equilibria");
  if (!e.is_null()) {
    if (e.contains("box")) parse_box(e["box"], d, "equilibria.box");
    if (integer(e, "seeds", 200) < 1) throw InputError("equilibria.seeds must be >= 1");
  }
  const json& probes = field_or_null(raw, "probes");
  if (!probes.is_null()) {
    if (!probes.is_object()) throw InputError("'probes' must be an object");
    const auto& names = command_names();
    for (const auto& [key, value] : probes.items()) {
      if (std::find(names.begin(), names.end(), key) == names.end()) throw InputError("unknown probe '" + key + "'");
      if (!value.is_object()) throw InputError("probe '" + key + "' must be an object");
    }
    const json& ex = field_or_null(probes, "expansive");
    auto grid = delta_grid_of(ex);
    if (grid.empty() || !std::is_sorted(grid.begin(), grid.end()) || grid.front() <= 0.0)
      throw InputError("delta_grid must be non-empty, positive and ascending");
  }
  const json& threads = field_or_null(raw, "threads");
  if (!threads.is_null() && (!threads.is_number_integer() || threads.get<int>() < 0))
    throw InputError("'threads' must be a non-negative integer");
  return c;
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.value("tool", "") == "sechyp" && j.contains("config")) return j["config"];
  return j;
}

std::vector<Vec> attractor_points(const Config& cfg, int n, double spacing, std::uint64_t stream) {
  if (n < 1) throw InputError("point count must be >= 1");
  const json& a = field_or_null(cfg.raw, "attractor");
  const int d = cfg.model.dim();
  if (a.contains("box")) {
    const Box b = parse_box(a["box"], d, "attractor.box");
    Rng rng(split_seed(cfg.seed, 0x626f78ULL, stream));
    std::vector<Vec> out;
    for (int i = 0; i < n; ++i) {
      Vec x(d);
      for (int k = 0; k < d; ++k) x[k] = uniform(rng, b.lo[k], b.hi[k]);
      out.push_back(x);
    }
    return out;
  }
  return attractor_sample(cfg.model, orbit_start(cfg), num(a, "transient", 50.0), n, spacing, cfg.tol);
}

CommandResult run_command(const std::string& command, const Config& cfg) {
  for (const auto& [name, fn] : registry()) {
    if (name != command) continue;
    CommandResult r = fn(cfg);
    r.command = command;
    return r;
  }
  throw InputError("unknown command '" + command + "'");
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("SHA-256 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

void write_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw InputError("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------

namespace {

enum ExitCode { kPass = 0, kFail = 1, kUsage = 2, kNumeric = 3 };

std::vector<double> parse_csv_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("--delta-grid must be a comma-separated list of numbers");
    }
  }
  return out;
}

bool needs_missing_input(const std::string& command, const Config& cfg) {
  static const std::set<std::string> need_sections = {"poincare", "roof", "growth", "quotient"};
  if (need_sections.count(command) && cfg.sections.empty()) return true;
  if (command == "trap" && !cfg.raw.contains("region")) return true;
  return false;
}

json envelope(const CommandResult& r, const Config& cfg) {
  return {{"tool", "sechyp"},   {"version", kToolVersion}, {"command", r.command},
          {"model", cfg.model.to_json()}, {"model_id", cfg.model.id()}, {"d_s", cfg.d_s},
          {"seed", cfg.seed},    {"passed", r.passed},      {"report", r.report}};
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Numerical probes of sectional hyperbolicity and expansiveness for vector fields"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "Run one analysis command (or 'all')");
  std::string command, config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> d_s, pairs, threads;
  std::optional<double> eps, horizon;
  std::string delta_grid;
  run->add_option("command", command, "classify | dissipativity | trap | cones | expansion | domination | lyapunov | "
                                      "poincare | roof | growth | quotient | expansive | chaos | robust | all")
      ->required();
  run->add_option("--config", config_path, "Model config JSON (or a run manifest)")->required();
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--d-s", d_s, "Stable dimension");
  run->add_option("--eps", eps, "Expansiveness time-shift tolerance");
  run->add_option("--delta-grid", delta_grid, "Comma-separated delta values");
  run->add_option("--pairs", pairs, "Expansiveness probe pairs");
  run->add_option("--horizon", horizon, "Expansiveness probe horizon");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--threads", threads, "Worker threads (0 = auto)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  Config cfg;
  std::vector<std::string> commands;
  try {
    Overrides o{seed, d_s, eps, std::nullopt, pairs, horizon};
    if (!delta_grid.empty()) o.delta_grid = parse_csv_list(delta_grid);
    cfg = parse_config(apply_overrides(read_config_file(config_path), o));
    if (command == "all") {
      for (const auto& c : command_names())
        if (c != "robust") commands.push_back(c);
    } else {
      const auto& names = command_names();
      if (std::find(names.begin(), names.end(), command) == names.end())
        throw InputError("unknown command '" + command + "'");
      commands.push_back(command);
    }
    int nthreads = 0;
    if (threads) {
      nthreads = *threads;
    } else if (const char* env = std::getenv("SECHYP_THREADS")) {
      try {
        nthreads = std::stoi(env);
      } catch (const std::exception&) {
        throw InputError("SECHYP_THREADS must be an integer");
      }
    } else {
      nthreads = integer(cfg.raw, "threads", 0);
    }
    if (nthreads < 0) throw InputError("thread count must be >= 0");
    set_default_threads(nthreads);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  const std::string config_text = cfg.raw.dump();
  json manifest = {{"tool", "sechyp"},
                   {"version", kToolVersion},
                   {"config_hash", sha256_hex(config_text)},
                   {"seed", cfg.seed},
                   {"config", cfg.raw},
                   {"commands", json::array()}};
  bool any_fail = false, any_usage = false, any_numeric = false;
  const bool single = commands.size() == 1;
  for (const auto& c : commands) {
    json entry = {{"command", c}, {"parameters", cfg.probe(c)}};
    if (!single && needs_missing_input(c, cfg)) {
      entry["status"] = "skipped";
      entry["note"] = "config lacks the inputs this command needs";
      manifest["commands"].push_back(entry);
      continue;
    }
    const auto steps0 = total_steps();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const CommandResult r = run_command(c, cfg);
      // Outputs are listed relative to the output directory.
      std::vector<std::string> paths = {c + ".json"};
      write_atomic((fs::path(out_dir) / paths.front()).string(), envelope(r, cfg).dump(2) + "\n");
      for (const auto& a : r.artifacts) {
        write_atomic((fs::path(out_dir) / a.name).string(), a.content);
        paths.push_back(a.name);
      }
      entry["status"] = r.passed ? "passed" : "failed";
      if (r.report.contains("parameters")) entry["parameters"] = r.report["parameters"];
      entry["outputs"] = paths;
      any_fail = any_fail || !r.passed;
      std::cout << c << ": " << (r.passed ? "pass" : "FAIL") << "\n";
    } catch (const NumericError& e) {
      entry["status"] = "numeric failure";
      entry["error"] = e.what();
      any_numeric = true;
      std::cerr << "error: " << c << ": " << e.what() << "\n";
    } catch (const InsufficientDataError& e) {
      entry["status"] = "insufficient data";
      entry["error"] = e.what();
      any_numeric = true;
      std::cerr << "error: " << c << ": " << e.what() << "\n";
    } catch (const Error& e) {
      entry["status"] = "input error";
      entry["error"] = e.what();
      any_usage = true;
      std::cerr << "error: " << c << ": " << e.what() << "\n";
    } catch (const std::exception& e) {
      entry["status"] = "numeric failure";
      entry["error"] = e.what();
      any_numeric = true;
      std::cerr << "error: " << c << ": " << e.what() << "\n";
    }
    entry["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    entry["integrator_steps"] = total_steps() - steps0;
    manifest["commands"].push_back(entry);
  }
  const int code = any_usage ? kUsage : any_numeric ? kNumeric : any_fail ? kFail : kPass;
  manifest["exit_code"] = code;
  try {
    write_atomic((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return code;
}

}  // namespace sechyp
