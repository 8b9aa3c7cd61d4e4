// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance                 run every criterion
//   acceptance --criterion N   run only criterion N
// Exit status is 0 when every selected criterion passes.

#include "sechyp/cli.hpp"
#include "sechyp/equilibria.hpp"
#include "sechyp/expansive.hpp"
#include "sechyp/flow.hpp"
#include "sechyp/rng.hpp"
#include "sechyp/splitting.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace sechyp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failed_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  Outcome outcome() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < notes_.size(); ++i) os << (i ? "; " : "") << notes_[i];
    if (!failed_.empty()) {
      os << " | failed:";
      for (const auto& f : failed_) os << " [" << f << "]";
    }
    return {pass_, os.str()};
  }

 private:
  bool pass_ = true;
  std::vector<std::string> failed_, notes_;
};

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

std::string config_path(const std::string& name) { return std::string(SECHYP_SOURCE_DIR) + "/configs/" + name; }

Config load(const std::string& name) { return parse_config(read_config_file(config_path(name))); }

Config with_model(const Config& base, const VectorFieldModel& m) {
  Config c = base;
  c.model = m;
  if (base.raw.contains("sections")) c.sections = sections_from_json(m, base.raw["sections"]);
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sechyp_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sechyp");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Closed-form Lorenz origin spectrum, ascending.
std::vector<double> origin_spectrum(const VectorFieldModel& m) {
  const double s = m.params().at("sigma"), r = m.params().at("rho"), b = m.params().at("beta");
  const double disc = std::sqrt((s + 1) * (s + 1) + 4 * s * (r - 1));
  std::vector<double> ev = {-b, (-(s + 1) - disc) / 2, (-(s + 1) + disc) / 2};
  std::sort(ev.begin(), ev.end());
  return ev;
}

Vec origin() { return Vec::Zero(3); }

// ---------------------------------------------------------------- criteria

void spectral_oracle(Checks& c, const VectorFieldModel& m) {
  const auto rep = classify_equilibrium(m, origin(), 1);
  const auto ev = origin_spectrum(m);
  std::vector<double> got;
  double imag = 0.0;
  for (const auto& z : rep.eigenvalues) {
    got.push_back(z.real());
    imag = std::max(imag, std::abs(z.imag()));
  }
  std::sort(got.begin(), got.end());
  double err = imag;
  for (std::size_t i = 0; i < 3 && i < got.size(); ++i) err = std::max(err, std::abs(got[i] - ev[i]));
  c.note("spectrum error " + fmt(err, 3));
  c.expect(got.size() == 3 && err <= 1e-9, "spectrum within 1e-9 of closed form");
  c.expect(rep.lorenz_like, "lorenz_like");
  c.expect(rep.index == 2, "index 2");
}

void dissipativity_arithmetic(Checks& c, const Config& cfg, bool frozen) {
  const auto res = run_command("dissipativity", cfg);
  const json& r = res.report;
  const auto ev = origin_spectrum(cfg.model);
  const double q = r["q"].get<double>();
  const double oracle_a = ev[0] - ev[1] + q * ev[2];
  const double oracle_qmax_a = (ev[1] - ev[0]) / ev[2];
  std::optional<double> at_origin;
  for (const auto& e : r["cond_a"]) {
    double n = 0;
    for (const auto& v : e["position"]) n = std::max(n, std::abs(v.get<double>()));
    if (n < 1e-8) at_origin = e["value"].get<double>();
  }
  c.expect(at_origin.has_value(), "origin among the equilibria");
  if (at_origin) {
    c.note("cond_a(origin) " + fmt(*at_origin));
    c.expect(std::abs(*at_origin - oracle_a) < 1e-3, "cond_a matches eigenvalue arithmetic");
    if (frozen) c.expect(std::abs(*at_origin + 5.9679) < 1e-3, "cond_a = -5.9679 +- 1e-3");
  }
  const bool have = r["q_max_a"].is_number() && r["q_max"].is_number() && r["cond_b"]["sampled_sup"].is_number();
  c.expect(have, "q_max_a, q_max and cond_b computed");
  if (!have) return;
  const double qa = r["q_max_a"].get<double>(), qm = r["q_max"].get<double>();
  const double cb = r["cond_b"]["sampled_sup"].get<double>();
  c.note("q_max_a " + fmt(qa) + ", cond_b " + fmt(cb) + ", q_max " + fmt(qm));
  c.expect(std::abs(qa - oracle_qmax_a) < 1e-3, "q_max_a matches eigenvalue arithmetic");
  c.expect(std::isfinite(cb) && std::isfinite(qm), "finite cond_b and q_max");
  c.expect(res.passed, "strongly dissipative at q = " + fmt(q));
  if (frozen) {
    c.expect(std::abs(qa - 1.7047) < 1e-3, "q_max_a = 1.7047 +- 1e-3");
    // Regression bands frozen from the first measured run.
    c.expect(std::abs(cb + 5.9206) < 0.05, "cond_b in frozen band -5.9206 +- 0.05");
    c.expect(std::abs(qm - 1.35286) < 0.01, "q_max in frozen band 1.35286 +- 0.01");
  }
}

void flow_fidelity(Checks& c) {
  const auto lz = VectorFieldModel::lorenz();
  const double tol = 1e-9;
  const auto pts = attractor_sample(lz, (Vec(3) << 1, 1, 20).finished(), 50.0, 500, 0.1, tol);
  Rng rng(split_seed(0, 0x666c6f77ULL));

  double group = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Vec& x = pts[static_cast<std::size_t>(rng() % pts.size())];
    const double t = uniform(rng, 0, 5), s = uniform(rng, 0, 5);
    group = std::max(group, (flow_point(lz, x, t + s, tol) - flow_point(lz, flow_point(lz, x, t, tol), s, tol)).norm());
  }
  c.note("group " + fmt(group, 3));
  c.expect(group < 1e-6, "group property < 1e-6");

  const auto tangent = [](const VectorFieldModel& m, const Vec& x, double T) {
    return propagate_frame(m, x, Mat::Identity(m.dim(), m.dim()), T, 1e-10).second;
  };
  const auto cocycle = [&](const VectorFieldModel& m, const Vec& x, double t, double s) {
    const Mat full = tangent(m, x, t + s);
    const Mat split = tangent(m, flow_point(m, x, t, 1e-11), s) * tangent(m, x, t);
    return (full - split).norm() / full.norm();
  };
  double coc_lin = 0.0, coc_lz = 0.0;
  const std::vector<VectorFieldModel> linear = {VectorFieldModel::diagonal({-2.0, 1.0, 3.0}),
                                                VectorFieldModel::center_contraction(1.0, 1.0)};
  for (const auto& m : linear)
    for (int k = 0; k < 5; ++k) {
      const Vec x = (Vec(3) << 0.1 * k, -0.3, 0.2).finished();
      coc_lin = std::max(coc_lin, cocycle(m, x, uniform(rng, 0, 2), uniform(rng, 0, 2)));
    }
  for (int k = 0; k < 10; ++k)
    coc_lz = std::max(coc_lz, cocycle(lz, pts[static_cast<std::size_t>(40 * k)], uniform(rng, 0, 2), uniform(rng, 0, 2)));
  c.note("cocycle linear " + fmt(coc_lin, 3) + ", lorenz " + fmt(coc_lz, 3));
  c.expect(coc_lin < 1e-5, "cocycle on linear models < 1e-5");
  c.expect(coc_lz < 1e-4, "cocycle on lorenz < 1e-4");

  double fd = 0.0;
  const double h = 1e-5;
  for (int k = 0; k < 6; ++k) {
    const Vec& x = pts[static_cast<std::size_t>(70 * k + 3)];
    const double T = 0.5 + 0.3 * k;
    const Mat D = tangent(lz, x, T);
    for (int i = 0; i < 3; ++i) {
      const Vec e = Vec::Unit(3, i);
      const Vec col = (flow_point(lz, x + h * e, T, 1e-12) - flow_point(lz, x - h * e, T, 1e-12)) / (2 * h);
      fd = std::max(fd, (D.col(i) - col).norm() / col.norm());
    }
  }
  c.note("tangent vs fd " + fmt(fd, 3));
  c.expect(fd < 1e-3, "tangent flow vs finite differences < 1e-3");

  // Forward-then-backward closure on fields whose backward flow is well conditioned.
  double rev = 0.0;
  const std::vector<std::pair<VectorFieldModel, Vec>> cases = {
      {VectorFieldModel::center_contraction(1.0, 1.0), (Vec(3) << 0.8, -0.4, 0.5).finished()},
      {VectorFieldModel::diagonal({-2.0, 1.0, 3.0}), (Vec(3) << 0.8, -0.4, 0.5).finished()},
      {VectorFieldModel::diagonal({-0.3, 0.5}), (Vec(2) << 0.3, -0.2).finished()}};
  for (const auto& [m, x] : cases)
    for (double T : {1.0, 2.5, 5.0})
      rev = std::max(rev, (flow_point(m, flow_point(m, x, T, tol), -T, tol) - x).norm() / tol);
  c.note("reversal " + fmt(rev, 3) + " tol");
  c.expect(rev < 100.0, "time reversal within 100 tol for T <= 5");
  const Vec& x = pts[100];
  const double lz_rev = (flow_point(lz, flow_point(lz, x, 0.2, tol), -0.2, tol) - x).norm() / (tol * x.norm());
  c.note("lorenz reversal at T=0.2 " + fmt(lz_rev, 3) + " tol (relative)");
  c.expect(lz_rev < 100.0, "lorenz short-span reversal within 100 tol");
}

LyapunovResult lorenz_lyapunov(const VectorFieldModel& m) {
  LyapunovOptions o;
  o.transient = 10.0;
  return lyapunov_spectrum(m, (Vec(3) << 1, 1, 20).finished(), 1000.0, o);
}

void liouville(Checks& c) {
  const auto res = lorenz_lyapunov(VectorFieldModel::lorenz());
  const auto& l = res.exponents;
  const double sum = l[0] + l[1] + l[2];
  c.note("exponents (" + fmt(l[0], 5) + ", " + fmt(l[1], 3) + ", " + fmt(l[2], 6) + "), mean divergence " +
         fmt(res.mean_divergence));
  c.expect(std::abs(sum + 41.0 / 3.0) <= 0.02, "sum = -41/3 +- 0.02");
  c.expect(std::abs(l[1]) <= 0.005, "middle exponent 0 +- 0.005");
  c.expect(std::abs(l[0] - 0.906) <= 0.03, "largest exponent 0.906 +- 0.03");
  c.expect(std::abs(sum - res.mean_divergence) <= 0.02, "sum matches divergence average");
}

void sectional(Checks& c, const Config& cfg, bool control) {
  const auto lyap = lorenz_lyapunov(cfg.model);
  const double target = lyap.exponents[0] + lyap.exponents[1];
  const auto res = run_command("expansion", cfg);
  const double theta = res.report["theta_hat"].get<double>();
  c.note("theta_hat " + fmt(theta) + " vs l1+l2 " + fmt(target) + " over " +
         std::to_string(res.report["sampled_points"].get<int>()) + " points");
  c.expect(std::abs(theta - target) <= 0.1, "theta_hat within 0.1 of l1+l2");
  if (!control) return;
  Rng rng(split_seed(0, 0x63746c));
  std::vector<Vec> pts;
  for (int k = 0; k < 5; ++k) {
    Vec x(4);
    x << 0.0, uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5);
    pts.push_back(x);
  }
  const auto bad = sectional_expansion(VectorFieldModel::diagonal({-2.0, -1.0, 4.0, 0.5}), pts, 1, 5.0);
  c.note("control theta_hat " + fmt(bad.theta_hat));
  c.expect(!bad.passed, "diagonal control fails");
}

void cones(Checks& c, const Config& cfg) {
  const auto res = run_command("cones", cfg);
  const json& r = res.report;
  c.note("pass fraction " + fmt(r["pass_fraction"].get<double>()) + ", worst margin " +
         fmt(r["worst_margin"].get<double>()) + " over " + std::to_string(r["sampled_points"].get<int>()) + " points");
  c.expect(r["sampled_points"].get<int>() == 1000, "1000 points");
  c.expect(r["parameters"]["a"].get<double>() == 0.5 && r["parameters"]["T"].get<double>() == 2.0, "(a, T) = (0.5, 2)");
  c.expect(r["pass_fraction"].get<double>() == 1.0, "pass fraction 1.0");
  c.expect(r["worst_margin"].get<double>() > 0.0, "positive worst margin");
}

void return_map(Checks& c, const Config& cfg) {
  const auto p = run_command("poincare", cfg);
  const json& r = p.report;
  c.note("returned " + std::to_string(r["returned"].get<int>()) + "/" + std::to_string(r["requested"].get<int>()) +
         ", residual " + fmt(r["max_residual"].get<double>(), 3));
  c.expect(r["requested"].get<int>() == 1000, "1000 crossings");
  c.expect(r["section"]["point"][2].get<double>() == 27.0, "z = 27 section");
  c.expect(r["return_fraction"].get<double>() >= 0.95, "return fraction >= 0.95");
  c.expect(r["max_residual"].get<double>() < 1e-7, "plane residual < 1e-7");
  const auto roof = run_command("roof", cfg);
  c.note("roof R2 " + fmt(roof.report["R2"].get<double>()) + ", C " + fmt(roof.report["C"].get<double>()));
  c.expect(roof.report["fitted"].get<bool>() && roof.report["R2"].get<double>() > 0.9, "roof R2 > 0.9");
}

void growth(Checks& c, const Config& cfg) {
  const auto res = run_command("growth", cfg);
  const json& r = res.report;
  c.note("pairs " + std::to_string(r["pairs"].get<int>()) + ", failed " + std::to_string(r["failed_pairs"].get<int>()) +
         ", pooled median " + fmt(r["pooled_median_factor"].get<double>()) + ", separated " +
         fmt(r["separated_fraction"].get<double>()));
  c.expect(r["pairs"].get<int>() == 1000, "1000 off-leaf pairs");
  c.expect(r["failed_pairs"].get<int>() == 0, "no failed pairs");
  c.expect(r["parameters"]["delta_sep"].get<double>() == 0.5, "delta_sep = 0.5");
  c.expect(r["pooled_median_factor"].get<double>() > 1.2, "median growth factor > 1.2");
  c.expect(r["separated_fraction"].get<double>() == 1.0, "100% separation");
  c.expect(r["onleaf_control"]["returns"].get<int>() >= 5, "on-leaf control over >= 5 returns");
  c.expect(r["onleaf_control"]["all_contracted"].get<bool>(), "on-leaf pairs contract");
}

int total_counterexamples(const json& r) {
  int n = 0;
  for (const auto& d : r["per_delta"]) n += d["counterexamples"].get<int>();
  return n;
}

void lorenz_expansive(Checks& c, const Config& cfg) {
  const auto res = run_command("expansive", cfg);
  const json& r = res.report;
  c.expect(r["eps"].get<double>() == 0.5 && r["n_pairs"].get<int>() == 10000 && r["horizon"].get<double>() == 100.0 &&
               r["delta_grid"] == json::array({0.001}),
           "probe at eps 0.5, delta 0.001, 1e4 pairs, horizon 100");
  c.note("lorenz counterexamples " + std::to_string(total_counterexamples(r)));
  c.expect(res.passed && total_counterexamples(r) == 0, "zero lorenz counterexamples");
  const auto chaos = run_command("chaos", cfg);
  c.note("lorenz both-direction witness fraction " + fmt(chaos.report["witness_fraction"].get<double>()));
  c.expect(chaos.report["direction"] == "both" && chaos.report["r"].get<double>() == 1.0, "chaos at r = 1, both");
  c.expect(chaos.report["witness_fraction"].get<double>() == 1.0, "lorenz witness fraction 1.0");
}

void expansiveness(Checks& c) {
  const auto lz_dir = scratch("lorenz_expansive");
  const int lz_code = run_cli({"run", "expansive", "--config", config_path("lorenz.json"), "--out", lz_dir.string()});
  const json lz = read_json(lz_dir / "expansive.json")["report"];
  c.note("lorenz exit " + std::to_string(lz_code) + ", counterexamples " + std::to_string(total_counterexamples(lz)));
  c.expect(lz_code == 0, "lorenz expansive exit 0");
  c.expect(total_counterexamples(lz) == 0, "zero lorenz counterexamples");
  c.expect(lz["n_pairs"].get<int>() == 10000 && lz["horizon"].get<double>() == 100.0 && lz["eps"].get<double>() == 0.5 &&
               lz["delta_grid"] == json::array({0.001}),
           "lorenz probe parameters");

  const auto cc_dir = scratch("center_expansive");
  const int cc_code = run_cli({"run", "expansive", "--config", config_path("center3d.json"), "--out", cc_dir.string()});
  const json cc = read_json(cc_dir / "expansive.json")["report"];
  bool every = !cc["per_delta"].empty();
  for (const auto& d : cc["per_delta"]) every = every && d["counterexamples"].get<int>() > 0;
  c.note("center exit " + std::to_string(cc_code) + ", deltas " + std::to_string(cc["per_delta"].size()));
  c.expect(cc_code == 1, "center expansive exit 1");
  c.expect(every, "center counterexamples at every delta");

  const auto sk_dir = scratch("sink_chaos");
  const int sk_code = run_cli({"run", "chaos", "--config", config_path("sink3d.json"), "--out", sk_dir.string()});
  const json sk = read_json(sk_dir / "chaos.json")["report"];
  c.note("sink future fraction " + fmt(sk["witness_fraction"].get<double>()));
  c.expect(sk["direction"] == "future", "sink probe looks at the future");
  c.expect(sk["witness_fraction"].get<double>() == 0.0, "sink witness fraction 0.0");
  c.expect(sk_code == 1, "sink chaos exit 1");

  const auto lc = run_command("chaos", load("lorenz.json"));
  c.note("lorenz both fraction " + fmt(lc.report["witness_fraction"].get<double>()));
  c.expect(lc.report["direction"] == "both" && lc.report["r"].get<double>() == 1.0, "lorenz chaos at r = 1, both");
  c.expect(lc.report["witness_fraction"].get<double>() == 1.0, "lorenz witness fraction 1.0");
}

void robustness(Checks& c) {
  const Config base = load("lorenz.json");
  std::vector<Perturbation> perts;
  for (int i = 0; i < 8; ++i) {
    Perturbation p;
    p.relative_magnitude = 0.02;
    p.seed = split_seed(base.seed, 0x726f62ULL, static_cast<std::uint64_t>(i));
    perts.push_back(p);
  }
  const auto wrap = [&base](std::function<void(Checks&, const Config&)> f) {
    return [&base, f](const VectorFieldModel& m) {
      Checks k;
      f(k, with_model(base, m));
      const auto o = k.outcome();
      return CheckOutcome{o.pass, json(o.detail)};
    };
  };
  const std::vector<std::pair<std::string, ModelCheck>> checks = {
      {"1", wrap([](Checks& k, const Config& g) { spectral_oracle(k, g.model); })},
      {"2", wrap([](Checks& k, const Config& g) { dissipativity_arithmetic(k, g, false); })},
      {"5", wrap([](Checks& k, const Config& g) { sectional(k, g, false); })},
      {"6", wrap(cones)},
      {"8", wrap(growth)},
      {"9", wrap(lorenz_expansive)}};
  const auto rep = robustness_sweep(base.model, perts, checks);
  int fails = 0;
  for (const auto& row : rep.rows) {
    std::printf("  %-40s criterion %s: %s  %s\n", row.model_id.c_str(), row.check.c_str(), row.pass ? "pass" : "FAIL",
                row.detail.get<std::string>().c_str());
    if (!row.pass) ++fails;
  }
  std::fflush(stdout);
  c.note(std::to_string(rep.model_ids.size()) + " perturbed models, " + std::to_string(rep.rows.size()) + " checks, " +
         std::to_string(fails) + " failing");
  c.expect(rep.model_ids.size() == 8, "8 perturbed models");
  c.expect(rep.all_pass, "every check passes on every perturbed model");
}

void determinism(Checks& c) {
  const auto a = scratch("all_a"), b = scratch("all_b");
  const std::string cfg = config_path("lorenz.json");
  const int ca = run_cli({"run", "all", "--config", cfg, "--seed", "7", "--out", a.string()});
  const int cb = run_cli({"run", "all", "--config", cfg, "--seed", "7", "--out", b.string()});
  c.expect(ca == cb, "same exit code");
  int files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    if (name == "manifest.json") continue;
    ++files;
    if (!fs::exists(b / name) || slurp(e.path()) != slurp(b / name)) {
      ++differ;
      c.expect(false, "identical " + name.string());
    }
  }
  // The manifest differs only in wall-clock fields.
  json ma = read_json(a / "manifest.json"), mb = read_json(b / "manifest.json");
  for (auto* m : {&ma, &mb})
    for (auto& cmd : (*m)["commands"]) cmd.erase("wall_clock_s");
  c.expect(ma == mb, "manifests agree apart from wall-clock");
  c.note(std::to_string(files) + " report files compared, " + std::to_string(differ) + " differ");
  c.expect(files > 0, "reports written");
}

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<void(Checks&)> run;
};

std::vector<Criterion> criteria() {
  return {
      {1, "spectral oracle", 1, [](Checks& c) { spectral_oracle(c, VectorFieldModel::lorenz()); }},
      {2, "dissipativity arithmetic", 30, [](Checks& c) { dissipativity_arithmetic(c, load("lorenz.json"), true); }},
      {3, "flow fidelity", 120, flow_fidelity},
      {4, "liouville identity", 120, liouville},
      {5, "sectional expansion", 180, [](Checks& c) { sectional(c, load("lorenz.json"), true); }},
      {6, "cone invariance", 180, [](Checks& c) { cones(c, load("lorenz.json")); }},
      {7, "return map", 300, [](Checks& c) { return_map(c, load("lorenz.json")); }},
      {8, "leaf-separation growth", 600, [](Checks& c) { growth(c, load("lorenz.json")); }},
      {9, "expansiveness probes", 1800, expansiveness},
      {10, "robustness sweep", 7200, robustness},
      {11, "determinism", 0, determinism},
  };
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--criterion N]\n");
      return 2;
    }
  }
  bool all_pass = true;
  int ran = 0;
  for (const auto& cr : criteria()) {
    if (only && cr.id != only) continue;
    ++ran;
    Checks c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_s > 0) c.expect(secs < cr.budget_s, "runtime under " + fmt(cr.budget_s) + " s");
    const auto o = c.outcome();
    all_pass = all_pass && o.pass;
    std::printf("criterion %2d %-26s %s  (%.1f s)  %s\n", cr.id, cr.name.c_str(), o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  if (ran == 0) {
    std::fprintf(stderr, "no such criterion\n");
    return 2;
  }
  return all_pass ? 0 : 1;
}
