#include "sechyp/equilibria.hpp"
#include "sechyp/section.hpp"
#include "sechyp/splitting.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <sstream>

using namespace sechyp;
using namespace testing_support;

namespace {

const VectorFieldModel& lorenz() {
  static const auto m = VectorFieldModel::lorenz();
  return m;
}

CrossSection z27(int orientation) {
  return make_section(lorenz(), v3(0, 0, 27), (Vec(2) << 20, 20).finished(), orientation, v3(0, 0, 1), "z27");
}

/// n accepted crossings of the z = 27 section from the attracting set. A miss
/// restarts from the next attractor point and is counted in `misses`.
std::vector<ReturnRecord> crossings(int orientation, int n, int* misses = nullptr) {
  const auto s = z27(orientation);
  ReturnOptions first_opts;
  first_opts.T_max = 50;
  std::vector<ReturnRecord> out;
  std::size_t start = 0;
  int missed = 0;
  Vec cur;
  bool need_start = true;
  while (static_cast<int>(out.size()) < n) {
    if (need_start) {
      const auto first = first_return(lorenz(), {s}, lorenz_points()[start], first_opts);
      start = (start + 13) % lorenz_points().size();
      if (first.miss) continue;
      cur = first.Rx;
      need_start = false;
    }
    const auto r = first_return(lorenz(), {s}, cur, ReturnOptions{});
    if (r.miss) {
      CHECK(r.reason == MissReason::exceeded_T_max);
      ++missed;
      need_start = true;
      continue;
    }
    out.push_back(r);
    cur = r.Rx;
  }
  if (misses) *misses = missed;
  return out;
}

double band_fraction(const std::vector<ReturnRecord>& recs, double lo, double hi) {
  int in = 0, total = 0;
  for (const auto& r : recs) {
    if (r.miss) continue;
    ++total;
    in += (r.tau >= lo && r.tau <= hi) ? 1 : 0;
  }
  return static_cast<double>(in) / std::max(1, total);
}

/// Section points on the attracting set, inside the inner box.
std::vector<Vec> section_points(int n) {
  const auto recs = crossings(-1, n + 30);
  std::vector<Vec> out;
  const auto s = z27(-1);
  for (std::size_t k = 20; k < recs.size() && static_cast<int>(out.size()) < n; ++k)
    if (!recs[k].miss && s.in_box(recs[k].Rx, 0.5)) out.push_back(recs[k].Rx);
  return out;
}

}  // namespace

TEST_SUITE("section") {
  TEST_CASE("section construction") {
    const auto flow_orth = make_section(lorenz(), v3(0, 0, 27), (Vec(2) << 20, 20).finished(), 1);
    CHECK((flow_orth.normal - v3(0, 0, -1)).norm() < 1e-12);
    const auto s = z27(1);
    CHECK((s.frame.transpose() * s.normal).norm() < 1e-12);
    CHECK((s.frame.transpose() * s.frame - Mat::Identity(2, 2)).norm() < 1e-12);
    CHECK(s.a0 == 0.75);
    CHECK((s.embed(s.coords(v3(3, -4, 27))) - v3(3, -4, 27)).norm() < 1e-12);
    CHECK_THROWS_AS(make_section(lorenz(), v3(0, 0, 0), (Vec(2) << 1, 1).finished(), 1), PreconditionError);
    CHECK_THROWS_AS(make_section(lorenz(), v3(0, 0, 27), (Vec(2) << 1, 1).finished(), 1, v3(1, 0, 0)),
                    PreconditionError);
  }

  TEST_CASE("sections from json") {
    const auto j = nlohmann::json::parse(
        R"([{"point":[0,0,27],"normal":[0,0,1],"half_widths":[20,20],"orientation":-1,"id":"a"}])");
    const auto secs = sections_from_json(lorenz(), j);
    REQUIRE(secs.size() == 1);
    CHECK(secs[0].orientation == -1);
    CHECK(secs[0].id == "a");
    CHECK_THROWS_AS(sections_from_json(lorenz(), nlohmann::json::parse(R"([{"point":[0,0]}])")), InputError);
  }

  TEST_CASE("return records satisfy residual, orientation and T1 bounds") {
    for (int orientation : {-1, 0, 1}) {
      const auto s = z27(orientation);
      int misses = 0;
      const auto recs = crossings(orientation, 300, &misses);
      for (const auto& r : recs) {
        CHECK(std::abs(s.height(r.Rx)) < 1e-7);
        CHECK(r.tau >= 0.1);
        const int sign = lorenz().field(r.Rx).dot(s.normal) > 0 ? 1 : -1;
        CHECK(r.sign == sign);
        if (orientation != 0) CHECK(r.sign == orientation);
      }
      // Downward crossings near the wing centres always land in the inner box.
      if (orientation == -1) CHECK(misses == 0);
    }
  }

  TEST_CASE("return time bands per orientation") {
    // Measured on 1000 crossings and frozen. Only downward crossings keep
    // 95% of return times inside [0.3, 1.5]: upward crossings often leave the
    // inner box, and mixed orientations add short half-loop returns.
    CHECK(band_fraction(crossings(-1, 1000), 0.3, 1.5) >= 0.95);
    const double up = band_fraction(crossings(1, 1000), 0.3, 1.5);
    CHECK(up > 0.66);
    CHECK(up < 0.76);
    const double both = band_fraction(crossings(0, 1000), 0.3, 1.5);
    CHECK(both > 0.81);
    CHECK(both < 0.91);
  }

  TEST_CASE("return time additivity") {
    const auto s = z27(-1);
    const Vec x = section_points(1).front();
    const auto r1 = first_return(lorenz(), {s}, x);
    const auto r2 = first_return(lorenz(), {s}, r1.Rx);
    const Vec direct = flow_point(lorenz(), x, r1.tau + r2.tau, 1e-11);
    CHECK((direct - r2.Rx).norm() < 1e-6);
  }

  TEST_CASE("the trivial crossing at t = 0 is excluded") {
    const auto s = z27(0);
    const Vec x = section_points(1).front();
    const auto r = first_return(lorenz(), {s}, x, 0.1, 20.0, 1e-9);
    CHECK(r.tau >= 0.1);
    CHECK_THROWS_AS(first_return(lorenz(), {s}, x, 0.0, 20.0, 1e-9), PreconditionError);
  }

  TEST_CASE("a point on the stable manifold of the origin does not return quickly") {
    const auto sigma = classify_equilibrium(lorenz(), v3(0, 0, 0), 1);
    const auto split = finite_time_splitting(lorenz(), v3(0, 0, 1e-9), 1, 2.0);
    const Vec x = 1e-6 * split.E_s.col(0);
    ReturnOptions o;
    o.equilibria = {sigma.position};
    // An absolute 1e-9 step error is 1e-3 of the offset; use the roof-fit tolerance.
    o.tol = 1e-10;
    const auto r = first_return(lorenz(), {z27(0)}, x, o);
    CHECK((r.miss || r.tau > 10.0));
  }

  TEST_CASE("roof law near the stable-manifold trace") {
    const auto sigma = classify_equilibrium(lorenz(), v3(0, 0, 0), 1);
    const auto fit = roof_fit(lorenz(), {z27(-1)}, 0, sigma);
    CHECK(fit.fitted);
    CHECK(fit.R2 > 0.9);
    CHECK(fit.R2 <= 1.0);
    CHECK(fit.C > 0.0);
    // the slope is close to 1 / lambda_u
    CHECK(std::abs(fit.C - 1.0 / *sigma.lambda_u) < 0.01);
    for (const auto& smp : fit.samples)
      if (smp.used) CHECK(smp.tau > 0.1 + 2.0);

    RoofOptions far;
    far.distances = {0.5, 0.3, 0.2, 0.15, 0.12, -0.12, -0.15, -0.2, -0.3, -0.5};
    const auto bounded = roof_fit(lorenz(), {z27(-1)}, 0, sigma, far);
    CHECK_FALSE(bounded.fitted);
    CHECK(bounded.flag == "bounded regime, tau <= T1+2 band");

    const auto sink = VectorFieldModel::lorenz(10, 0.5, 8.0 / 3.0);
    const auto sink_sigma = classify_equilibrium(sink, v3(0, 0, 0), 1);
    CHECK_THROWS_AS(roof_fit(sink, {make_section(sink, v3(1, 0, 0), (Vec(2) << 1, 1).finished(), 0)}, 0, sink_sigma),
                    PreconditionError);
  }

  TEST_CASE("stable leaf distance") {
    const auto s = z27(-1);
    const auto pts = section_points(60);
    std::vector<double> ratios;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const Vec& x = pts[k];
      CHECK(stable_leaf_distance(s, x, x, lorenz(), 1).value == 0.0);
      const auto f = leaf_frame(s, lorenz(), x, 1);
      const Vec on = s.embed(f.center + 1e-4 * f.leaf.col(0));
      CHECK(stable_leaf_distance(s, x, on, lorenz(), 1).value < 1e-6);
      const double off = 1e-3 * (1 + static_cast<double>(k % 5));
      const Vec y = s.embed(f.center + off * f.transverse.col(0));
      const double d = stable_leaf_distance(s, x, y, lorenz(), 1).value;
      CHECK(std::abs(d - off) <= 0.1 * off);
      CHECK(stable_leaf_distance(s, y, x, lorenz(), 1).value == d);
      ratios.push_back(d / off);
    }
    // Comparison constants L <= d / d_e <= K, frozen from the first measurement.
    const double L = *std::min_element(ratios.begin(), ratios.end());
    const double K = *std::max_element(ratios.begin(), ratios.end());
    CHECK(L > 0.99);
    CHECK(K <= 1.0 + 1e-9);
    CHECK(K / L < 10.0);
  }

  TEST_CASE("leaf separation growth") {
    const auto s = z27(-1);
    const std::vector<CrossSection> secs = {s};
    const auto pts = section_points(20);
    GrowthOptions o;
    o.delta_sep = 0.5;

    const auto same = leaf_separation_growth(lorenz(), secs, pts[0], pts[0], 5, o);
    for (double d : same.distances) CHECK(d == 0.0);

    for (int k = 0; k < 5; ++k) {
      const Vec& x = pts[static_cast<std::size_t>(k)];
      const auto f = leaf_frame(s, lorenz(), x, 1);
      const Vec on = s.embed(f.center + 1e-8 * f.leaf.col(0));
      const auto g = leaf_separation_growth(lorenz(), secs, x, on, 5, o);
      REQUIRE(g.distances.size() == 6);
      for (double d : g.distances) CHECK(d < 1e-6);
      for (double fct : g.factors) CHECK(fct <= 1.0 + 1e-3);
    }

    std::vector<double> medians;
    for (int k = 5; k < 20; ++k) {
      const Vec& x = pts[static_cast<std::size_t>(k)];
      const auto f = leaf_frame(s, lorenz(), x, 1);
      const Vec y = s.embed(f.center + 1e-4 * f.transverse.col(0));
      const auto g = leaf_separation_growth(lorenz(), secs, x, y, 60, o);
      CHECK(g.separated);
      medians.push_back(g.median_factor);
    }
    std::sort(medians.begin(), medians.end());
    CHECK(medians[medians.size() / 2] > 1.2);

    const auto f = leaf_frame(s, lorenz(), pts[0], 1);
    CHECK_THROWS_AS(leaf_separation_growth(lorenz(), secs, pts[0], s.embed(f.center + 0.5 * f.transverse.col(0)), 5, o),
                    PreconditionError);
    CHECK_THROWS_AS(leaf_separation_growth(lorenz(), secs, pts[0], v3(0, 0, 0), 5, o), PreconditionError);
  }

  TEST_CASE("quotient map expansion and its stable control") {
    const std::vector<CrossSection> secs = {z27(-1)};
    QuotientOptions o;
    o.start = lorenz_points()[0];
    const auto rep = quotient_expansion(lorenz(), secs, 200, 1, o);
    CHECK(rep.mu_hat > 1.0);
    CHECK(rep.n_used >= 100);
    o.alignment = Alignment::stable;
    const auto ctrl = quotient_expansion(lorenz(), secs, 100, 2, o);
    CHECK(*std::max_element(ctrl.factors.begin(), ctrl.factors.end()) < 1.0);
    o.offset = 0.0;
    CHECK_THROWS_AS(quotient_expansion(lorenz(), secs, 10, 1, o), PreconditionError);
  }

  TEST_CASE("returns csv and json shapes") {
    const auto recs = crossings(-1, 3);
    std::istringstream in(returns_csv(recs));
    std::string header;
    std::getline(in, header);
    CHECK(header == "entry_section,exit_section,x1,x2,x3,Rx1,Rx2,Rx3,tau,miss,reason");
    const auto j = to_json(recs.front());
    CHECK(nlohmann::json::parse(j.dump()) == j);
  }
}
