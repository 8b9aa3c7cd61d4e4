#include "sechyp/expansive.hpp"
#include "sechyp/splitting.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sstream>

using namespace sechyp;
using namespace testing_support;

namespace {

UniformSeries series(const VectorFieldModel& m, const Vec& x0, double T, double dt = 0.01, double tol = 1e-10) {
  return sample_uniform(integrate(m, x0, 0.0, T, tol), dt);
}

std::vector<Vec> disk_sample(int n) {
  Rng rng(4);
  std::vector<Vec> out;
  for (int k = 0; k < n; ++k) out.push_back(v3(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -0.05, 0.05)));
  return out;
}

bool warp_is_staircase(const MatchResult& m, int n) {
  if (m.warp.empty() || m.warp.front() != std::make_pair(0, 0) || m.warp.back() != std::make_pair(n - 1, n - 1))
    return false;
  for (std::size_t k = 1; k < m.warp.size(); ++k) {
    const int di = m.warp[k].first - m.warp[k - 1].first, dj = m.warp[k].second - m.warp[k - 1].second;
    if (di < 0 || dj < 0 || di + dj == 0 || di > 3 || dj > 3) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("expansive") {
  TEST_CASE("identical orbits match under the identity warp") {
    const auto lz = VectorFieldModel::lorenz();
    const auto x = series(lz, lorenz_points()[3], 5.0);
    const auto m = match_orbits(x, x, 20);
    CHECK(m.sup_distance == 0.0);
    for (const auto& [i, j] : m.warp) CHECK(i == j);
    CHECK(warp_is_staircase(m, static_cast<int>(x.samples.size())));
  }

  TEST_CASE("a time shift is recognized as the same orbit") {
    const auto lz = VectorFieldModel::lorenz();
    const Vec x0 = lorenz_points()[10];
    const auto x = series(lz, x0, 5.0);
    const auto y = series(lz, flow_point(lz, x0, 0.1, 1e-12), 5.0);
    MatchOptions o;
    o.eps = 0.5;
    o.delta = 1e-3;
    o.tol = 1e-10;
    const auto m = match_orbits(x, y, 20, o);
    CHECK(m.verdict == Verdict::same_orbit_shift);
    REQUIRE(m.shift.has_value());
    CHECK(std::abs(*m.shift - 0.1) <= x.dt);
  }

  TEST_CASE("concentric circles of a planar center stay close") {
    const auto center = VectorFieldModel::center_contraction(1.0, 1.0);
    const auto x = series(center, v3(1, 0, 0), 20.0);
    const auto y = series(center, v3(1.01, 0, 0), 20.0);
    MatchOptions o;
    o.delta = 0.011;
    o.eps = 0.5;
    const auto m = match_orbits(x, y, 20, o);
    CHECK(m.sup_distance <= 0.0101);
    CHECK(m.identity_sup <= 0.0101);
    CHECK(m.verdict == Verdict::stayed_close);
  }

  TEST_CASE("grid mismatch is an input error") {
    const auto lz = VectorFieldModel::lorenz();
    const auto a = series(lz, lorenz_points()[0], 2.0, 0.01);
    const auto b = series(lz, lorenz_points()[0], 2.0, 0.02);
    const auto c = series(lz, lorenz_points()[0], 1.0, 0.01);
    CHECK_THROWS_AS(match_orbits(a, b, 20), InputError);
    CHECK_THROWS_AS(match_orbits(a, c, 20), InputError);
    CHECK_THROWS_AS(match_orbits(a, a, 0), InputError);
  }

  TEST_CASE("optimal warp never beats the identity by losing") {
    const auto lz = VectorFieldModel::lorenz();
    Rng rng(12);
    for (int k = 0; k < 10; ++k) {
      const Vec x0 = lorenz_points()[static_cast<std::size_t>(100 * k)];
      const Vec y0 = x0 + 1e-3 * random_unit(rng, 3);
      const auto x = series(lz, x0, 10.0), y = series(lz, y0, 10.0);
      const auto m = match_orbits(x, y, 20);
      CHECK(m.sup_distance <= m.identity_sup);
      CHECK(warp_is_staircase(m, static_cast<int>(x.samples.size())));
    }
  }

  TEST_CASE("a pair on one orbit is never a counterexample") {
    const auto lz = VectorFieldModel::lorenz();
    for (int k = 0; k < 5; ++k) {
      const Vec x0 = lorenz_points()[static_cast<std::size_t>(300 * k + 5)];
      const auto x = series(lz, x0, 60.0, 0.01, 1e-9);
      const auto y = series(lz, flow_point(lz, x0, 0.1, 1e-12), 60.0, 0.01, 1e-9);
      MatchOptions o;
      o.eps = 0.5;
      o.delta = 1.0;
      const auto m = match_orbits(x, y, 20, o);
      CHECK(m.verdict == Verdict::same_orbit_shift);
    }
  }

  TEST_CASE("the center control has counterexamples at every delta") {
    const auto center = VectorFieldModel::center_contraction(1.0, 1.0);
    const std::vector<double> grid = {0.001, 0.01, 0.05, 0.1};
    const auto rep = expansiveness_probe(center, disk_sample(500), 0.5, grid, 12, 50.0, true, 3);
    CHECK_FALSE(rep.passed());
    CHECK_FALSE(rep.delta_star.has_value());
    CHECK(rep.message == "no tested delta certifies expansiveness");
    for (const auto& s : rep.per_delta) CHECK(s.counterexamples > 0);

    // a counterexample at delta stays one at every larger delta
    for (std::size_t k = 0; k < rep.counterexamples.size(); k += 7) {
      const auto& ce = rep.counterexamples[k];
      const auto x = series(center, ce.x, 50.0, 0.01, 1e-9), y = series(center, ce.y, 50.0, 0.01, 1e-9);
      for (double delta : grid) {
        if (delta < ce.delta) continue;
        MatchOptions o;
        o.eps = 0.5;
        o.delta = delta;
        CHECK(match_orbits(x, y, 20, o).verdict == Verdict::stayed_close);
      }
    }
  }

  TEST_CASE("counterexamples replay from their seeds") {
    const auto center = VectorFieldModel::center_contraction(1.0, 1.0);
    const auto sample = disk_sample(500);
    const auto rep = expansiveness_probe(center, sample, 0.5, {0.01}, 8, 50.0, true, 9);
    REQUIRE_FALSE(rep.counterexamples.empty());
    for (const auto& ce : rep.counterexamples) {
      const auto again = replay_pair(center, sample, 0.5, ce.delta, 50.0, true, ce.pair_seed, ce.pair_index, {}, false);
      CHECK(again.verdict == ce.verdict);
      CHECK(again.x == ce.x);
      CHECK(again.y == ce.y);
      CHECK(again.stratum == ce.stratum);
    }
  }

  TEST_CASE("lorenz forward probe finds no counterexample") {
    const auto lz = VectorFieldModel::lorenz();
    const auto rep = expansiveness_probe(lz, lorenz_points(), 0.5, {0.001, 0.01}, 60, 50.0, true, 1);
    CHECK(rep.passed());
    REQUIRE(rep.delta_star.has_value());
    CHECK(*rep.delta_star == 0.01);
    const auto wider = expansiveness_probe(lz, lorenz_points(), 1.0, {0.001, 0.01}, 60, 50.0, true, 1);
    CHECK(wider.delta_star.value_or(0.0) >= rep.delta_star.value_or(0.0));
  }

  TEST_CASE("probe preconditions") {
    const auto lz = VectorFieldModel::lorenz();
    CHECK_THROWS_AS(expansiveness_probe(lz, lorenz_points(), 0.0, {0.01}, 1, 50.0, true, 0), PreconditionError);
    CHECK_THROWS_AS(expansiveness_probe(lz, lorenz_points(), 0.5, {0.01}, 1, 10.0, true, 0), PreconditionError);
    CHECK_THROWS_AS(expansiveness_probe(lz, lorenz_points(), 0.5, {0.1, 0.01}, 1, 50.0, true, 0), PreconditionError);
  }

  TEST_CASE("chaos probe") {
    const auto sink = VectorFieldModel::diagonal({-1.0, -1.0, -1.0});
    const auto none = chaos_probe(sink, disk_sample(100), 1.0, 20, 1e-4, 50.0, Direction::future, 1);
    CHECK(none.witness_fraction == 0.0);

    const auto lz = VectorFieldModel::lorenz();
    const auto both = chaos_probe(lz, lorenz_points(), 1.0, 10, 1e-4, 50.0, Direction::both, 2);
    CHECK(both.witness_fraction == 1.0);
    CHECK(both.witness_fraction >= 0.0);

    // past on G equals future on -G
    const auto past = chaos_probe(lz, lorenz_points(), 1.0, 5, 1e-4, 20.0, Direction::past, 7);
    const auto fut = chaos_probe(lz.negated(), lorenz_points(), 1.0, 5, 1e-4, 20.0, Direction::future, 7);
    CHECK(past.witnessed == fut.witnessed);
    CHECK(past.witness_time == fut.witness_time);
    CHECK_THROWS_AS(chaos_probe(lz, lorenz_points(), 0.0, 5, 1e-4, 20.0, Direction::past, 7), PreconditionError);
  }

  TEST_CASE("backward separation along the stable direction") {
    const auto lz = VectorFieldModel::lorenz();
    const Vec x = lorenz_points()[77];
    const auto s = finite_time_splitting(lz, x, 1, 5.0);
    const auto t = separation_time(lz.negated(), x, x + 1e-5 * s.E_s.col(0), 1.0, 5.0);
    REQUIRE(t.has_value());
    // log(1 / 1e-5) / 14.57 is about 0.8
    CHECK(*t < 2.0);
  }

  TEST_CASE("robustness sweep") {
    const auto lz = VectorFieldModel::lorenz();
    const ModelCheck sigma_check = [](const VectorFieldModel& m) {
      return CheckOutcome{m.param("sigma") > 9.0, {{"sigma", m.param("sigma")}}};
    };
    const ModelCheck throws = [](const VectorFieldModel&) -> CheckOutcome { throw NumericError("boom"); };
    std::vector<Perturbation> zero(2, Perturbation{0.0, 1, PerturbationMode::parameter_scale, {}});
    const auto base = robustness_sweep(lz, zero, {{"sigma", sigma_check}});
    CHECK(base.all_pass);
    for (const auto& row : base.rows) CHECK(row.detail["sigma"] == 10.0);

    const auto failing = robustness_sweep(lz, zero, {{"throws", throws}});
    CHECK_FALSE(failing.all_pass);
    CHECK(failing.rows[0].detail.contains("error"));

    std::istringstream in(summary_csv(base));
    std::string header;
    std::getline(in, header);
    CHECK(header == "check,model_id,pass");

    std::vector<Perturbation> big(1, Perturbation{0.06, 1, PerturbationMode::parameter_scale, {}});
    CHECK_THROWS_AS(robustness_sweep(lz, big, {{"sigma", sigma_check}}), PreconditionError);
  }

  TEST_CASE("reports serialize") {
    const auto center = VectorFieldModel::center_contraction(1.0, 1.0);
    const auto rep = expansiveness_probe(center, disk_sample(100), 0.5, {0.01}, 4, 50.0, true, 1);
    const auto j = to_json(rep);
    CHECK(nlohmann::json::parse(j.dump()) == j);
    CHECK(j.at("delta_star") == "none");
  }
}
