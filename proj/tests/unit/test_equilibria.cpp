#include "sechyp/equilibria.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace sechyp;
using namespace testing_support;

namespace {

// Closed-form Lorenz origin spectrum: -beta and the roots of l^2 + (s+1) l - s (r-1).
std::vector<double> lorenz_origin_spectrum(double s, double r, double b) {
  const double disc = std::sqrt((s + 1) * (s + 1) + 4 * s * (r - 1));
  std::vector<double> ev = {-b, (-(s + 1) - disc) / 2, (-(s + 1) + disc) / 2};
  std::sort(ev.begin(), ev.end());
  return ev;
}

const Box kLorenzBox{v3(-30, -30, -30), v3(30, 30, 30)};

}  // namespace

TEST_SUITE("equilibria") {
  TEST_CASE("lorenz has the three closed-form equilibria") {
    const auto lz = VectorFieldModel::lorenz();
    const auto roots = find_equilibria(lz, kLorenzBox, 200, 0);
    REQUIRE(roots.size() == 3);
    const double c = std::sqrt(8.0 / 3.0 * 27.0);
    std::vector<Vec> expect = {v3(-c, -c, 27), v3(0, 0, 0), v3(c, c, 27)};
    for (int i = 0; i < 3; ++i) {
      CHECK((roots[static_cast<std::size_t>(i)] - expect[static_cast<std::size_t>(i)]).norm() < 1e-9);
      CHECK(lz.field(roots[static_cast<std::size_t>(i)]).norm() < 1e-12);
    }
  }

  TEST_CASE("single equilibria") {
    const auto lin = VectorFieldModel::diagonal({-1.0, 2.0});
    const auto r1 = find_equilibria(lin, {Vec::Constant(2, -3), Vec::Constant(2, 3)}, 50, 0);
    REQUIRE(r1.size() == 1);
    CHECK(r1[0].norm() < 1e-12);
    const auto r2 = find_equilibria(VectorFieldModel::lorenz(10, 0.5, 8.0 / 3.0), kLorenzBox, 200, 0);
    REQUIRE(r2.size() == 1);
    CHECK(r2[0].norm() < 1e-10);
  }

  TEST_CASE("lorenz origin classification") {
    const auto rep = classify_equilibrium(VectorFieldModel::lorenz(), v3(0, 0, 0), 1);
    const auto ev = lorenz_origin_spectrum(10, 28, 8.0 / 3.0);
    REQUIRE(rep.eigenvalues.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(rep.eigenvalues[static_cast<std::size_t>(i)].real() - ev[static_cast<std::size_t>(i)]) < 1e-9);
      CHECK(std::abs(rep.eigenvalues[static_cast<std::size_t>(i)].imag()) < 1e-12);
    }
    CHECK(rep.hyperbolic);
    CHECK(rep.index == 2);
    CHECK(rep.lorenz_like);
    REQUIRE(rep.lambda_s.has_value());
    REQUIRE(rep.lambda_u.has_value());
    CHECK(*rep.lambda_s == doctest::Approx(-8.0 / 3.0));
    CHECK(*rep.lambda_u == doctest::Approx(11.8277).epsilon(1e-5));
    CHECK(-*rep.lambda_u < *rep.lambda_s);
    CHECK(rep.residual < 1e-10);
    double trace = 0;
    for (const auto& l : rep.eigenvalues) trace += l.real();
    CHECK(std::abs(trace + 41.0 / 3.0) < 1e-9);
  }

  TEST_CASE("sink and diagonal classification") {
    const auto sink = classify_equilibrium(VectorFieldModel::lorenz(10, 0.5, 8.0 / 3.0), v3(0, 0, 0), 1);
    CHECK(sink.index == 3);
    CHECK_FALSE(sink.lorenz_like);
    for (const auto& l : sink.eigenvalues) CHECK(l.real() < 0);

    const auto diag = classify_equilibrium(VectorFieldModel::diagonal({-2.0, -1.0, 3.0}), v3(0, 0, 0), 1);
    CHECK(*diag.lambda_s == -1.0);
    CHECK(*diag.lambda_u == 3.0);
    CHECK(diag.lorenz_like);

    const auto center = classify_equilibrium(VectorFieldModel::center_contraction(), v3(0, 0, 0), 1);
    CHECK_FALSE(center.hyperbolic);
    CHECK_FALSE(center.lorenz_like);

    CHECK_THROWS_AS(classify_equilibrium(VectorFieldModel::lorenz(), v3(1, 1, 1), 1), PreconditionError);
  }

  TEST_CASE("complex weak-stable pair is not lorenz-like") {
    Mat A(3, 3);
    A << -1, -2, 0, 2, -1, 0, 0, 0, 3;
    const auto rep = classify_equilibrium(VectorFieldModel::linear(A), v3(0, 0, 0), 1);
    CHECK(rep.hyperbolic);
    CHECK_FALSE(rep.lorenz_like);
  }

  TEST_CASE("spectrum of linear fields and coordinate relabeling") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
      Mat A(4, 4);
      for (int i = 0; i < 16; ++i) A(i / 4, i % 4) = uniform(rng, -3, 3);
      const auto rep = classify_equilibrium(VectorFieldModel::linear(A), Vec::Zero(4), 1);
      const Eigen::EigenSolver<Mat> es(A);
      std::vector<std::complex<double>> oracle(es.eigenvalues().data(), es.eigenvalues().data() + 4);
      const auto key = [](const std::complex<double>& a, const std::complex<double>& b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
      };
      std::sort(oracle.begin(), oracle.end(), key);
      for (int i = 0; i < 4; ++i) CHECK(std::abs(rep.eigenvalues[static_cast<std::size_t>(i)] - oracle[static_cast<std::size_t>(i)]) < 1e-10);
    }
    const auto lz = VectorFieldModel::lorenz();
    const auto base = classify_equilibrium(lz, v3(0, 0, 0), 1);
    const std::vector<std::vector<int>> perms = {{1, 0, 2}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& perm : perms) {
      const auto rep = classify_equilibrium(lz.permuted(perm), v3(0, 0, 0), 1);
      for (int i = 0; i < 3; ++i)
        CHECK(std::abs(rep.eigenvalues[static_cast<std::size_t>(i)] - base.eigenvalues[static_cast<std::size_t>(i)]) < 1e-9);
    }
  }

  TEST_CASE("dissipativity condition (a) arithmetic") {
    const auto rep = classify_equilibrium(VectorFieldModel::lorenz(), v3(0, 0, 0), 1);
    const auto ev = lorenz_origin_spectrum(10, 28, 8.0 / 3.0);
    CHECK(cond_a_value(rep.eigenvalues, 1, 1.2) == doctest::Approx(ev[0] - ev[1] + 1.2 * ev[2]));
    CHECK(std::abs(cond_a_value(rep.eigenvalues, 1, 1.2) + 5.9679) < 1e-3);
    CHECK(std::abs(cond_a_value(rep.eigenvalues, 1, 2.0) - 3.4944) < 1e-3);
    // affine, strictly increasing in q
    const double a1 = cond_a_value(rep.eigenvalues, 1, 1.1), a2 = cond_a_value(rep.eigenvalues, 1, 1.3),
                 a3 = cond_a_value(rep.eigenvalues, 1, 1.5);
    CHECK(a2 > a1);
    CHECK(a3 - a2 == doctest::Approx(a2 - a1));
  }

  TEST_CASE("strong dissipativity on the lorenz sample") {
    const auto lz = VectorFieldModel::lorenz();
    const auto sample = attractor_sample(lz, v3(1, 1, 20), 50.0, 10000, 0.05);
    DissipativityOptions o;
    o.equilibria = {v3(0, 0, 0)};
    o.search_equilibria = false;
    const auto rep = strong_dissipativity(lz, 1, 1.2, sample, o);
    REQUIRE(rep.cond_a.size() == 1);
    CHECK(std::abs(rep.cond_a[0].value + 5.9679) < 1e-3);
    CHECK(rep.passed());
    REQUIRE(rep.q_max_a.has_value());
    CHECK(std::abs(*rep.q_max_a - 1.7047) < 1e-3);
    // Frozen regression bands from the first measured run.
    CHECK(std::abs(rep.cond_b + 5.9206) < 0.05);
    REQUIRE(rep.q_max.has_value());
    CHECK(std::abs(*rep.q_max - 1.35286) < 0.01);
    CHECK(std::abs(*rep.q_max - std::min(*rep.q_max_a, *rep.q_max_b)) < 2e-4);

    // q_max passes both conditions just below and fails one just above.
    const auto check_q = [&](double q) {
      bool ok = cond_a_value(classify_equilibrium(lz, v3(0, 0, 0), 1).eigenvalues, 1, q) < 0;
      for (const auto& x : sample) ok = ok && cond_b_value(lz, x, 1, q) < 0;
      return ok;
    };
    CHECK(check_q(*rep.q_max - 1e-6));
    CHECK_FALSE(check_q(*rep.q_max + 1e-3));
    CHECK_THROWS_AS(strong_dissipativity(lz, 1, 1.0, sample, o), PreconditionError);
  }

  TEST_CASE("dissipativity reports serialize with their field names") {
    const auto lz = VectorFieldModel::lorenz();
    const auto sample = every_nth(lorenz_points(), 10, 200);
    const auto j = to_json(strong_dissipativity(lz, 1, 1.2, sample));
    for (const char* key : {"d_s", "q", "cond_a", "cond_b", "q_max"}) CHECK(j.contains(key));
    const auto e = to_json(classify_equilibrium(lz, v3(0, 0, 0), 1));
    for (const char* key : {"position", "eigenvalues", "hyperbolic", "index", "lorenz_like", "lambda_s", "lambda_u", "residual"})
      CHECK(e.contains(key));
    CHECK(nlohmann::json::parse(e.dump()) == e);
  }
}
