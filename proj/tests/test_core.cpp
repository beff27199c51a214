#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "grushin/core.hpp"

using namespace grushin;

TEST_CASE("torus grid rejects odd or tiny sizes") {
  CHECK_THROWS(TorusGrid(5, 8));
  CHECK_THROWS(TorusGrid(2, 8));
  TorusGrid g(8, 16);
  CHECK(g.x(0) == doctest::Approx(-kPi));
  CHECK(g.dy() == doctest::Approx(kTwoPi / 16));
}

TEST_CASE("hermite functions are orthonormal under the Gauss rule") {
  const int K = 12;
  auto gh = gauss_hermite(K + 10);
  for (int a = 0; a <= K; ++a)
    for (int b = 0; b <= K; ++b) {
      double s = 0;
      for (std::size_t m = 0; m < gh.nodes.size(); ++m) {
        auto psi = hermite_functions(K, gh.nodes[m]);
        s += gh.scaled_weights[m] * psi[a] * psi[b];
      }
      CHECK(s == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10).scale(1.0));
    }
}

TEST_CASE("scaled hermite function is normalized and solves the oscillator") {
  const double eta = 2.5;
  for (int k : {0, 1, 4}) {
    double s = 0, dx = 1e-3;
    for (double x = -10; x <= 10; x += dx) s += std::pow(hermite_function(k, eta, x), 2) * dx;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-8));
    // -f'' + eta^2 x^2 f = eta (2k+1) f at a sample point
    double x = 0.37, e = 1e-4;
    double f = hermite_function(k, eta, x);
    double f2 = (hermite_function(k, eta, x + e) - 2 * f + hermite_function(k, eta, x - e)) / (e * e);
    CHECK(-f2 + eta * eta * x * x * f == doctest::Approx(eta * (2 * k + 1) * f).epsilon(1e-5));
  }
}

TEST_CASE("canonical potential normalization") {
  auto p = Potential::canonical();
  CHECK(p.value(0.0) == 0.0);
  CHECK(p.d1(0.0) == doctest::Approx(0.0));
  CHECK(p.d2(0.0) == doctest::Approx(2.0));
  CHECK(p.value(kPi) == doctest::Approx(4.0));
  CHECK(p.mean() == doctest::Approx(2.0));
  auto t = p.taylor(4);
  CHECK(t[2] == doctest::Approx(1.0));
  CHECK(t[4] == doctest::Approx(-1.0 / 12.0));
  CHECK_NOTHROW(p.validate());
  CHECK_THROWS_AS(Potential::from_cos_series({1.0}).validate(), ConfigError);
  auto q = Potential::from_json(p.to_json());
  CHECK(q.value(1.3) == doctest::Approx(p.value(1.3)));
}

TEST_CASE("strip damping values and regularity") {
  auto b = DampingProfile::strip(5, 1.0, 0.5);
  CHECK(b(0.3, 0.5) == 0.0);
  CHECK(b(0.3, 0.9) == 0.0);
  CHECK(b(0.3, 1.2) == doctest::Approx(std::pow(0.2, 5)));
  CHECK(b(0.0, -1.2) == doctest::Approx(std::pow(0.2, 5)));
  CHECK(b.y_only());
  CHECK(b.even_y());
  // C^1 across the end of the power law and positive plateau
  double e = 1e-6, yr = 1.5;
  double l = (b(0, yr) - b(0, yr - e)) / e, r = (b(0, yr + e) - b(0, yr)) / e;
  CHECK(l == doctest::Approx(r).epsilon(1e-4));
  CHECK(b(0, kPi) == doctest::Approx(b.plateau()));
  // dy against finite differences
  for (double y : {1.1, 1.7, 2.5}) CHECK(b.dy(0, y) == doctest::Approx((b(0, y + e) - b(0, y - e)) / (2 * e)).epsilon(1e-5));
}

TEST_CASE("finite type damping vanishes to order nu at y0") {
  auto b = DampingProfile::finite_type(6, 0.0, 2.5);
  CHECK(b(1.0, 0.0) == 0.0);
  CHECK(b(0.0, 0.3) == doctest::Approx(std::pow(0.3, 6)));
  CHECK(b(0.0, -0.3) == doctest::Approx(std::pow(0.3, 6)));
  auto off = DampingProfile::finite_type(4, 0.5, 1.0);
  CHECK_FALSE(off.even_y());
}

TEST_CASE("property: damping profiles are nonnegative and periodic") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  std::vector<DampingProfile> ds = {DampingProfile::egcc_bump(),      DampingProfile::smooth_strip(),
                                    DampingProfile::strip(5, 1, 2.0), DampingProfile::finite_type(6, 0, 2.5),
                                    DampingProfile::egcc_trig(),      DampingProfile::constant(0.3)};
  for (const auto& d : ds)
    for (int i = 0; i < 200; ++i) {
      double x = u(rng), y = u(rng);
      CHECK(d(x, y) >= 0.0);
      CHECK(d(x + kTwoPi, y) == doctest::Approx(d(x, y)).epsilon(1e-12).scale(1.0));
      CHECK(d(x, y - kTwoPi) == doctest::Approx(d(x, y)).epsilon(1e-12).scale(1.0));
      auto r = DampingProfile::from_json(d.to_json());
      CHECK(r(x, y) == doctest::Approx(d(x, y)));
    }
}

TEST_CASE("egcc trig vanishes only at the origin") {
  auto b = DampingProfile::egcc_trig();
  CHECK(b(0, 0) == 0.0);
  CHECK(b(0.5, 0) > 0.0);
  CHECK(b(0, 0.5) > 0.0);
  CHECK(b(kPi, kPi) == doctest::Approx(1.0));
}

TEST_CASE("cutoffs") {
  CHECK(smooth_step(-1) == 0.0);
  CHECK(smooth_step(2) == 1.0);
  CHECK(smooth_step(0.5) == doctest::Approx(0.5));
  CHECK(chi0(0.4) == 1.0);
  CHECK(chi0(1.1) == 0.0);
  CHECK(chi1(1.0) == 1.0);
  CHECK(chi1(0.4) == 0.0);
  CHECK(chi1(2.5) == 0.0);
  CHECK(upsilon(1.0, 4.0) == 1.0);
  CHECK(plateau_bump(0.5, 0, 0.2, 0.8, 1) == 1.0);
  CHECK(plateau_bump(1.5, 0, 0.2, 0.8, 1) == 0.0);
}
