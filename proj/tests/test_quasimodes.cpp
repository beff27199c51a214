#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "grushin/quasimodes.hpp"
#include "grushin/resolvent.hpp"

using namespace grushin;

namespace {

SubellipticQuasimodeSpec outside_spec(DampingProfile d = DampingProfile::smooth_strip()) {
  SubellipticQuasimodeSpec s;
  s.regime = QuasimodeRegime::outside_damping;
  s.damping = d;
  s.y0 = 0.0;
  return s;
}

SubellipticQuasimodeSpec strip_spec() {
  SubellipticQuasimodeSpec s;
  s.regime = QuasimodeRegime::within_damping_strip;
  s.damping = DampingProfile::strip(5, 1.0, 2.0);
  return s;
}

SubellipticQuasimodeSpec narrow_spec() {
  SubellipticQuasimodeSpec s;
  s.regime = QuasimodeRegime::within_damping_narrow;
  s.damping = DampingProfile::finite_type(6, 0.0, 2.5);
  return s;
}

double slope(const std::vector<double>& h, const std::vector<double>& r) { return -fit_exponent(h, r).slope; }

}  // namespace

// ---------------------------------------------------------------- weight

TEST_CASE("undamped weight is the normalized window") {
  auto s = outside_spec(DampingProfile::constant(0.0));
  auto W = build_weight(s, 0.05);
  double g2 = 0, ratio_spread = 0, r0 = -1;
  for (std::size_t j = 0; j < W.t.size(); ++j) {
    double g = plateau_bump(W.t[j], -s.T0, -s.T0 / 2, s.T0 / 2, s.T0);
    g2 += g * g * W.dt;
    if (g > 1e-3) {
      double r = W.lambda[j] / g;
      if (r0 < 0) r0 = r;
      ratio_spread = std::max(ratio_spread, std::abs(r - r0));
    }
  }
  CHECK(ratio_spread < 1e-13);
  CHECK(std::abs(W.C - 1.0 / std::sqrt(g2)) < 1e-12 * W.C);
  CHECK(std::abs(W.l2_norm() - 1.0) < 1e-12);
  for (double v : W.lambda) CHECK(v >= 0.0);
}

TEST_CASE("normalizing constant approaches 1/(2 gamma) once the damping side is negligible") {
  // gamma = 20: the t > 0 side carries o(1/gamma) only when ((nu+1) gamma h)^{1/nu} << 1/gamma
  auto s = strip_spec();
  s.beta.kind = BetaRule::Kind::fixed;
  const double h = 1e-20;
  s.beta.value = 20 * h;
  auto W = build_weight(s, h);
  CHECK(W.gamma == doctest::Approx(20.0));
  double ratio = (1.0 / (W.C * W.C)) / (1.0 / 40.0);
  MESSAGE("C_h^-2 / (1/2gamma) = " << ratio);
  CHECK(ratio >= 0.8);
  CHECK(ratio <= 1.2);
}

TEST_CASE("weight transform decays like tau^-2") {
  auto s = strip_spec();
  double prev = 1e300;
  for (double h : {0.1, 0.05, 0.02}) {
    auto W = build_weight(s, h, 100 / h);
    double mx = 0;
    for (int i = 0; i <= 200; ++i) {
      double tau = 10 / h + i * (90 / h) / 200;
      mx = std::max(mx, std::abs(W.hat(tau)) * tau * tau);
    }
    MESSAGE("h=" << h << " sup |hat Lambda| tau^2 = " << mx);
    CHECK(std::isfinite(mx));
    CHECK(mx <= prev * 1.0001);
    prev = mx;
  }
}

TEST_CASE("weight concentrates at t = 0 under the beta/h -> infinity rule") {
  auto s = strip_spec();
  s.beta.kind = BetaRule::Kind::strip_log;
  s.beta.c1 = 1.0;
  // the damped side stops contributing only once (6 h log(1/h))^{1/5} << 0.2
  for (double h : {1e-8, 1e-12}) {
    auto W = build_weight(s, h);
    MESSAGE("h=" << h << " mass within 0.2 = " << W.mass_within(0.2));
    CHECK(W.mass_within(0.2) > 0.9);
  }
}

TEST_CASE("window preconditions") {
  auto s = strip_spec();
  s.T0 = 2.5;
  CHECK_THROWS_AS(build_weight(s, 0.05), WindowTooWide);
  auto o = outside_spec();
  o.y0 = kPi / 2;
  CHECK_THROWS_AS(build_weight(o, 0.05), SupportViolation);
  auto n = narrow_spec();
  n.damping = DampingProfile::finite_type(6, 0.0, 0.3);
  CHECK_THROWS_AS(build_weight(n, 0.1), WindowTooWide);
  auto bad = outside_spec();
  CHECK_THROWS_AS(build_outside_quasimode(bad, 0.2), QuadratureUnderresolved);
}

// ---------------------------------------------------------------- packets

TEST_CASE("undamped packet: unit norm, width h^2, microlocal support") {
  auto s = outside_spec(DampingProfile::constant(0.0));
  std::vector<double> hs = {0.1, 0.07, 0.05, 0.035}, r;
  for (double h : hs) {
    auto q = build_outside_quasimode(s, h);
    CHECK(std::abs(q.psi.norm() - 1.0) < 1e-8);
    CHECK(q.report.upsilon_mass >= 0.95);
    r.push_back(q.report.residual);
  }
  MESSAGE("residual / h^2 at h = 0.1: " << r[0] / 0.01);
  CHECK(r[0] <= 10.0 * 0.01);
  CHECK(slope(hs, r) >= 1.8);
}

TEST_CASE("packet away from the damping carries mass below h^4") {
  auto s = outside_spec();
  for (double h : {0.1, 0.07, 0.05}) {
    auto q = build_outside_quasimode(s, h);
    CHECK(q.report.damped_mass <= std::pow(h, 4));
  }
}

TEST_CASE("x resolution does not move the residual") {
  auto s = outside_spec();
  auto a = build_outside_quasimode(s, 0.07);
  s.c_x = 24.0;
  auto b = build_outside_quasimode(s, 0.07);
  CHECK(std::abs(a.report.residual - b.report.residual) < 1e-8 * a.report.residual);
}

TEST_CASE("strip regime at beta = 0 keeps width h^2") {
  auto s = strip_spec();
  std::vector<double> hs = {0.1, 0.07, 0.05, 0.035}, r;
  for (double h : hs) r.push_back(build_damped_quasimode(s, h).report.residual);
  CHECK(slope(hs, r) >= 1.8);
}

TEST_CASE("narrow regime width h^{2 - 1/7}") {
  auto s = narrow_spec();
  std::vector<double> hs = {0.1, 0.07, 0.05, 0.04, 0.03}, r;
  for (double h : hs) r.push_back(build_damped_quasimode(s, h).report.residual);
  double p = slope(hs, r);
  MESSAGE("narrow slope " << p);
  CHECK(std::abs(p - (2.0 - 1.0 / 7.0)) <= 0.2);
}

TEST_CASE("field concentration at desk scale is reported") {
  auto s = strip_spec();
  s.beta.kind = BetaRule::Kind::strip_log;
  s.beta.c1 = 1.0;
  auto q = build_damped_quasimode(s, 0.035);
  MESSAGE("ball mass around (0,-y0) at h = 0.035: " << q.report.concentration);
  CHECK(q.report.concentration > 0.0);
  CHECK(q.report.concentration <= 1.0 + 1e-12);
}

TEST_CASE("lower bound never exceeds the computed resolvent norm") {
  const double h = 0.1;
  for (auto s : {outside_spec(), narrow_spec()}) {
    auto q = build_subelliptic_quasimode(s, h);
    auto op = SemiclassicalOperator::assemble(h, s.potential, s.damping, default_grid(h), cplx(1.0));
    auto rs = resolvent_norm(op);
    REQUIRE(rs.converged);
    MESSAGE(regime_name(s.regime) << ": 1/residual " << 1 / q.report.residual << " norm " << rs.norm);
    CHECK(1.0 / q.report.residual <= 1.05 * rs.norm);
  }
}

TEST_CASE("ball and band diagnostics on explicit fields") {
  TorusGrid g(64, 64);
  GrushinField u(g, 0.25);
  for (int l = 0; l < g.n_y; ++l)
    for (int j = 0; j < g.n_x; ++j) u.at(j, l) = 1.0 / kTwoPi;
  double disc = kPi * 0.5 * 0.5 / (kTwoPi * kTwoPi);
  CHECK(std::abs(ball_mass(u, 0.0, 0.0, 0.5) - disc) < 0.02 * disc);
  CHECK(std::abs(ball_mass(u, kPi, -kPi, 0.5) - disc) < 0.02 * disc);
  // single y-mode n = 16 at h = 0.25: h^2 n = 1, inside the band
  for (int l = 0; l < g.n_y; ++l)
    for (int j = 0; j < g.n_x; ++j) u.at(j, l) = std::polar(1.0 / kTwoPi, 16 * g.y(l));
  CHECK(std::abs(upsilon_mass(u, 8.0) - u.norm()) < 1e-12);
  for (int l = 0; l < g.n_y; ++l)
    for (int j = 0; j < g.n_x; ++j) u.at(j, l) = 1.0 / kTwoPi;
  CHECK(upsilon_mass(u, 8.0) < 1e-12);
}

TEST_CASE("spec JSON round trip") {
  auto s = narrow_spec();
  s.beta.kind = BetaRule::Kind::narrow_log;
  s.beta.c1 = 0.5;
  auto t = SubellipticQuasimodeSpec::from_json(s.to_json());
  CHECK(t.to_json() == s.to_json());
  CHECK(t.beta.eval(0.01, 6) == doctest::Approx(0.5 * std::pow(0.01 * std::log(100.0), 6.0 / 7.0)));
  CHECK_THROWS_AS(SubellipticQuasimodeSpec::from_json({{"regime", "sideways"}}), ConfigError);
  OneDQuasimodeSpec o;
  o.k = 23;
  CHECK(OneDQuasimodeSpec::from_json(o.to_json()).to_json() == o.to_json());
}

// ---------------------------------------------------------------- boundary layer

TEST_CASE("Neumann profile: trace bounds, self-convergence, decay") {
  auto p = solve_neumann_profile(0.0, 6);
  CHECK(std::abs(p.F0()) > 0.05);
  CHECK(std::abs(p.F0()) < 20.0);
  auto p2 = solve_neumann_profile(0.0, 6, 12.0, 8000);
  auto p3 = solve_neumann_profile(0.0, 6, 17.0, 5667);
  CHECK(std::abs(p.F0() - p2.F0()) < 1e-6);
  CHECK(std::abs(p.F0() - p3.F0()) < 1e-6);
  CHECK(std::abs(p.value(p.L / 2)) <= 1e-8 * std::abs(p.F0()));
  // ODE residual on interior nodes, second derivative by the five-point stencil
  const double d = p.dy();
  double worst = 0;
  for (int j = 2; j < 2000; ++j) {
    cplx dd = (-p.F[j - 2] + 16.0 * p.F[j - 1] - 30.0 * p.F[j] + 16.0 * p.F[j + 1] - p.F[j + 2]) / (12 * d * d);
    worst = std::max(worst, std::abs(-dd + cplx(0, std::pow(j * d, 6)) * p.F[j]));
  }
  CHECK(worst < 1e-8);
  CHECK(std::abs(p.deriv(0.0) - 1.0) < 1e-12);
}

TEST_CASE("profile a-priori constant is uniform over |theta| <= mu0/4") {
  const double nu = 6, mu0 = lowest_neumann_eigenvalue(nu);
  double C = 0;
  for (int i = 0; i < 12; ++i) {
    cplx th = std::polar(mu0 / 4, kTwoPi * i / 12);
    C = std::max(C, profile_apriori_constant(solve_neumann_profile(th, nu)));
  }
  MESSAGE("a-priori constant " << C);
  CHECK(std::isfinite(C));
  CHECK(C < 100.0);
}

TEST_CASE("lowest Neumann eigenvalue") {
  for (double nu : {5.0, 6.0, 8.0}) {
    double a = lowest_neumann_eigenvalue(nu), b = lowest_neumann_eigenvalue(nu, 12.0, 8000);
    CHECK(a > 0);
    CHECK(std::abs(a - b) < 1e-6);
  }
  // the box limit is reached like log(nu)/nu
  double prev = 1.0;
  for (double nu : {16.0, 64.0, 256.0}) {
    double gap = 1.0 - lowest_neumann_eigenvalue(nu, 2.0, 8000) / (kPi * kPi / 4);
    CHECK(gap > 0);
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev < 0.1);
}

TEST_CASE("box value within 10% at nu = 64" * doctest::may_fail()) {
  double mu = lowest_neumann_eigenvalue(64.0, 2.0, 8000);
  MESSAGE("mu0(64) = " << mu << ", box value " << kPi * kPi / 4);
  CHECK(std::abs(mu / (kPi * kPi / 4) - 1.0) <= 0.1);
}

// ---------------------------------------------------------------- compact regime

TEST_CASE("matching conditions: residual, seed signs, rate h^delta") {
  for (int l = 0; l < 4; ++l) {
    auto s = solve_compatibility(l, 40, 5.0, 1.0);
    CHECK(s.residual < 1e-10);
    double sgn = (l % 2 == 0) ? -1.0 : 1.0;
    CHECK(s.alpha0.real() == doctest::Approx(sgn * kPi * (l + 0.5)));
  }
  // leading correction is gamma0 F0 h^delta / (y0 - F0 h^delta): the fitted order is
  // delta / (1 + |F0| h^delta), so the sequence has to reach h^delta << 1
  std::vector<double> hs, d;
  for (int k : {1000000, 10000000, 100000000, 1000000000}) {
    auto s = solve_compatibility(0, k, 5.0, 1.0);
    CHECK(s.residual < 1e-10);
    hs.push_back(s.h);
    d.push_back(std::max(std::abs(s.alpha - s.alpha0), std::abs(s.gamma - s.gamma0)));
  }
  double p = slope(hs, d);
  MESSAGE("matching rate " << p);
  CHECK(p >= 0.8 / 7.0);
}

TEST_CASE("T2 quasimode: gluing, bounds (a)-(c), width h^{2+delta}") {
  std::vector<double> hs, r, bp, d1, d2;
  for (int k : {16, 23, 32, 45, 64, 90}) {
    OneDQuasimodeSpec sp;
    sp.k = k;
    auto q = build_t2_quasimode(sp);
    const auto& R = q.report;
    CHECK(R.junction_defect < 1e-8);
    CHECK(R.raw_norm >= 0.2);
    CHECK(R.raw_norm <= 5.0);
    CHECK(std::abs(q.u.norm() - 1.0) < 1e-8);
    CHECK(R.dx2 <= 5.0);
    hs.push_back(R.h);
    r.push_back(R.residual);
    bp.push_back(R.bprime_dy);
    d1.push_back(R.dy1);
    d2.push_back(R.dy2);
  }
  const double delta = 1.0 / 7.0;
  CHECK(slope(hs, r) >= 2 + delta - 0.15);
  CHECK(slope(hs, bp) >= 0.8 * delta);
  CHECK(slope(hs, d1) >= 0.8 * (1 - delta / 2));
  CHECK(slope(hs, d2) >= 0.8 * (2 - 1.5 * delta));
}

TEST_CASE("compact-regime preconditions") {
  OneDQuasimodeSpec sp;
  sp.nu = 3;
  CHECK_THROWS_AS(build_t2_quasimode(sp), ConfigError);
  CHECK_THROWS_AS(solve_compatibility(0, 0, 5.0, 1.0), ConfigError);
  CHECK_THROWS_AS(solve_neumann_profile(0.0, 0.5), ConfigError);
}
