#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <random>

#include "grushin/operator.hpp"

using namespace grushin;

namespace {
std::vector<cplx> random_coeffs(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<cplx> v(n);
  for (auto& z : v) z = cplx(nd(rng), nd(rng));
  return v;
}
GrushinField plane_wave(const TorusGrid& g, int k, int n) {
  GrushinField u(g, 0.1);
  for (int l = 0; l < g.n_y; ++l)
    for (int j = 0; j < g.n_x; ++j) u.at(j, l) = std::exp(cplx(0, k * g.x(j) + n * g.y(l)));
  return u;
}
}  // namespace

TEST_CASE("plane waves are eigenvectors for constant coefficients") {
  TorusGrid g(16, 32);
  const double h = 0.1, v0 = 1.7, c = 0.4;
  const cplx zeta(1.0, 0.02);
  auto op = SemiclassicalOperator::assemble(h, Potential::constant(v0), DampingProfile::constant(c), g, zeta,
                                            {.quiet = true});
  for (auto [k, n] : {std::pair{0, 0}, {3, -5}, {-7, 11}}) {
    auto u = plane_wave(g, k, n);
    auto Au = op.apply(u);
    cplx lam = h * h * k * k + v0 * h * h * n * n + cplx(0, h * c) - zeta;
    double err = 0;
    for (std::size_t i = 0; i < u.v.size(); ++i) err = std::max(err, std::abs(Au.v[i] - lam * u.v[i]));
    CHECK(err < 1e-11);
  }
}

TEST_CASE("plane wave phase on the shifted grid") {
  TorusGrid g(8, 8);
  auto u = plane_wave(g, 2, -3);
  auto c = to_spectral(u);
  int idx = wrap_index(-3, 8) * 8 + 2;
  CHECK(std::abs(c[idx] - cplx(grid_phase_sign(2, -3) * 8.0, 0)) < 1e-12);
}

TEST_CASE("assembled matrix agrees with the matrix-free product") {
  TorusGrid g(16, 32);
  for (const auto& d : {DampingProfile::egcc_trig(), DampingProfile::smooth_strip(), DampingProfile::egcc_bump(),
                        DampingProfile::finite_type(4, 0.5, 1.0)}) {
    auto op = SemiclassicalOperator::assemble(0.2, Potential::canonical(), d, g, cplx(1.0, 0.05), {.quiet = true});
    auto u = random_coeffs(g.size(), 3);
    auto w = op.apply_spectral(u);
    SpMat A = op.matrix();
    Eigen::VectorXcd x = Eigen::Map<Eigen::VectorXcd>(u.data(), u.size());
    Eigen::VectorXcd y = A * x;
    double err = 0, nrm = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      err = std::max(err, std::abs(w[i] - y(i)));
      nrm = std::max(nrm, std::abs(w[i]));
    }
    CHECK(err < 1e-12 * std::max(1.0, nrm) * 10);
  }
}

TEST_CASE("grid and spectral products agree") {
  TorusGrid g(16, 16);
  auto op = SemiclassicalOperator::assemble(0.3, Potential::canonical(), DampingProfile::egcc_trig(), g, cplx(0.5, 0),
                                            {.quiet = true});
  GrushinField u(g, 0.3);
  u.v = random_coeffs(g.size(), 9);
  auto a = op.apply(u);
  auto b = from_spectral(g, 0.3, op.apply_spectral(to_spectral(u)));
  for (std::size_t i = 0; i < u.v.size(); ++i) CHECK(std::abs(a.v[i] - b.v[i]) < 1e-10);
}

TEST_CASE("strict grid policy") {
  CHECK_THROWS_AS(SemiclassicalOperator::assemble(0.05, Potential::canonical(), DampingProfile::constant(1),
                                                  TorusGrid(8, 8), cplx(1, 0), {.strict = true}),
                  GridTooCoarse);
  CHECK_THROWS(SemiclassicalOperator::assemble(-0.1, Potential::canonical(), DampingProfile::constant(1),
                                               TorusGrid(8, 8), cplx(1, 0), {.quiet = true}));
  auto g = default_grid(0.1);
  CHECK(grid_resolves(g, 0.1));
}

TEST_CASE("seminorm of a plane wave") {
  TorusGrid g(32, 32);
  auto u = plane_wave(g, 3, 4);
  double m = u.norm();
  CHECK(m == doctest::Approx(kTwoPi));
  // |d_x u| = 3 |u|, |W d_y u| = 4 sqrt(mean V) |u|
  double s1 = grushin_seminorm(u, 1, Potential::canonical());
  CHECK(s1 == doctest::Approx(3 * m + 4 * std::sqrt(2.0) * m).epsilon(1e-10));
}

TEST_CASE("field and matrix persistence") {
  auto dir = std::filesystem::temp_directory_path() / "grushin_test_io";
  std::filesystem::create_directories(dir);
  TorusGrid g(8, 4);
  GrushinField u(g, 0.25);
  u.v = random_coeffs(g.size(), 1);
  write_field(u, (dir / "u.bin").string(), {{"note", "x"}});
  auto r = read_field((dir / "u.bin").string());
  CHECK(r.grid == g);
  CHECK(r.h == 0.25);
  for (std::size_t i = 0; i < u.v.size(); ++i) CHECK(std::abs(r.v[i] - u.v[i]) < 1e-6 * (1 + std::abs(u.v[i])));
  auto op = SemiclassicalOperator::assemble(0.5, Potential::canonical(), DampingProfile::constant(1), g, cplx(1, 0),
                                            {.quiet = true});
  write_matrix_market(op.matrix(), (dir / "A.mtx").string());
  CHECK(std::filesystem::file_size(dir / "A.mtx") > 0);
  std::filesystem::remove_all(dir);
}
