#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "grushin/resolvent.hpp"

using namespace grushin;

namespace {
VecC random_vec(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  VecC v(n);
  for (int i = 0; i < n; ++i) v(i) = cplx(nd(rng), nd(rng));
  return v;
}
SemiclassicalOperator small_op(const DampingProfile& d, int nx = 16, int ny = 32, double h = 0.2) {
  return SemiclassicalOperator::assemble(h, Potential::canonical(), d, TorusGrid(nx, ny), cplx(1.0, 0.0),
                                         {.quiet = true});
}
std::vector<DampingProfile> dampings() {
  return {DampingProfile::egcc_trig(), DampingProfile::smooth_strip(), DampingProfile::egcc_bump(),
          DampingProfile::finite_type(4, 0.5, 1.0), DampingProfile::constant(0.0)};
}
std::vector<std::pair<Parity, Parity>> sectors(const DampingProfile& d) {
  if (d.even_y()) return {{Parity::even, Parity::even}, {Parity::even, Parity::odd}, {Parity::odd, Parity::even},
                          {Parity::odd, Parity::odd}};
  return {{Parity::even, Parity::none}, {Parity::odd, Parity::none}};
}
}  // namespace

TEST_CASE("sector bases partition index space orthonormally") {
  for (int n : {4, 8, 10}) {
    auto e = SectorBasis::make(n, Parity::even), o = SectorBasis::make(n, Parity::odd),
         a = SectorBasis::make(n, Parity::none);
    CHECK(e.size() + o.size() == n);
    CHECK(a.size() == n);
    for (const auto* b : {&e, &o}) {
      double s = 0;
      for (int m = 0; m < b->size(); ++m) s += b->c0[m] * b->c0[m] + b->c1[m] * b->c1[m];
      CHECK(s == doctest::Approx(b->size()));
    }
  }
}

TEST_CASE("sector restriction commutes with the full operator") {
  for (const auto& d : dampings()) {
    auto op = small_op(d);
    std::size_t total = 0;
    for (auto [px, py] : sectors(d)) {
      SectorOperator S(op, px, py);
      total += S.size();
      VecC u = random_vec(S.size(), 5);
      VecC a = S.apply(u);
      VecC b = S.restrict(op.apply_spectral(S.expand(u)));
      CHECK((a - b).norm() < 1e-11 * b.norm());
      // the expanded vector stays in its sector
      VecC back = S.restrict(S.expand(u));
      CHECK((back - u).norm() < 1e-13 * u.norm());
    }
    CHECK(total == op.grid().size());
  }
}

TEST_CASE("block-tridiagonal LU solves forward and adjoint systems") {
  for (const auto& d : dampings()) {
    auto op = small_op(d);
    for (auto [px, py] : sectors(d)) {
      SectorOperator S(op, px, py);
      MatC A = S.dense();
      for (bool force_y : {false, true}) {
        auto L = S.choose_layout();
        if (force_y) {
          if (!L.x_major) continue;
          // y-major with a group wide enough to hold all couplings
          L.x_major = false;
          L.group = S.my();
          L.nblocks = 1;
        }
        BlockTridiagLU lu(S, L);
        CAPTURE(d.kind_name());
        CAPTURE(L.x_major);
        CAPTURE(L.group);
        VecC b = random_vec(S.size(), 11);
        VecC x = lu.solve(b);
        CHECK((A * x - b).norm() < 1e-9 * b.norm());
        VecC y = lu.solve_adjoint(b);
        CHECK((A.adjoint() * y - b).norm() < 1e-9 * b.norm());
      }
    }
  }
}

TEST_CASE("layout blocks reassemble the sector matrix") {
  auto op = small_op(DampingProfile::egcc_trig());
  SectorOperator S(op, Parity::even, Parity::even);
  MatC A = S.dense();
  auto L = S.choose_layout();
  MatC B = MatC::Zero(S.size(), S.size());
  int bs = L.group * S.minor_count(L);
  for (int r = 0; r < L.nblocks; ++r)
    for (int c = std::max(0, r - 1); c <= std::min(L.nblocks - 1, r + 1); ++c) {
      MatC blk = r == c ? S.dense_block(L, r) : MatC(S.sparse_block(L, r, c));
      B.block(r * bs, c * bs, blk.rows(), blk.cols()) = blk;
    }
  // permute A into layout order
  MatC P = MatC::Zero(S.size(), S.size());
  for (int ax = 0; ax < S.mx(); ++ax)
    for (int ay = 0; ay < S.my(); ++ay)
      for (int bx = 0; bx < S.mx(); ++bx)
        for (int by = 0; by < S.my(); ++by)
          P(S.layout_index(L, ax, ay), S.layout_index(L, bx, by)) = A(ax * S.my() + ay, bx * S.my() + by);
  CHECK((P - B).norm() < 1e-12 * A.norm());
}

TEST_CASE("sector sigma_min matches the dense SVD oracle") {
  for (const auto& d : dampings()) {
    for (double h : {0.3, 0.15}) {
      auto op = small_op(d, 16, 32, h);
      double oracle = sigma_min_dense(MatC(op.matrix()));
      ResolventOptions o;
      o.dense_limit = 0;
      auto r = resolvent_norm(op, o);
      CHECK(r.error.empty());
      CHECK(r.converged);
      CHECK(r.sigma_min == doctest::Approx(oracle).epsilon(1e-8));
      CHECK(r.norm == doctest::Approx(1.0 / oracle).epsilon(1e-8));
      auto s = sigma_min_sparse(op.matrix());
      CHECK(s.sigma == doctest::Approx(oracle).epsilon(1e-8));
      CHECK(s.cert_rel < 1e-6);
    }
  }
}

TEST_CASE("property: sigma_min is at most the Rayleigh value of any vector") {
  auto op = small_op(DampingProfile::smooth_strip());
  ResolventOptions o;
  o.dense_limit = 0;
  auto r = resolvent_norm(op, o);
  for (unsigned s = 0; s < 10; ++s) {
    VecC v = random_vec(int(op.grid().size()), s);
    std::vector<cplx> u(v.data(), v.data() + v.size());
    auto w = op.apply_spectral(u);
    double q = Eigen::Map<VecC>(w.data(), w.size()).norm() / v.norm();
    CHECK(r.sigma_min <= q * (1 + 1e-12));
  }
}

TEST_CASE("1D family: Fourier and collocation assemblies agree") {
  auto d = DampingProfile::strip(5, 1.0, 2.0);
  const int n = 64;
  const double h = 0.2, E = 0.7;
  auto o = oned_operator(h, E, d, 0.0, 0.0, n);
  MatC P = oned_operator_physical(h, E, d, 0.0, 0.0, n);
  CHECK(sigma_min_dense(o.A) == doctest::Approx(sigma_min_dense(P)).epsilon(1e-9));
  CHECK(oned_resolvent_norm(h, E, d, 0.0, 0.0, n) == doctest::Approx(1.0 / sigma_min_dense(P)).epsilon(1e-8));
  // solve through the Fourier path and check the collocation residual
  std::vector<cplx> r(n);
  for (int j = 0; j < n; ++j) r[j] = std::exp(-std::pow(-kPi + j * kTwoPi / n, 2));
  auto w = oned_family_solve(h, E, d, 0.0, r, 0.0);
  VecC res = P * Eigen::Map<VecC>(w.data(), n) - Eigen::Map<VecC>(r.data(), n);
  CHECK(res.norm() < 1e-9 * Eigen::Map<VecC>(r.data(), n).norm());
}

TEST_CASE("energy grid and grid size") {
  auto E = oned_energy_grid(0.1, 1.0 / 7.0);
  CHECK(E.size() == 200);
  CHECK(E.front() == doctest::Approx(1e-3));
  CHECK(E.back() >= 1.0);
  CHECK(oned_grid_size(0.1) == 256);
  CHECK(oned_grid_size(0.01) == 512);
}

TEST_CASE("fit recovers an exact power law") {
  std::vector<double> h = {0.1, 0.07, 0.05, 0.035}, v;
  for (double x : h) v.push_back(3.0 * std::pow(x, -1.5));
  auto f = fit_exponent(h, v);
  CHECK(f.slope == doctest::Approx(1.5));
  CHECK(std::exp(f.intercept) == doctest::Approx(3.0));
  CHECK(f.half_width < 1e-8);
  CHECK_THROWS_AS(fit_exponent({0.1, 0.05}, {1, 2}), TooFewSamples);
}
