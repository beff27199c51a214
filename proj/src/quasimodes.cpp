#include "grushin/quasimodes.hpp"

#include <algorithm>
#include <tuple>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace grushin {

// ---------------------------------------------------------------- specs

std::string regime_name(QuasimodeRegime r) {
  switch (r) {
    case QuasimodeRegime::outside_damping: return "outside_damping";
    case QuasimodeRegime::within_damping_strip: return "within_damping_strip";
    case QuasimodeRegime::within_damping_narrow: return "within_damping_narrow";
  }
  return "?";
}

QuasimodeRegime regime_from_name(const std::string& s) {
  if (s == "outside_damping") return QuasimodeRegime::outside_damping;
  if (s == "within_damping_strip") return QuasimodeRegime::within_damping_strip;
  if (s == "within_damping_narrow") return QuasimodeRegime::within_damping_narrow;
  throw ConfigError("unknown quasimode regime '" + s + "'");
}

double BetaRule::eval(double h, double nu) const {
  switch (kind) {
    case Kind::zero: return 0.0;
    case Kind::fixed: return value;
    case Kind::strip_log: return c1 * h * std::log(1.0 / h);
    case Kind::narrow_log: return c1 * std::pow(h * std::log(1.0 / h), nu / (nu + 1.0));
  }
  return 0.0;
}

json BetaRule::to_json() const {
  static const char* names[] = {"zero", "fixed", "strip_log", "narrow_log"};
  return {{"kind", names[int(kind)]}, {"c1", c1}, {"value", value}};
}

BetaRule BetaRule::from_json(const json& j) {
  BetaRule b;
  std::string k = j.value("kind", "zero");
  if (k == "zero") b.kind = Kind::zero;
  else if (k == "fixed") b.kind = Kind::fixed;
  else if (k == "strip_log") b.kind = Kind::strip_log;
  else if (k == "narrow_log") b.kind = Kind::narrow_log;
  else throw ConfigError("unknown beta rule '" + k + "'");
  b.c1 = j.value("c1", 0.0);
  b.value = j.value("value", 0.0);
  return b;
}

double SubellipticQuasimodeSpec::center() const {
  double y = std::isnan(y0) ? damping.y0() : y0;
  if (regime == QuasimodeRegime::within_damping_strip) return mirror ? y : -y;
  return y;
}

json SubellipticQuasimodeSpec::to_json() const {
  json j = {{"regime", regime_name(regime)},
            {"potential", potential.to_json()},
            {"damping", damping.to_json()},
            {"T0", T0},
            {"beta", beta.to_json()},
            {"taylor_order", taylor_order},
            {"hermite_band", hermite_band},
            {"c_x", c_x},
            {"c_y", c_y},
            {"mirror", mirror}};
  if (!std::isnan(y0)) j["y0"] = y0;
  return j;
}

SubellipticQuasimodeSpec SubellipticQuasimodeSpec::from_json(const json& j) {
  SubellipticQuasimodeSpec s;
  s.regime = regime_from_name(j.at("regime").get<std::string>());
  if (j.contains("potential")) s.potential = Potential::from_json(j["potential"]);
  if (j.contains("damping")) s.damping = DampingProfile::from_json(j["damping"]);
  if (j.contains("y0")) s.y0 = j["y0"].get<double>();
  s.T0 = j.value("T0", s.T0);
  if (j.contains("beta")) s.beta = BetaRule::from_json(j["beta"]);
  s.taylor_order = j.value("taylor_order", s.taylor_order);
  s.hermite_band = j.value("hermite_band", s.hermite_band);
  s.c_x = j.value("c_x", s.c_x);
  s.c_y = j.value("c_y", s.c_y);
  s.mirror = j.value("mirror", s.mirror);
  if (s.taylor_order < 3) throw ConfigError("Taylor order must be at least 3");
  return s;
}

json QuasimodeReport::to_json() const {
  return {{"regime", regime},         {"h", h},
          {"beta_h", beta_h},         {"residual", residual},
          {"damped_mass", damped_mass}, {"concentration", concentration},
          {"upsilon_mass", upsilon_mass}, {"norm_error", norm_error},
          {"weight_C", weight_C},     {"n_x", n_x},
          {"n_y", n_y},               {"modes", modes}};
}

// ---------------------------------------------------------------- time weight

namespace {

struct Window {
  double lo, c, d, hi;  // support (lo, hi), plateau [c, d]
  double value(double t) const { return plateau_bump(t, lo, c, d, hi); }
  double deriv(double t) const {
    double e = 1e-6 * (hi - lo);
    if (t - e <= lo || t + e >= hi) return 0.0;
    return (value(t + e) - value(t - e)) / (2 * e);
  }
};

// Direction the packet moves in y and the damping seen along the way.
double travel_sign(const SubellipticQuasimodeSpec& s) { return s.mirror ? -1.0 : 1.0; }

double spec_nu(const SubellipticQuasimodeSpec& s) { return s.damping.nu() > 0 ? s.damping.nu() : 2.0; }

Window make_window(const SubellipticQuasimodeSpec& s, double h, double beta) {
  const double T0 = s.T0;
  switch (s.regime) {
    case QuasimodeRegime::outside_damping:
    case QuasimodeRegime::within_damping_strip:
      return {-T0, -T0 / 2, T0 / 2, T0};
    case QuasimodeRegime::within_damping_narrow: {
      const double nu = spec_nu(s);
      const double hs = std::pow(h, nu / (nu + 1));
      const double L = beta > hs ? std::pow(beta / hs, 1.0 / nu) : 1.0;
      const double S = std::pow(h, 1.0 / (nu + 1)) * L;
      return {-S, -S / 2, 2 * S, 3 * S};
    }
  }
  return {};
}

void check_window(const SubellipticQuasimodeSpec& s, const Window& w) {
  const DampingProfile& d = s.damping;
  const double c = s.center();
  switch (s.regime) {
    case QuasimodeRegime::outside_damping: {
      // packet travels at most |t| <= T0; keep a margin of T0/4 for its width
      const double reach = 1.25 * s.T0;
      for (int i = 0; i <= 400; ++i) {
        double y = c - reach + 2 * reach * i / 400.0;
        if (d(0.0, y) != 0.0) throw SupportViolation("packet window meets the damping support");
      }
      break;
    }
    case QuasimodeRegime::within_damping_strip:
      if (d.kind() != DampingProfile::Kind::strip) throw ConfigError("strip regime needs a strip damping profile");
      if (!(s.T0 < d.rho())) throw WindowTooWide("time window T0 must be smaller than rho");
      break;
    case QuasimodeRegime::within_damping_narrow: {
      if (d.kind() != DampingProfile::Kind::finite_type)
        throw ConfigError("narrow regime needs a finite_type damping profile");
      const double T0 = d.rho() - 0.05;
      if (!(w.hi < T0) || !(-w.lo < T0)) throw WindowTooWide("time window exceeds rho - epsilon");
      break;
    }
  }
}

}  // namespace

cplx WeightFunction::hat(double tau) const {
  // trapezoid (the weight vanishes at both ends), phases by recurrence with periodic resync
  const std::size_t n = t.size();
  const cplx step = std::polar(1.0, -tau * dt);
  cplx acc = 0.0, p;
  for (std::size_t j = 0; j < n; ++j) {
    if (j % 256 == 0) p = std::polar(1.0, -tau * t[j]);
    acc += lambda[j] * p;
    p *= step;
  }
  return acc * dt;
}

double WeightFunction::l2_norm() const {
  double s = 0;
  for (double v : lambda) s += v * v;
  return std::sqrt(s * dt);
}

double WeightFunction::mass_within(double r) const {
  double in = 0, all = 0;
  for (std::size_t j = 0; j < t.size(); ++j) {
    double v = lambda[j] * lambda[j];
    all += v;
    if (std::abs(t[j]) <= r) in += v;
  }
  return all > 0 ? in / all : 0.0;
}

WeightFunction build_weight(const SubellipticQuasimodeSpec& spec, double h, double tau_max) {
  if (!(h > 0)) throw ConfigError("h must be positive");
  const double nu = spec_nu(spec);
  const double beta = spec.beta.eval(h, nu);
  if (beta < 0) throw ConfigError("beta_h must be nonnegative");
  const Window w = make_window(spec, h, beta);
  check_window(spec, w);
  const bool damped = spec.regime != QuasimodeRegime::outside_damping;

  WeightFunction W;
  W.gamma = beta / h;
  double dt = (w.hi - w.lo) / 4000.0;
  if (W.gamma > 0) dt = std::min(dt, 1.0 / (50.0 * W.gamma));
  if (damped && W.gamma > 0) dt = std::min(dt, std::pow((nu + 1) * W.gamma * h, 1.0 / nu) / 50.0);
  if (tau_max > 0) dt = std::min(dt, kPi / (16.0 * tau_max));
  W.dt = dt;

  const long j0 = long(std::ceil(w.lo / dt)), j1 = long(std::floor(w.hi / dt));
  const std::size_t n = std::size_t(j1 - j0 + 1);
  W.t.resize(n);
  for (std::size_t j = 0; j < n; ++j) W.t[j] = double(j0 + long(j)) * dt;

  // b0(t) = int_0^t b(c - sigma s) ds, Simpson per cell, accumulated from t = 0
  W.b0.assign(n, 0.0);
  if (damped) {
    const double c = spec.center(), sg = travel_sign(spec);
    auto bs = [&](double s) { return spec.damping(0.0, c - sg * s); };
    const std::size_t z = std::size_t(-j0);
    for (std::size_t j = z + 1; j < n; ++j) {
      double a = W.t[j - 1], b = W.t[j];
      W.b0[j] = W.b0[j - 1] + (b - a) / 6.0 * (bs(a) + 4 * bs(0.5 * (a + b)) + bs(b));
    }
    for (std::size_t j = z; j-- > 0;) {
      double a = W.t[j], b = W.t[j + 1];
      W.b0[j] = W.b0[j + 1] - (b - a) / 6.0 * (bs(a) + 4 * bs(0.5 * (a + b)) + bs(b));
    }
  }

  std::vector<double> ex(n);
  double emax = -1e300;
  for (std::size_t j = 0; j < n; ++j) {
    ex[j] = W.t[j] * W.gamma - W.b0[j] / h;
    if (w.value(W.t[j]) > 0) emax = std::max(emax, ex[j]);
  }
  W.lambda.resize(n);
  W.lambda_dagger.resize(n);
  double s2 = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double e = std::exp(ex[j] - emax);
    W.lambda[j] = w.value(W.t[j]) * e;
    W.lambda_dagger[j] = w.deriv(W.t[j]) * e;
    s2 += W.lambda[j] * W.lambda[j];
  }
  const double nrm = std::sqrt(s2 * dt);
  for (std::size_t j = 0; j < n; ++j) {
    W.lambda[j] /= nrm;
    W.lambda_dagger[j] /= nrm;
  }
  W.C = std::exp(-emax) / nrm;
  return W;
}

// ---------------------------------------------------------------- packets

double ball_mass(const GrushinField& u, double x0, double y0, double r) {
  const TorusGrid& g = u.grid;
  double s = 0;
  auto pdist = [](double a) {
    a = std::fmod(std::abs(a), kTwoPi);
    return std::min(a, kTwoPi - a);
  };
  for (int l = 0; l < g.n_y; ++l) {
    double dy = pdist(g.y(l) - y0);
    if (dy > r) continue;
    for (int j = 0; j < g.n_x; ++j) {
      double dx = pdist(g.x(j) - x0);
      if (dx * dx + dy * dy <= r * r) s += std::norm(u.at(j, l));
    }
  }
  return s * g.dx() * g.dy();
}

double upsilon_mass(const GrushinField& u, double R) {
  auto uh = to_spectral(u);
  const TorusGrid& g = u.grid;
  double s = 0;
  for (int ni = 0; ni < g.n_y; ++ni) {
    double f = upsilon(u.h * u.h * signed_freq(ni, g.n_y), R);
    if (f == 0.0) continue;
    for (int ki = 0; ki < g.n_x; ++ki) s += f * f * std::norm(uh[std::size_t(ni) * g.n_x + ki]);
  }
  return std::sqrt(s * g.dx() * g.dy());
}

namespace {

SubellipticQuasimode build_packet(const SubellipticQuasimodeSpec& spec, double h) {
  if (spec.taylor_order < 3) throw ConfigError("Taylor order must be at least 3");
  // at least 64 integer frequencies per unit of h^2 eta
  if (1.0 / (h * h) < 64.0) throw QuadratureUnderresolved("fewer than 64 frequencies per unit of h^2 eta");
  const double nu = spec_nu(spec);
  const double beta = spec.beta.eval(h, nu);
  const TorusGrid g(next_pow2(spec.c_x / h), next_pow2(spec.c_y / (h * h)));
  const int mlo = int(std::ceil(0.5 / (h * h))), mhi = int(std::floor(2.0 / (h * h)));
  if (mhi >= g.n_y / 2) throw QuadratureUnderresolved("y grid does not hold the frequency band");

  const double tau_max = 1.1 / (h * h);
  WeightFunction W = build_weight(spec, h, tau_max);
  {
    // doubling gate on the time quadrature
    SubellipticQuasimodeSpec s2 = spec;
    WeightFunction W2 = build_weight(s2, h, 2 * tau_max);
    double worst = 0, peak = 0;
    for (int i = 0; i <= 16; ++i) {
      double tau = -tau_max + 2 * tau_max * i / 16.0;
      cplx a = W.hat(tau), b = W2.hat(tau);
      peak = std::max(peak, std::abs(a));
      worst = std::max(worst, std::abs(a - b));
    }
    peak = std::max(peak, std::abs(W.hat(0.0)));
    if (worst > 1e-8 * peak) throw QuadratureUnderresolved("time-window Fourier transform not converged");
  }

  const int N = spec.taylor_order;
  const int band = std::min(spec.hermite_band, 3 * N);
  const auto taylor = spec.potential.taylor(N);
  const double c = spec.center(), sg = travel_sign(spec);

  // rows over x_j, columns over y-frequency index
  std::vector<cplx> T(std::size_t(g.n_x) * g.n_y, cplx(0));
  std::vector<double> xs(g.n_x);
  for (int j = 0; j < g.n_x; ++j) xs[j] = g.x(j);
  int modes = 0;
  for (int m = mlo; m <= mhi; ++m) {
    const double eta = m;
    const double cut = chi1(h * h * eta);
    if (cut == 0.0) continue;
    QuasiEigen q = quasi_eigenvalues(eta, N, taylor);
    const double mu0 = q.mu(0);
    const cplx wgt = cut * W.hat(1.0 / (h * h) - mu0 * eta);
    if (std::abs(wgt) == 0.0) continue;
    ++modes;
    const int n = int(sg) * m;
    // e^{i n (y_l - c)}, y_l = -pi + l dy
    const cplx ph = wgt * std::polar(1.0, -n * c) * ((n % 2 == 0) ? 1.0 : -1.0);
    const int col = wrap_index(n, g.n_y);
    const double se = std::sqrt(eta), q4 = std::pow(eta, 0.25);
    std::vector<cplx> coef(band + 1);
    for (int k = 0; k <= band; ++k) coef[k] = std::conj(q.nf.U(0, k));
    for (int j = 0; j < g.n_x; ++j) {
      auto psi = hermite_functions(band, se * xs[j]);
      cplx X = 0;
      for (int k = 0; k <= band; ++k) X += coef[k] * psi[k];
      T[std::size_t(j) * g.n_y + col] += ph * q4 * X;
    }
  }
  Fft1 fy(g.n_y, g.n_x);
  fy.backward(T.data());

  SubellipticQuasimode out;
  out.psi = GrushinField(g, h);
  for (int j = 0; j < g.n_x; ++j)
    for (int l = 0; l < g.n_y; ++l) out.psi.at(j, l) = T[std::size_t(j) * g.n_y + l];
  T.clear();
  T.shrink_to_fit();
  const double nrm = out.psi.norm();
  if (!(nrm > 0)) throw QuadratureUnderresolved("quasimode vanished on the grid");
  for (auto& v : out.psi.v) v /= nrm;

  AssembleOptions ao;
  ao.quiet = true;
  auto op = SemiclassicalOperator::assemble(h, spec.potential, spec.damping, g, cplx(1.0, h * beta), ao);
  GrushinField r = op.apply(out.psi);

  QuasimodeReport& rep = out.report;
  rep.regime = regime_name(spec.regime);
  rep.h = h;
  rep.beta_h = beta;
  rep.residual = r.norm();
  double dm = 0;
  for (int l = 0; l < g.n_y; ++l)
    for (int j = 0; j < g.n_x; ++j) dm += spec.damping(g.x(j), g.y(l)) * std::norm(out.psi.at(j, l));
  rep.damped_mass = std::sqrt(dm * g.dx() * g.dy());
  rep.concentration = ball_mass(out.psi, 0.0, c, 0.2);
  rep.upsilon_mass = upsilon_mass(out.psi, 8.0);
  rep.norm_error = std::abs(out.psi.norm() - 1.0);
  rep.weight_C = W.C;
  rep.n_x = g.n_x;
  rep.n_y = g.n_y;
  rep.modes = modes;
  return out;
}

}  // namespace

SubellipticQuasimode build_outside_quasimode(const SubellipticQuasimodeSpec& spec, double h) {
  if (spec.regime != QuasimodeRegime::outside_damping) throw ConfigError("spec is not an outside_damping spec");
  if (std::isnan(spec.y0)) throw ConfigError("outside_damping needs an explicit packet center y0");
  return build_packet(spec, h);
}

SubellipticQuasimode build_damped_quasimode(const SubellipticQuasimodeSpec& spec, double h) {
  if (spec.regime == QuasimodeRegime::outside_damping) throw ConfigError("spec is not a damped-regime spec");
  if (!spec.damping.y_only()) throw ConfigError("damped regimes need y-only damping");
  return build_packet(spec, h);
}

SubellipticQuasimode build_subelliptic_quasimode(const SubellipticQuasimodeSpec& spec, double h) {
  return spec.regime == QuasimodeRegime::outside_damping ? build_outside_quasimode(spec, h)
                                                          : build_damped_quasimode(spec, h);
}

// ---------------------------------------------------------------- Neumann profile

namespace {

// 6-point Lagrange interpolation of samples f on the grid j*dy, j = 0..n.
cplx interp6(const std::vector<cplx>& f, double dy, double s) {
  const int n = int(f.size()) - 1;
  double u = s / dy;
  int j = int(std::floor(u)) - 2;
  j = std::clamp(j, 0, n - 5);
  cplx acc = 0;
  for (int a = 0; a < 6; ++a) {
    double wa = 1;
    for (int b = 0; b < 6; ++b)
      if (b != a) wa *= (u - (j + b)) / double(a - b);
    acc += wa * f[j + a];
  }
  return acc;
}

}  // namespace

cplx NeumannProfile::value(double s) const {
  if (s >= L) return 0.0;
  return interp6(F, dy(), std::max(s, 0.0));
}

cplx NeumannProfile::deriv(double s) const {
  if (s >= L) return 0.0;
  return interp6(dF, dy(), std::max(s, 0.0));
}

NeumannProfile solve_neumann_profile(cplx theta, double nu, double L, int n) {
  if (!(nu > 1)) throw ConfigError("profile exponent must exceed 1");
  if (n < 16 || !(L > 0)) throw ConfigError("profile grid too small");
  const double d = L / n, c = 1.0 / (12.0 * d * d);
  // ghosts from the Taylor expansion at 0: F'(0) = 1, F'''(0) = -theta
  const cplx g1 = -2.0 * d + theta * d * d * d / 3.0;        // F_{-1} = F_1 + g1
  const cplx g2 = -4.0 * d + 8.0 * theta * d * d * d / 3.0;  // F_{-2} = F_2 + g2
  std::vector<Eigen::Triplet<cplx>> tr;
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(n);
  const double st[5] = {c, -16 * c, 30 * c, -16 * c, c};  // -F'' stencil at offsets -2..2
  for (int j = 0; j < n; ++j) {
    double y = j * d;
    tr.emplace_back(j, j, cplx(0, std::pow(y, nu)) - theta);
    for (int o = -2; o <= 2; ++o) {
      int col = j + o;
      double a = st[o + 2];
      if (col >= n) continue;  // F_n = F_{n+1} = 0
      if (col < 0) {
        // reflected ghost
        tr.emplace_back(j, -col, a);
        rhs(j) -= a * (col == -1 ? g1 : g2);
        continue;
      }
      tr.emplace_back(j, col, a);
    }
  }
  SpMat A(n, n);
  A.setFromTriplets(tr.begin(), tr.end());
  Eigen::SparseLU<SpMat> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw ResonantTruncation("profile matrix is singular; enlarge L");
  Eigen::VectorXcd x = lu.solve(rhs);
  NeumannProfile p;
  p.theta = theta;
  p.nu = nu;
  p.L = L;
  p.n = n;
  p.F.assign(n + 1, 0.0);
  for (int j = 0; j < n; ++j) p.F[j] = x(j);
  if (!std::isfinite(std::abs(p.F[0])) || std::abs(p.F[0]) > 1e12)
    throw ResonantTruncation("profile trace blew up; enlarge L");
  auto at = [&](int j) -> cplx {
    if (j >= 0) return j <= n ? p.F[j] : 0.0;
    return j == -1 ? p.F[1] + g1 : p.F[2] + g2;
  };
  p.dF.assign(n + 1, 0.0);
  for (int j = 0; j <= n; ++j) p.dF[j] = (at(j - 2) - 8.0 * at(j - 1) + 8.0 * at(j + 1) - at(j + 2)) / (12.0 * d);
  p.dF[0] = 1.0;
  return p;
}

const NeumannProfile& cached_neumann_profile(cplx theta, double nu, double L, int n) {
  using Key = std::tuple<double, double, double, double, int>;
  static std::map<Key, NeumannProfile> cache;
  static std::mutex mu;
  Key k{theta.real(), theta.imag(), nu, L, n};
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(k);
    if (it != cache.end()) return it->second;
  }
  NeumannProfile p = solve_neumann_profile(theta, nu, L, n);
  std::lock_guard<std::mutex> lock(mu);
  return cache.emplace(k, std::move(p)).first->second;
}

double lowest_neumann_eigenvalue(double nu, double L, int n) {
  if (!(nu > 0)) throw ConfigError("exponent must be positive");
  const double d = L / n, c = 1.0 / (12.0 * d * d);
  const double st[5] = {c, -16 * c, 30 * c, -16 * c, c};
  std::vector<Eigen::Triplet<double>> tr;
  for (int j = 0; j < n; ++j) {
    tr.emplace_back(j, j, std::pow(j * d, nu));
    for (int o = -2; o <= 2; ++o) {
      int col = j + o;
      if (col >= n) continue;
      tr.emplace_back(j, std::abs(col), st[o + 2]);  // even reflection
    }
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(tr.begin(), tr.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw ResonantTruncation("eigenvalue matrix is singular");
  // inverse iteration; the spectrum is real and positive
  Eigen::VectorXd x = Eigen::VectorXd::Ones(n);
  for (int j = 0; j < n; ++j) x(j) = std::exp(-std::pow(j * d, 2));
  x.normalize();
  double mu = 0;
  for (int it = 0; it < 1000; ++it) {
    Eigen::VectorXd y = lu.solve(x);
    double next = x.dot(x) / x.dot(y);
    x = y.normalized();
    if (it > 3 && std::abs(next - mu) < 1e-14 * std::abs(next)) return next;
    mu = next;
  }
  return mu;
}

double profile_apriori_constant(const NeumannProfile& p) {
  const double d = p.dy();
  double f2 = 0, d1 = 0, d2 = 0, w = 0;
  for (int j = 0; j <= p.n; ++j) {
    double y = j * d, tw = (j == 0 || j == p.n) ? 0.5 : 1.0;
    cplx F = p.F[j], dF = p.dF[j];
    cplx ddF = (cplx(0, std::pow(y, p.nu)) - p.theta) * F;
    f2 += tw * std::norm(F);
    d1 += tw * std::norm(dF);
    d2 += tw * std::norm(ddF);
    w += tw * std::pow(y, 2 * p.nu) * std::norm(dF);
  }
  return std::sqrt((f2 + d1 + d2) * d) + std::sqrt(w * d);
}

// ---------------------------------------------------------------- compatibility

json CompatibilitySolution::to_json() const {
  auto cj = [](cplx z) { return json::array({z.real(), z.imag()}); };
  return {{"l", l},           {"k", k},          {"nu", nu},          {"y0", y0},
          {"h", h},           {"delta", delta},  {"alpha", cj(alpha)}, {"gamma", cj(gamma)},
          {"lambda", cj(lambda)}, {"theta", cj(theta)}, {"alpha0", cj(alpha0)}, {"gamma0", cj(gamma0)},
          {"residual", residual}, {"iters", iters}, {"theta_in_range", theta_in_range}};
}

double compact_h(int l, int k, double y0) {
  return y0 / std::sqrt(double(k) * k * y0 * y0 + kPi * kPi * (l + 0.5) * (l + 0.5));
}

CompatibilitySolution solve_compatibility(int l, int k, double nu, double y0, const ProfileParams& pp) {
  if (!(y0 > 0)) throw ConfigError("y0 must be positive");
  if (l < 0 || k <= 0) throw ConfigError("mode indices must satisfy l >= 0, k > 0");
  CompatibilitySolution s;
  s.l = l;
  s.k = k;
  s.nu = nu;
  s.y0 = y0;
  s.h = compact_h(l, k, y0);
  s.delta = 1.0 / (nu + 2.0);
  const double h = s.h, hd = std::pow(h, s.delta);
  const double a = kPi * (l + 0.5) / y0;
  const double sgn = (l % 2 == 0) ? -1.0 : 1.0;  // (-1)^{l+1}
  const double theta_scale = std::pow(h, -2.0 * (nu + 1) / (nu + 2));

  auto lambda_of = [&](cplx g) { return a * h + g * h * hd; };
  auto alpha_of = [&](cplx g) { return sgn * (a + g * hd) * std::cos(g * y0 * hd); };
  auto G = [&](cplx g) {
    cplx lam = lambda_of(g);
    cplx th = theta_scale * lam * lam;
    cplx F0 = solve_neumann_profile(th, nu, pp.L, pp.n).F0();
    return alpha_of(g) * F0 - sgn * std::sin(g * y0 * hd) / hd;
  };

  const cplx F00 = cached_neumann_profile(0.0, nu, pp.L, pp.n).F0();
  s.gamma0 = a * F00 / y0;
  s.alpha0 = sgn * a;
  cplx g = s.gamma0;
  cplx Gg = G(g);
  int it = 0;
  for (; it < 60 && std::abs(Gg) > 1e-11; ++it) {
    const cplx e = 1e-7 * (1.0 + std::abs(g));
    cplx dG = (G(g + e) - Gg) / e;
    if (!(std::abs(dG) > 0)) throw NewtonDiverged("vanishing derivative in the matching conditions");
    g -= Gg / dG;
    Gg = G(g);
    if (!std::isfinite(std::abs(g)) || std::abs(g) > 1e6) throw NewtonDiverged("matching Newton iteration diverged");
  }
  if (std::abs(Gg) > 1e-10) throw NewtonDiverged("matching Newton iteration did not converge");
  s.iters = it;
  s.gamma = g;
  s.alpha = alpha_of(g);
  s.lambda = lambda_of(g);
  s.theta = theta_scale * s.lambda * s.lambda;
  // both matching equations at the returned pair
  cplx F0 = solve_neumann_profile(s.theta, nu, pp.L, pp.n).F0();
  double e1 = std::abs(s.alpha * F0 - sgn * std::sin(g * y0 * hd) / hd);
  double e2 = std::abs(s.alpha - sgn * (a + g * hd) * std::cos(g * y0 * hd));
  s.residual = std::max(e1, e2);
  static std::map<std::tuple<double, double, int>, double> mu0_cache;
  static std::mutex mu;
  double mu0;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_tuple(nu, pp.L, pp.n);
    auto itc = mu0_cache.find(key);
    if (itc == mu0_cache.end()) itc = mu0_cache.emplace(key, lowest_neumann_eigenvalue(nu, pp.L, pp.n)).first;
    mu0 = itc->second;
  }
  s.theta_in_range = std::abs(s.theta) <= mu0 / 4.0;
  return s;
}

// ---------------------------------------------------------------- T^2 quasimode

json OneDQuasimodeSpec::to_json() const {
  return {{"nu", nu}, {"y0", y0}, {"rho", rho}, {"l", l}, {"k", k},
          {"L", profile.L}, {"n", profile.n}, {"n_x", n_x}, {"n_y", n_y}};
}

OneDQuasimodeSpec OneDQuasimodeSpec::from_json(const json& j) {
  OneDQuasimodeSpec s;
  s.nu = j.value("nu", s.nu);
  s.y0 = j.value("y0", s.y0);
  s.rho = j.value("rho", s.rho);
  s.l = j.value("l", s.l);
  s.k = j.value("k", s.k);
  s.profile.L = j.value("L", s.profile.L);
  s.profile.n = j.value("n", s.profile.n);
  s.n_x = j.value("n_x", s.n_x);
  s.n_y = j.value("n_y", s.n_y);
  if (!(s.nu > 4)) throw ConfigError("compact-regime construction needs nu > 4");
  return s;
}

json T2Report::to_json() const {
  return {{"h", h},
          {"delta", delta},
          {"residual", residual},
          {"raw_norm", raw_norm},
          {"dy1", dy1},
          {"dy2", dy2},
          {"dx1", dx1},
          {"dx2", dx2},
          {"bprime_dy", bprime_dy},
          {"junction_defect", junction_defect},
          {"eigen_defect", eigen_defect},
          {"compat_distance", compat_distance},
          {"apriori", apriori},
          {"compat", compat.to_json()}};
}

T2Quasimode build_t2_quasimode(const OneDQuasimodeSpec& spec) {
  if (!(spec.nu > 4)) throw ConfigError("compact-regime construction needs nu > 4");
  if (!(spec.y0 > 0 && spec.y0 + spec.rho < kPi)) throw ConfigError("need 0 < y0 and y0 + rho < pi");
  T2Quasimode out;
  T2Report& rep = out.report;
  rep.compat = solve_compatibility(spec.l, spec.k, spec.nu, spec.y0, spec.profile);
  const CompatibilitySolution& cs = rep.compat;
  const double h = cs.h, hd = std::pow(h, cs.delta), y0 = spec.y0;
  rep.h = h;
  rep.delta = cs.delta;
  const NeumannProfile& P = cached_neumann_profile(cs.theta, spec.nu, spec.profile.L, spec.profile.n);
  const cplx lh = cs.lambda / h, al = cs.alpha;

  auto v = [&](double y) -> cplx {
    double a = std::abs(y);
    if (a <= y0) return std::cos(lh * a);
    return hd * al * P.value((a - y0) / hd);
  };
  auto dv = [&](double y) -> cplx {
    double a = std::abs(y), sg = y < 0 ? -1.0 : 1.0;
    if (a <= y0) return -sg * lh * std::sin(lh * a);
    return sg * al * P.deriv((a - y0) / hd);
  };
  auto d2v = [&](double y) -> cplx {
    double a = std::abs(y);
    if (a <= y0) return -lh * lh * std::cos(lh * a);
    return al / hd * P.second((a - y0) / hd);
  };

  // one-sided values and slopes at y0
  {
    cplx vl = std::cos(lh * y0), vr = hd * al * P.F0();
    cplx sl = -lh * std::sin(lh * y0), sr = al;
    rep.junction_defect = std::max(std::abs(vl - vr) / std::max(1.0, std::abs(vl)),
                                   std::abs(sl - sr) / std::max(1.0, std::abs(sl)));
    if (rep.junction_defect > 1e-6) throw GluingMismatch("one-sided traces at y0 disagree");
  }

  const DampingProfile b = DampingProfile::strip(spec.nu, y0, spec.rho);
  // 1D quadrature for the norm bounds
  {
    const int M = 16384;
    const double dy = kTwoPi / M;
    double n0 = 0, n1 = 0, n2 = 0, nb = 0;
    for (int i = 0; i < M; ++i) {
      double y = -kPi + i * dy;
      n0 += std::norm(v(y));
      cplx d1 = dv(y);
      n1 += std::norm(d1);
      n2 += std::norm(d2v(y));
      nb += std::pow(b.dy(0.0, y), 2) * std::norm(d1);
    }
    const double s = std::sqrt(kTwoPi * dy);  // x integral of |e^{ikx}|^2 is 2 pi
    rep.raw_norm = s * std::sqrt(n0);
    rep.dy1 = s * h * std::sqrt(n1);
    rep.dy2 = s * h * h * std::sqrt(n2);
    rep.bprime_dy = s * std::sqrt(nb);
    rep.dx1 = h * spec.k * rep.raw_norm;
    rep.dx2 = h * h * spec.k * spec.k * rep.raw_norm;
  }
  rep.eigen_defect = std::abs(1.0 - h * h * spec.k * spec.k - cs.lambda * cs.lambda);
  rep.compat_distance = std::max(std::abs(cs.alpha - cs.alpha0), std::abs(cs.gamma - cs.gamma0));
  rep.apriori = profile_apriori_constant(P);

  const int nx = spec.n_x > 0 ? spec.n_x : next_pow2(4.0 * spec.k);
  const TorusGrid g(nx, spec.n_y);
  out.u = GrushinField(g, h);
  std::vector<cplx> vy(g.n_y);
  for (int l = 0; l < g.n_y; ++l) vy[l] = v(g.y(l));
  for (int l = 0; l < g.n_y; ++l)
    for (int j = 0; j < g.n_x; ++j) out.u.at(j, l) = std::polar(1.0, spec.k * g.x(j)) * vy[l];
  const double nrm = out.u.norm();
  for (auto& z : out.u.v) z /= nrm;

  AssembleOptions ao;
  ao.quiet = true;
  auto op = SemiclassicalOperator::assemble(h, Potential::constant(1.0), b, g, cplx(1.0), ao);
  rep.residual = op.apply(out.u).norm();
  return out;
}

}  // namespace grushin
