// Explicit quasimodes: Hermite wave packets in the subelliptic window and
// glued cosine/boundary-layer modes for the flat operator in the compact regime.
#pragma once

#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "grushin/normalform.hpp"
#include "grushin/operator.hpp"

namespace grushin {

struct SupportViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct QuadratureUnderresolved : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct WindowTooWide : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ResonantTruncation : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NewtonDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GluingMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- subelliptic packets

enum class QuasimodeRegime { outside_damping, within_damping_strip, within_damping_narrow };
std::string regime_name(QuasimodeRegime r);
QuasimodeRegime regime_from_name(const std::string& s);

// Damping-rate shift beta_h of the target energy 1 + i h beta_h.
struct BetaRule {
  enum class Kind { zero, fixed, strip_log, narrow_log };
  Kind kind = Kind::zero;
  double c1 = 0.0;     // coefficient for the log rules
  double value = 0.0;  // for fixed
  // strip_log: c1 h log(1/h); narrow_log: c1 (h log(1/h))^{nu/(nu+1)}.
  double eval(double h, double nu) const;
  json to_json() const;
  static BetaRule from_json(const json& j);
};

struct SubellipticQuasimodeSpec {
  QuasimodeRegime regime = QuasimodeRegime::outside_damping;
  Potential potential = Potential::canonical();
  DampingProfile damping = DampingProfile::constant(0.0);
  // Packet center for outside_damping; band edge for the strip; vanishing point
  // for the narrow regime. NaN takes the damping profile's y0.
  double y0 = std::numeric_limits<double>::quiet_NaN();
  double T0 = 0.35;        // time window half-length (outside and strip regimes)
  BetaRule beta;
  int taylor_order = 4;
  int hermite_band = 6;    // normal-form corrections kept for k <= band
  double c_x = 12.0;       // n_x = next_pow2(c_x / h)
  double c_y = 4.0;        // n_y = next_pow2(c_y / h^2)
  bool mirror = false;     // eta < 0 branch (packet centered at +y0 for the strip)

  double center() const;   // y coordinate the packet sits on at t = 0
  json to_json() const;
  static SubellipticQuasimodeSpec from_json(const json& j);
};

// Time weight Lambda(t) = C g(t) exp(t gamma - b0(t)/h) on a uniform grid.
struct WeightFunction {
  std::vector<double> t;
  std::vector<double> lambda, lambda_dagger;  // Lambda and C g'(t) exp(...)
  std::vector<double> b0;                     // int_0^t b(c - s) ds
  double C = 0.0;                             // normalizing constant
  double gamma = 0.0;                         // beta_h / h
  double dt = 0.0;

  // int Lambda(t) e^{-i t tau} dt by the trapezoid rule.
  cplx hat(double tau) const;
  // Fraction of ||Lambda||^2 carried by |t| <= r.
  double mass_within(double r) const;
  double l2_norm() const;
};

// tau_max bounds |tau| for later hat() calls; the grid resolves it.
WeightFunction build_weight(const SubellipticQuasimodeSpec& spec, double h, double tau_max = 0.0);

struct QuasimodeReport {
  std::string regime;
  double h = 0.0, beta_h = 0.0;
  double residual = 0.0;        // ||(P - 1 - i h beta_h) psi|| for ||psi|| = 1
  double damped_mass = 0.0;     // ||b^{1/2} psi||
  double concentration = 0.0;   // mass in the ball of radius 0.2 around the packet center
  double upsilon_mass = 0.0;    // ||Upsilon_8(h^2 D_y) psi||
  double norm_error = 0.0;      // | ||psi|| - 1 |
  double weight_C = 0.0;
  int n_x = 0, n_y = 0, modes = 0;
  json to_json() const;
};

struct SubellipticQuasimode {
  GrushinField psi;
  QuasimodeReport report;
};

SubellipticQuasimode build_outside_quasimode(const SubellipticQuasimodeSpec& spec, double h);
SubellipticQuasimode build_damped_quasimode(const SubellipticQuasimodeSpec& spec, double h);
// Dispatch on spec.regime.
SubellipticQuasimode build_subelliptic_quasimode(const SubellipticQuasimodeSpec& spec, double h);

// Mass of |u|^2 in the disc of radius r around (x0, y0), periodic distance.
double ball_mass(const GrushinField& u, double x0, double y0, double r);
// ||Upsilon_R(h^2 D_y) u||.
double upsilon_mass(const GrushinField& u, double R);

// ---------------------------------------------------------------- compact regime

// Boundary layer -F'' + i y^nu F - theta F = 0 on [0, L], F'(0) = 1, F(L) = 0.
struct NeumannProfile {
  cplx theta;
  double nu = 0.0, L = 0.0;
  int n = 0;
  std::vector<cplx> F, dF;  // values and derivatives at y_j = j L / n
  cplx F0() const { return F.front(); }
  double dy() const { return L / n; }
  cplx value(double s) const;  // 0 beyond L
  cplx deriv(double s) const;
  cplx second(double s) const { return (cplx(0, std::pow(s, nu)) - theta) * value(s); }
};

// Fourth-order finite differences, Neumann datum through Taylor ghost points.
NeumannProfile solve_neumann_profile(cplx theta, double nu, double L = 12.0, int n = 4000);
// Memoized by (theta, nu, L, n); thread safe.
const NeumannProfile& cached_neumann_profile(cplx theta, double nu, double L = 12.0, int n = 4000);
// Lowest eigenvalue of -d^2 + y^nu on [0, L], Neumann at 0, Dirichlet at L.
double lowest_neumann_eigenvalue(double nu, double L = 12.0, int n = 4000);
// ||F||_{H^2(0,L)} + ||y^nu F'||_{L^2(0,L)}.
double profile_apriori_constant(const NeumannProfile& p);

struct CompatibilitySolution {
  int l = 0, k = 0;
  double nu = 0.0, y0 = 0.0, h = 0.0, delta = 0.0;
  cplx alpha, gamma, lambda, theta;
  cplx alpha0, gamma0;
  double residual = 0.0;  // max modulus of the two matching equations
  int iters = 0;
  bool theta_in_range = true;  // |theta| <= mu0 / 4
  json to_json() const;
};

struct ProfileParams {
  double L = 12.0;
  int n = 4000;
};

double compact_h(int l, int k, double y0);
// Newton on the matching conditions at y0, seeded at the leading-order pair.
CompatibilitySolution solve_compatibility(int l, int k, double nu, double y0, const ProfileParams& pp = {});

struct OneDQuasimodeSpec {
  double nu = 5.0;
  double y0 = 1.0;
  double rho = 2.0;
  int l = 0;
  int k = 16;
  ProfileParams profile;
  int n_x = 0;     // default: next_pow2(4 k)
  int n_y = 1024;
  json to_json() const;
  static OneDQuasimodeSpec from_json(const json& j);
};

struct T2Report {
  double h = 0.0, delta = 0.0;
  double residual = 0.0;        // ||(P - 1) u|| / ||u||, flat operator
  double raw_norm = 0.0;        // ||u_h|| before normalization, bound (a)
  double dy1 = 0.0, dy2 = 0.0;  // ||h^j d_y^j u_h||, bound (b)
  double dx1 = 0.0, dx2 = 0.0;
  double bprime_dy = 0.0;       // ||b'(y) d_y u_h||, bound (c)
  double junction_defect = 0.0; // relative mismatch of one-sided values and slopes at y0
  double eigen_defect = 0.0;    // |1 - h^2 k^2 - lambda^2|
  double compat_distance = 0.0; // |(alpha, gamma) - (alpha0, gamma0)|
  double apriori = 0.0;         // profile a-priori constant
  CompatibilitySolution compat;
  json to_json() const;
};

struct T2Quasimode {
  GrushinField u;  // normalized
  T2Report report;
};

T2Quasimode build_t2_quasimode(const OneDQuasimodeSpec& spec);

}  // namespace grushin
