// Grids, potentials, damping profiles, cutoffs and Hermite functions.
#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace grushin {

using cplx = std::complex<double>;
using json = nlohmann::json;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fourier collocation grid on [-pi,pi)^2. Points x_j = -pi + j*2pi/n_x.
struct TorusGrid {
  int n_x = 0;
  int n_y = 0;

  TorusGrid() = default;
  TorusGrid(int nx, int ny);

  double dx() const { return kTwoPi / n_x; }
  double dy() const { return kTwoPi / n_y; }
  double x(int j) const { return -kPi + j * dx(); }
  double y(int l) const { return -kPi + l * dy(); }
  std::size_t size() const { return std::size_t(n_x) * std::size_t(n_y); }
  bool operator==(const TorusGrid&) const = default;
};

// Signed frequency of DFT index i on an n-point grid, in [-n/2, n/2).
inline int signed_freq(int i, int n) { return i < n / 2 ? i : i - n; }
inline int wrap_index(int k, int n) { return ((k % n) + n) % n; }
int next_pow2(double v);
// Representative of an angle in [-pi, pi).
double wrap_angle(double a);

// Potential V(x) >= 0 with V(0)=V'(0)=0, V''(0)=2.
// cos_series: V = sum_m c_m (1 - cos(m x)), m = 1..; canonical is c = {2}.
// constant and quadratic are test hooks (V = v0, V = x^2 on the line).
class Potential {
 public:
  enum class Kind { cos_series, constant, quadratic };

  static Potential canonical();
  static Potential from_cos_series(std::vector<double> c);
  static Potential constant(double v0);
  static Potential quadratic();

  Kind kind() const { return kind_; }
  bool canonical_kind() const;
  double value(double x) const;
  double d1(double x) const;
  double d2(double x) const;
  // V and V' together, one sincos for the cosine series.
  void value_d1(double x, double& v, double& dv) const;
  // Taylor coefficients of V at 0: returns t with V ~ sum t[j] x^j, j <= order.
  std::vector<double> taylor(int order) const;
  // Mean (1/2pi) int V.
  double mean() const;
  // Throws ConfigError if normalization or positivity fails on the sample grid.
  void validate(int samples = 256) const;
  const std::vector<double>& coefficients() const { return c_; }
  double level() const { return v0_; }

  json to_json() const;
  static Potential from_json(const json& j);

 private:
  Kind kind_ = Kind::cos_series;
  std::vector<double> c_;
  double v0_ = 0.0;
};

struct CosTerm {
  double c = 0.0;
  int kx = 0;
  int ky = 0;
};

// b(x,y) >= 0 on the torus.
class DampingProfile {
 public:
  enum class Kind {
    constant,      // b = value
    egcc_bump,     // 0 near the origin, 1 outside a disc (radial smooth step)
    smooth_strip,  // y only: 0 on |y| < y_in, 1 on |y| >= y_out
    strip,         // y only: (|y| - y0)_+^nu on the band, then C^4 plateau
    finite_type,   // y only: |y - y0|^nu near y0, then C^4 plateau
    egcc_trig,     // (1 - cos^2(x/2) cos^2(y/2))^3, vanishes only at the origin
    custom         // sum of c cos(kx x) cos(ky y)
  };

  static DampingProfile constant(double c);
  static DampingProfile egcc_bump(double r_in = kPi / 8, double r_out = kPi / 4);
  static DampingProfile smooth_strip(double y_in = kPi / 4, double y_out = kPi / 2);
  // width < 0 selects the default transition (pi - y0 - rho)/2.
  static DampingProfile strip(double nu, double y0, double rho, double width = -1.0);
  static DampingProfile finite_type(double nu, double y0, double rho, double width = -1.0);
  static DampingProfile egcc_trig();
  static DampingProfile custom(std::vector<CosTerm> terms);

  Kind kind() const { return kind_; }
  std::string kind_name() const;
  double operator()(double x, double y) const;
  // d/dy of b.
  double dy(double x, double y) const;
  bool y_only() const;
  bool even_x() const;
  bool even_y() const;
  bool is_zero() const { return kind_ == Kind::constant && value_ == 0.0; }

  double nu() const { return nu_; }
  double y0() const { return y0_; }
  double rho() const { return rho_; }
  double width() const { return width_; }
  double plateau() const { return plateau_; }
  double value() const { return value_; }

  json to_json() const;
  static DampingProfile from_json(const json& j);

 private:
  // Profile as function of the distance s >= 0 past the vanishing set; derivative order 0..4.
  double radial(double s, int order) const;
  void build_transition();

  Kind kind_ = Kind::constant;
  double value_ = 0.0;
  double nu_ = 0.0, y0_ = 0.0, rho_ = 0.0, width_ = 0.0, plateau_ = 0.0;
  double r_in_ = 0.0, r_out_ = 0.0;
  std::vector<double> poly_;  // transition polynomial in (s - rho), degree 9
  std::vector<CosTerm> terms_;
};

// Smooth cutoffs built from the exp(-1/t) step.
double smooth_step(double t);       // 0 for t <= 0, 1 for t >= 1
double chi0(double eta);            // 1 on |eta| <= 1/2, 0 on |eta| >= 1
double chi1(double eta);            // 1 on [3/4, 3/2], 0 outside (1/2, 2) in |eta|
double chi0_tilde(double t);        // chi0(t/2)
double upsilon(double eta, double R);  // chi0(eta/R) - chi0(R eta)
// Bump on (a, b) equal to 1 on [c, d], a < c < d < b.
double plateau_bump(double t, double a, double c, double d, double b);

// Orthonormal Hermite functions psi_0..psi_K at xi; zeros for |xi| > 40.
std::vector<double> hermite_functions(int K, double xi);
// L^2-normalized eigenfunction of -d^2 + eta^2 x^2, eta > 0.
double hermite_function(int k, double eta, double x);

// Gauss-Hermite rule for weight exp(-xi^2): nodes and scaled weights w*exp(xi^2),
// so that int f(xi) dxi ~ sum scaled_w f(xi_m) for f ~ Hermite function products.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> scaled_weights;
};
GaussHermite gauss_hermite(int n);

}  // namespace grushin
