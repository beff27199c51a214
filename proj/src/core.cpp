#include "grushin/core.hpp"

#include <algorithm>

#include <Eigen/Dense>

namespace grushin {

TorusGrid::TorusGrid(int nx, int ny) : n_x(nx), n_y(ny) {
  if (nx < 4 || ny < 4 || nx % 2 || ny % 2)
    throw ConfigError("grid sizes must be even and >= 4");
}

int next_pow2(double v) {
  int n = 1;
  while (n < v) n *= 2;
  return n;
}

// ---------------------------------------------------------------- potential

Potential Potential::canonical() { return from_cos_series({2.0}); }

Potential Potential::from_cos_series(std::vector<double> c) {
  Potential p;
  p.kind_ = Kind::cos_series;
  p.c_ = std::move(c);
  return p;
}

Potential Potential::constant(double v0) {
  Potential p;
  p.kind_ = Kind::constant;
  p.v0_ = v0;
  return p;
}

Potential Potential::quadratic() {
  Potential p;
  p.kind_ = Kind::quadratic;
  return p;
}

bool Potential::canonical_kind() const {
  return kind_ == Kind::cos_series && c_.size() == 1 && c_[0] == 2.0;
}

double Potential::value(double x) const {
  switch (kind_) {
    case Kind::constant: return v0_;
    case Kind::quadratic: return x * x;
    default: break;
  }
  double v = 0.0;
  for (std::size_t m = 0; m < c_.size(); ++m) v += c_[m] * (1.0 - std::cos(double(m + 1) * x));
  return v;
}

void Potential::value_d1(double x, double& v, double& dv) const {
  if (kind_ != Kind::cos_series) {
    v = value(x);
    dv = d1(x);
    return;
  }
  const double c = std::cos(x), s = std::sin(x);
  double cm = c, sm = s;
  v = dv = 0.0;
  for (std::size_t m = 0; m < c_.size(); ++m) {
    v += c_[m] * (1.0 - cm);
    dv += c_[m] * double(m + 1) * sm;
    const double cn = cm * c - sm * s;
    sm = sm * c + cm * s;
    cm = cn;
  }
}

double Potential::d1(double x) const {
  switch (kind_) {
    case Kind::constant: return 0.0;
    case Kind::quadratic: return 2.0 * x;
    default: break;
  }
  double v = 0.0;
  for (std::size_t m = 0; m < c_.size(); ++m) {
    double k = double(m + 1);
    v += c_[m] * k * std::sin(k * x);
  }
  return v;
}

double Potential::d2(double x) const {
  switch (kind_) {
    case Kind::constant: return 0.0;
    case Kind::quadratic: return 2.0;
    default: break;
  }
  double v = 0.0;
  for (std::size_t m = 0; m < c_.size(); ++m) {
    double k = double(m + 1);
    v += c_[m] * k * k * std::cos(k * x);
  }
  return v;
}

std::vector<double> Potential::taylor(int order) const {
  std::vector<double> t(order + 1, 0.0);
  if (kind_ == Kind::constant) {
    t[0] = v0_;
    return t;
  }
  if (kind_ == Kind::quadratic) {
    if (order >= 2) t[2] = 1.0;
    return t;
  }
  for (int j = 1; 2 * j <= order; ++j) {
    double fact = std::tgamma(2.0 * j + 1.0);
    double sgn = (j % 2) ? 1.0 : -1.0;
    double s = 0.0;
    for (std::size_t m = 0; m < c_.size(); ++m) s += c_[m] * std::pow(double(m + 1), 2 * j);
    t[2 * j] = sgn * s / fact;
  }
  return t;
}

double Potential::mean() const {
  switch (kind_) {
    case Kind::constant: return v0_;
    case Kind::quadratic: return kPi * kPi / 3.0;
    default: break;
  }
  double s = 0.0;
  for (double c : c_) s += c;
  return s;
}

void Potential::validate(int samples) const {
  if (kind_ != Kind::cos_series) return;
  if (std::abs(value(0.0)) > 1e-10 || std::abs(d1(0.0)) > 1e-10 || std::abs(d2(0.0) - 2.0) > 1e-10)
    throw ConfigError("potential must satisfy V(0)=V'(0)=0, V''(0)=2");
  for (int j = 0; j < samples; ++j) {
    double x = -kPi + j * kTwoPi / samples;
    if (j != samples / 2 && value(x) <= 0.0) throw ConfigError("potential must be positive away from 0");
  }
}

json Potential::to_json() const {
  switch (kind_) {
    case Kind::constant: return {{"kind", "constant"}, {"value", v0_}};
    case Kind::quadratic: return {{"kind", "quadratic"}};
    default: break;
  }
  if (canonical_kind()) return {{"kind", "canonical"}};
  return {{"kind", "cos_series"}, {"c", c_}};
}

Potential Potential::from_json(const json& j) {
  std::string k = j.value("kind", "canonical");
  Potential p;
  if (k == "canonical") p = canonical();
  else if (k == "cos_series") p = from_cos_series(j.at("c").get<std::vector<double>>());
  else if (k == "constant") p = constant(j.at("value").get<double>());
  else if (k == "quadratic") p = quadratic();
  else throw ConfigError("unknown potential kind: " + k);
  p.validate();
  return p;
}

// ---------------------------------------------------------------- damping

double wrap_angle(double y) {
  double w = std::fmod(y + kPi, kTwoPi);
  if (w < 0) w += kTwoPi;
  return w - kPi;
}

namespace {

// m-th derivative of s^nu at s > 0
double power_deriv(double s, double nu, int m) {
  double c = 1.0;
  for (int i = 0; i < m; ++i) c *= (nu - i);
  return c * std::pow(s, nu - m);
}

}  // namespace

DampingProfile DampingProfile::constant(double c) {
  if (c < 0) throw ConfigError("damping must be nonnegative");
  DampingProfile d;
  d.kind_ = Kind::constant;
  d.value_ = c;
  return d;
}

DampingProfile DampingProfile::egcc_bump(double r_in, double r_out) {
  if (!(0 < r_in && r_in < r_out && r_out < kPi)) throw ConfigError("egcc_bump needs 0 < r_in < r_out < pi");
  DampingProfile d;
  d.kind_ = Kind::egcc_bump;
  d.r_in_ = r_in;
  d.r_out_ = r_out;
  return d;
}

DampingProfile DampingProfile::smooth_strip(double y_in, double y_out) {
  if (!(0 <= y_in && y_in < y_out && y_out <= kPi)) throw ConfigError("smooth_strip needs 0 <= y_in < y_out <= pi");
  DampingProfile d;
  d.kind_ = Kind::smooth_strip;
  d.r_in_ = y_in;
  d.r_out_ = y_out;
  return d;
}

DampingProfile DampingProfile::strip(double nu, double y0, double rho, double width) {
  DampingProfile d;
  d.kind_ = Kind::strip;
  d.nu_ = nu;
  d.y0_ = y0;
  d.rho_ = rho;
  d.width_ = width < 0 ? (kPi - y0 - rho) / 2.0 : width;
  if (nu <= 0 || y0 < 0 || rho <= 0 || d.width_ <= 0 || y0 + rho + d.width_ > kPi + 1e-12)
    throw ConfigError("strip needs nu > 0, y0 >= 0, rho > 0 and y0 + rho + width <= pi");
  d.build_transition();
  return d;
}

DampingProfile DampingProfile::finite_type(double nu, double y0, double rho, double width) {
  DampingProfile d;
  d.kind_ = Kind::finite_type;
  d.nu_ = nu;
  d.y0_ = y0;
  d.rho_ = rho;
  d.width_ = width < 0 ? (kPi - rho) / 2.0 : width;
  if (nu <= 0 || rho <= 0 || d.width_ <= 0 || rho + d.width_ > kPi + 1e-12)
    throw ConfigError("finite_type needs nu > 0, rho > 0 and rho + width <= pi");
  d.build_transition();
  return d;
}

DampingProfile DampingProfile::egcc_trig() {
  DampingProfile d;
  d.kind_ = Kind::egcc_trig;
  return d;
}

DampingProfile DampingProfile::custom(std::vector<CosTerm> terms) {
  DampingProfile d;
  d.kind_ = Kind::custom;
  d.terms_ = std::move(terms);
  // nonnegativity on a sample grid
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (d(-kPi + i * kTwoPi / 64, -kPi + j * kTwoPi / 64) < -1e-12)
        throw ConfigError("custom damping must be nonnegative");
  return d;
}

// Degree-9 Hermite interpolant on [rho, rho+w]: matches s^nu to 4 derivatives at rho,
// constant plateau (linear continuation at the midpoint) at rho+w.
void DampingProfile::build_transition() {
  const double w = width_;
  plateau_ = std::pow(rho_, nu_) + nu_ * std::pow(rho_, nu_ - 1) * w / 2.0;
  Eigen::Matrix<double, 10, 10> M = Eigen::Matrix<double, 10, 10>::Zero();
  Eigen::Matrix<double, 10, 1> rhs;
  for (int m = 0; m < 5; ++m) {
    // derivative m at t=0: m! p_m
    M(m, m) = std::tgamma(m + 1.0);
    rhs(m) = power_deriv(rho_, nu_, m);
    // derivative m at t=w
    for (int i = m; i < 10; ++i) M(5 + m, i) = std::tgamma(i + 1.0) / std::tgamma(i - m + 1.0) * std::pow(w, i - m);
    rhs(5 + m) = m == 0 ? plateau_ : 0.0;
  }
  Eigen::Matrix<double, 10, 1> p = M.fullPivLu().solve(rhs);
  poly_.assign(p.data(), p.data() + 10);
  for (int i = 0; i <= 200; ++i)
    if (radial(rho_ + w * i / 200.0, 0) < 0) throw ConfigError("transition polynomial goes negative; widen the band");
}

double DampingProfile::radial(double s, int order) const {
  if (s <= 0) return 0.0;
  if (s <= rho_) return power_deriv(s, nu_, order);
  if (s >= rho_ + width_) return order == 0 ? plateau_ : 0.0;
  double t = s - rho_;
  double v = 0.0;
  for (int i = 9; i >= order; --i) {
    double c = poly_[i] * std::tgamma(i + 1.0) / std::tgamma(i - order + 1.0);
    v = v * t + c;
  }
  return v;
}

double DampingProfile::operator()(double x, double y) const {
  switch (kind_) {
    case Kind::constant: return value_;
    case Kind::egcc_bump: {
      double xw = wrap_angle(x), yw = wrap_angle(y);
      double r = std::sqrt(xw * xw + yw * yw);
      return smooth_step((r - r_in_) / (r_out_ - r_in_));
    }
    case Kind::smooth_strip: return smooth_step((std::abs(wrap_angle(y)) - r_in_) / (r_out_ - r_in_));
    case Kind::strip: return radial(std::abs(wrap_angle(y)) - y0_, 0);
    case Kind::finite_type: return radial(std::abs(wrap_angle(y - y0_)), 0);
    case Kind::egcc_trig: {
      double cx = std::cos(x / 2), cy = std::cos(y / 2);
      double u = 1.0 - cx * cx * cy * cy;
      return u * u * u;
    }
    case Kind::custom: {
      double v = 0.0;
      for (const auto& t : terms_) v += t.c * std::cos(t.kx * x) * std::cos(t.ky * y);
      return v;
    }
  }
  return 0.0;
}

double DampingProfile::dy(double x, double y) const {
  switch (kind_) {
    case Kind::constant: return 0.0;
    case Kind::strip: {
      double yw = wrap_angle(y);
      return (yw < 0 ? -1.0 : 1.0) * radial(std::abs(yw) - y0_, 1);
    }
    case Kind::finite_type: {
      double s = wrap_angle(y - y0_);
      return (s < 0 ? -1.0 : 1.0) * radial(std::abs(s), 1);
    }
    case Kind::egcc_trig: {
      double cx = std::cos(x / 2), cy = std::cos(y / 2);
      double u = 1.0 - cx * cx * cy * cy;
      return 3.0 * u * u * cx * cx * std::sin(y) / 2.0;
    }
    case Kind::custom: {
      double v = 0.0;
      for (const auto& t : terms_) v -= t.c * t.ky * std::cos(t.kx * x) * std::sin(t.ky * y);
      return v;
    }
    default: {
      const double e = 1e-6;
      return ((*this)(x, y + e) - (*this)(x, y - e)) / (2 * e);
    }
  }
}

bool DampingProfile::y_only() const {
  switch (kind_) {
    case Kind::constant:
    case Kind::smooth_strip:
    case Kind::strip:
    case Kind::finite_type: return true;
    case Kind::custom:
      return std::all_of(terms_.begin(), terms_.end(), [](const CosTerm& t) { return t.kx == 0; });
    default: return false;
  }
}

bool DampingProfile::even_x() const { return true; }

bool DampingProfile::even_y() const {
  if (kind_ == Kind::finite_type) return std::abs(std::sin(y0_)) < 1e-15;
  return true;
}

std::string DampingProfile::kind_name() const {
  switch (kind_) {
    case Kind::constant: return "constant";
    case Kind::egcc_bump: return "egcc_bump";
    case Kind::smooth_strip: return "smooth_strip";
    case Kind::strip: return "strip";
    case Kind::finite_type: return "finite_type";
    case Kind::egcc_trig: return "egcc_trig";
    case Kind::custom: return "custom";
  }
  return "?";
}

json DampingProfile::to_json() const {
  json j{{"kind", kind_name()}};
  switch (kind_) {
    case Kind::constant: j["value"] = value_; break;
    case Kind::egcc_bump: j["r_in"] = r_in_; j["r_out"] = r_out_; break;
    case Kind::smooth_strip: j["y_in"] = r_in_; j["y_out"] = r_out_; break;
    case Kind::strip:
    case Kind::finite_type:
      j["nu"] = nu_; j["y0"] = y0_; j["rho"] = rho_; j["width"] = width_;
      break;
    case Kind::egcc_trig: break;
    case Kind::custom: {
      json t = json::array();
      for (const auto& c : terms_) t.push_back({{"c", c.c}, {"kx", c.kx}, {"ky", c.ky}});
      j["terms"] = t;
      break;
    }
  }
  return j;
}

DampingProfile DampingProfile::from_json(const json& j) {
  std::string k = j.at("kind").get<std::string>();
  if (k == "constant") return constant(j.value("value", 0.0));
  if (k == "egcc_bump") return egcc_bump(j.value("r_in", kPi / 8), j.value("r_out", kPi / 4));
  if (k == "smooth_strip") return smooth_strip(j.value("y_in", kPi / 4), j.value("y_out", kPi / 2));
  if (k == "strip")
    return strip(j.at("nu").get<double>(), j.at("y0").get<double>(), j.at("rho").get<double>(), j.value("width", -1.0));
  if (k == "finite_type")
    return finite_type(j.at("nu").get<double>(), j.value("y0", 0.0), j.at("rho").get<double>(), j.value("width", -1.0));
  if (k == "egcc_trig") return egcc_trig();
  if (k == "custom") {
    std::vector<CosTerm> terms;
    for (const auto& t : j.at("terms")) terms.push_back({t.at("c").get<double>(), t.value("kx", 0), t.value("ky", 0)});
    return custom(std::move(terms));
  }
  throw ConfigError("unknown damping kind: " + k);
}

// ---------------------------------------------------------------- cutoffs

double smooth_step(double t) {
  if (t <= 0) return 0.0;
  if (t >= 1) return 1.0;
  double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

double chi0(double eta) { return 1.0 - smooth_step((std::abs(eta) - 0.5) / 0.5); }

double chi1(double eta) {
  double a = std::abs(eta);
  return smooth_step((a - 0.5) / 0.25) * (1.0 - smooth_step((a - 1.5) / 0.5));
}

double chi0_tilde(double t) { return chi0(t / 2.0); }

double upsilon(double eta, double R) { return chi0(eta / R) - chi0(R * eta); }

double plateau_bump(double t, double a, double c, double d, double b) {
  return smooth_step((t - a) / (c - a)) * (1.0 - smooth_step((t - d) / (b - d)));
}

// ---------------------------------------------------------------- Hermite

std::vector<double> hermite_functions(int K, double xi) {
  std::vector<double> p(K + 1, 0.0);
  if (std::abs(xi) > 40.0) return p;
  p[0] = std::pow(kPi, -0.25) * std::exp(-0.5 * xi * xi);
  if (K >= 1) p[1] = std::sqrt(2.0) * xi * p[0];
  for (int k = 1; k < K; ++k)
    p[k + 1] = std::sqrt(2.0 / (k + 1)) * xi * p[k] - std::sqrt(double(k) / (k + 1)) * p[k - 1];
  return p;
}

double hermite_function(int k, double eta, double x) {
  return std::pow(eta, 0.25) * hermite_functions(k, x * std::sqrt(eta))[k];
}

GaussHermite gauss_hermite(int n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k + 1 < n; ++k) J(k, k + 1) = J(k + 1, k) = std::sqrt((k + 1) / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J, Eigen::EigenvaluesOnly);
  GaussHermite g;
  g.nodes.assign(es.eigenvalues().data(), es.eigenvalues().data() + n);
  for (int k = 0; k < n / 2; ++k) {  // symmetrize
    double a = 0.5 * (g.nodes[n - 1 - k] - g.nodes[k]);
    g.nodes[k] = -a;
    g.nodes[n - 1 - k] = a;
  }
  if (n % 2) g.nodes[n / 2] = 0.0;
  for (double xi : g.nodes) {
    auto p = hermite_functions(n - 1, xi);
    double s = 0.0;
    for (double v : p) s += v * v;
    g.scaled_weights.push_back(1.0 / s);
  }
  return g;
}

}  // namespace grushin
