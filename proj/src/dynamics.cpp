#include "grushin/dynamics.hpp"

#include <algorithm>
#include <atomic>
#include <iomanip>
#include <ostream>
#include <thread>
#include <utility>

namespace grushin {

PhasePoint PhasePoint::wrapped(const Potential& p) const {
  PhasePoint q = *this;
  q.y = wrap_angle(y);
  if (p.kind() != Potential::Kind::quadratic) q.x = wrap_angle(x);
  return q;
}

json PhasePoint::to_json() const { return {{"x", x}, {"y", y}, {"xi", xi}, {"eta", eta}}; }

namespace {

// Exact sub-flows of the two pieces of p.
inline void drift_x(PhasePoint& s, double h) { s.x += 2.0 * s.xi * h; }
inline void kick(PhasePoint& s, const Potential& p, double h) {
  const double e = s.eta;
  double v, dv;
  p.value_d1(s.x, v, dv);
  s.y += 2.0 * v * e * h;
  s.xi -= dv * e * e * h;
}

void strang(PhasePoint& s, const Potential& p, double h) {
  drift_x(s, 0.5 * h);
  kick(s, p, h);
  drift_x(s, 0.5 * h);
}

const double kYw1 = 1.0 / (2.0 - std::cbrt(2.0));
const double kYw0 = -std::cbrt(2.0) / (2.0 - std::cbrt(2.0));

void yoshida_step(PhasePoint& s, const Potential& p, double h) {
  strang(s, p, kYw1 * h);
  strang(s, p, kYw0 * h);
  strang(s, p, kYw1 * h);
}

void rk4_step(PhasePoint& s, const Potential& p, double h) {
  const double e = s.eta;
  auto f = [&](double x, double xi, double& dx, double& dy, double& dxi) {
    dx = 2.0 * xi;
    dy = 2.0 * p.value(x) * e;
    dxi = -p.d1(x) * e * e;
  };
  double k1x, k1y, k1p, k2x, k2y, k2p, k3x, k3y, k3p, k4x, k4y, k4p;
  f(s.x, s.xi, k1x, k1y, k1p);
  f(s.x + 0.5 * h * k1x, s.xi + 0.5 * h * k1p, k2x, k2y, k2p);
  f(s.x + 0.5 * h * k2x, s.xi + 0.5 * h * k2p, k3x, k3y, k3p);
  f(s.x + h * k3x, s.xi + h * k3p, k4x, k4y, k4p);
  s.x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
  s.y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
  s.xi += h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p);
}

bool near_equilibrium(const PhasePoint& s, const Potential& p) {
  return std::abs(s.xi) < 1e-4 && std::abs(p.d1(s.x)) * s.eta * s.eta < 1e-4;
}

// Calls visit(step, t, state, drift) for step = 0..n; drift is the latest monitored value.
template <class Visit>
void integrate(const PhasePoint& start, const Potential& p, double T, double dt, const FlowOptions& opt,
               Visit&& visit) {
  const double e0 = start.energy(p);
  if (!(e0 > 0)) throw ConfigError("flow needs a start with positive energy");
  if (!(std::abs(dt) > 0) || std::abs(dt) > max_flow_step(start.eta) * (1 + 1e-12))
    throw ConfigError("flow step must satisfy 0 < dt <= 1e-3 min(1, 1/|eta|)");
  const long n = T == 0.0 ? 0 : long(std::ceil(std::abs(T) / std::abs(dt) - 1e-9));
  const double h = n ? T / double(n) : 0.0;
  PhasePoint s = start;
  double d = 0.0;
  visit(0L, 0.0, s, 0.0);
  for (long i = 1; i <= n; ++i) {
    if (opt.integrator == Integrator::yoshida4)
      yoshida_step(s, p, h);
    else
      rk4_step(s, p, h);
    // drift is monitored every 8 steps and on the last one
    if (i % 8 == 0 || i == n) {
      d = std::abs(s.energy(p) - e0) / e0;
      if (d > opt.drift_tol) throw EnergyDriftExceeded("relative energy drift " + std::to_string(d));
    }
    visit(i, i == n ? T : i * h, s, d);
  }
}

}  // namespace

Trajectory flow_elliptic(const PhasePoint& start, const Potential& p, double T, double dt, const FlowOptions& opt) {
  Trajectory tr;
  const long every = std::max(1, opt.sample_every);
  const long n = T == 0.0 ? 0 : long(std::ceil(std::abs(T) / std::abs(dt) - 1e-9));
  const double e0 = start.energy(p);
  integrate(start, p, T, dt, opt, [&](long i, double t, const PhasePoint& s, double d) {
    if (near_equilibrium(s, p)) tr.near_critical = true;
    if (i % every == 0 || i == n) {
      d = std::abs(s.energy(p) - e0) / e0;
      if (d > opt.drift_tol) throw EnergyDriftExceeded("relative energy drift " + std::to_string(d));
      tr.max_drift = std::max(tr.max_drift, d);
      tr.t.push_back(t);
      tr.pts.push_back(s);
      tr.drift.push_back(d);
    }
  });
  return tr;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& tr, const Potential& p, const DampingProfile& d) {
  out << "t,x,y,xi,eta,p,b\n" << std::setprecision(17);
  for (std::size_t i = 0; i < tr.t.size(); ++i) {
    const PhasePoint& s = tr.pts[i];
    PhasePoint w = s.wrapped(p);
    out << tr.t[i] << ',' << w.x << ',' << w.y << ',' << w.xi << ',' << w.eta << ',' << s.energy(p) << ','
        << d(w.x, w.y) << '\n';
  }
}

double flow_vertical(double y, int sign, double t) { return wrap_angle(y + (sign < 0 ? -t : t)); }

namespace {

double max_potential(const Potential& p) {
  if (p.kind() == Potential::Kind::quadratic) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (int j = 0; j < 4096; ++j) m = std::max(m, p.value(-kPi + j * kTwoPi / 4096));
  return m;
}

// First zero of f on the ray from c in direction dir, or NaN past 2 pi.
template <class F>
double turning_point(F&& f, double c, double dir) {
  double s = 1e-7, inside = 0.0;
  while (s <= kTwoPi) {
    if (f(c + dir * s) <= 0) {
      double a = inside, b = s;
      for (int it = 0; it < 200 && b - a > 1e-15 * (1 + b); ++it) {
        double m = 0.5 * (a + b);
        (f(c + dir * m) > 0 ? a : b) = m;
      }
      return c + dir * a;
    }
    inside = s;
    s *= 1.25;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

PeriodEstimate estimate_periods(const PhasePoint& start, const Potential& p) {
  PeriodEstimate pe;
  const double E = start.energy(p), e = start.eta;
  if (!(E > 0)) throw ConfigError("period estimate needs positive energy");
  if (e == 0.0) {
    pe.horizontal = kPi / std::abs(start.xi);
    return pe;
  }
  auto f = [&](double x) { return E - p.value(x) * e * e; };
  double c = start.x;
  if (f(c) <= 1e-14 * E) c -= 1e-6 * (p.d1(c) > 0 ? 1.0 : -1.0);
  double xm = turning_point(f, c, -1.0), xp = turning_point(f, c, 1.0);
  double tau = 0, vint = 0;
  const int n = 4000;
  if (std::isfinite(xm) && std::isfinite(xp)) {
    pe.confined = true;
    // x = mid + r sin(th) removes the square-root endpoint singularities
    const double mid = 0.5 * (xp + xm), r = 0.5 * (xp - xm);
    for (int j = 0; j < n; ++j) {
      double th = -kPi / 2 + (j + 0.5) * kPi / n;
      double x = mid + r * std::sin(th), w = r * std::cos(th) * kPi / n / std::sqrt(std::max(f(x), 1e-300));
      tau += w;
      vint += p.value(x) * w;
    }
    pe.horizontal = tau;
    pe.vertical = kTwoPi * tau / std::abs(2.0 * e * vint);
  } else {
    for (int j = 0; j < n; ++j) {
      double x = -kPi + j * kTwoPi / n, w = kTwoPi / n / (2.0 * std::sqrt(f(x)));
      tau += w;
      vint += p.value(x) * w;
    }
    pe.horizontal = tau;
    pe.vertical = kTwoPi * tau / std::abs(2.0 * e * vint);
  }
  return pe;
}

namespace {

struct Average {
  double value = 0.0;
  bool near_critical = false;
};

// Lockstep averages for starts sharing eta (hence step and step count); independent
// trajectories interleave so their trig calls overlap. Per-trajectory arithmetic is the
// same as a batch of one.
std::vector<Average> average_batch(const std::vector<PhasePoint>& starts, const DampingProfile& d,
                                   const Potential& p, double T, double dt, const FlowOptions& fo) {
  const std::size_t m = starts.size();
  std::vector<Average> out(m);
  if (m == 0) return out;
  const double eta = starts[0].eta;
  std::vector<double> e0(m);
  for (std::size_t k = 0; k < m; ++k) {
    if (starts[k].eta != eta) throw std::invalid_argument("batched starts must share eta");
    e0[k] = starts[k].energy(p);
    if (!(e0[k] > 0)) throw ConfigError("flow needs a start with positive energy");
  }
  if (!(std::abs(dt) > 0) || std::abs(dt) > max_flow_step(eta) * (1 + 1e-12))
    throw ConfigError("flow step must satisfy 0 < dt <= 1e-3 min(1, 1/|eta|)");
  const long n = T == 0.0 ? 0 : long(std::ceil(std::abs(T) / std::abs(dt) - 1e-9));
  const double h = n ? T / double(n) : 0.0;
  // b is sampled at spacing <= 1e-4 (every step unless the step is finer)
  const long stride = std::max(1L, long(1e-4 / std::max(std::abs(h), 1e-300)));

  std::vector<PhasePoint> s = starts;
  // compensated sums keep b = const exact to a few ulps
  std::vector<double> prev(m), acc(m, 0.0), acc_c(m, 0.0), len(m, 0.0), len_c(m, 0.0);
  auto add = [](double& sum, double& c, double v) {
    double t = sum + v;
    c += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  };
  for (std::size_t k = 0; k < m; ++k) {
    prev[k] = d(s[k].x, s[k].y);
    if (near_equilibrium(s[k], p)) out[k].near_critical = true;
  }
  double tprev = 0.0;
  for (long i = 1; i <= n; ++i) {
    if (fo.integrator == Integrator::yoshida4) {
      for (double w : {kYw1, kYw0, kYw1}) {
        for (auto& q : s) drift_x(q, 0.5 * w * h);
        for (auto& q : s) kick(q, p, w * h);
        for (auto& q : s) drift_x(q, 0.5 * w * h);
      }
    } else {
      for (auto& q : s) rk4_step(q, p, h);
    }
    if (i % 8 == 0 || i == n)
      for (std::size_t k = 0; k < m; ++k) {
        double dr = std::abs(s[k].energy(p) - e0[k]) / e0[k];
        if (dr > fo.drift_tol) throw EnergyDriftExceeded("relative energy drift " + std::to_string(dr));
      }
    for (std::size_t k = 0; k < m; ++k)
      if (near_equilibrium(s[k], p)) out[k].near_critical = true;
    if (i % stride != 0 && i != n) continue;
    const double t = i == n ? T : i * h;
    for (std::size_t k = 0; k < m; ++k) {
      double b = d(s[k].x, s[k].y);
      add(acc[k], acc_c[k], 0.5 * (prev[k] + b) * (t - tprev));
      add(len[k], len_c[k], t - tprev);
      prev[k] = b;
    }
    tprev = t;
  }
  for (std::size_t k = 0; k < m; ++k) out[k].value = n > 0 ? (acc[k] + acc_c[k]) / (len[k] + len_c[k]) : prev[k];
  return out;
}

}  // namespace

double averaged_damping(const PhasePoint& start, const DampingProfile& d, const Potential& p, double T,
                        const AverageOptions& opt) {
  if (!(T > 0)) throw ConfigError("averaging window must be positive");
  if (opt.require_periods) {
    double need = 10.0 * estimate_periods(start, p).slower();
    if (T < need) throw ConfigError("averaging window shorter than 10 periods (" + std::to_string(need) + ")");
  }
  double dt = opt.dt > 0 ? opt.dt : max_flow_step(start.eta);
  return average_batch({start}, d, p, T, dt, opt.flow)[0].value;
}

json ControlBound::to_json() const {
  return {{"level", level},   {"band_length", band_length}, {"b_max", b_max},   {"v_max", v_max},
          {"sigma", sigma},   {"v_sigma", v_sigma},         {"sigma1", sigma1}, {"v_sigma1", v_sigma1},
          {"case1", case1},   {"case2", case2},             {"applicable", applicable}};
}

ControlBound control_lower_bound(const DampingProfile& d, const Potential& p, double eta) {
  if (p.kind() == Potential::Kind::quadratic) throw ConfigError("control bound needs a periodic potential");
  ControlBound cb;
  cb.v_max = max_potential(p);
  // sigma: V increasing on (0, 2 sigma) and decreasing on (-2 sigma, 0)
  double right = kPi, left = kPi;
  for (double x = 1e-4; x < kPi; x += 1e-4)
    if (p.d1(x) <= 0) {
      right = x;
      break;
    }
  for (double x = 1e-4; x < kPi; x += 1e-4)
    if (p.d1(-x) >= 0) {
      left = x;
      break;
    }
  cb.sigma = 0.99 * 0.5 * std::min(left, right);
  auto vmin_outside = [&](double s) {
    double m = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 4096; ++j) {
      double x = -kPi + j * kTwoPi / 4096;
      if (std::abs(x) >= s) m = std::min(m, p.value(x));
    }
    return std::min({m, p.value(s), p.value(-s)});
  };
  cb.v_sigma = vmin_outside(cb.sigma);

  // x-uniform band of the damping
  const int ny = 1024, nx = 256;
  std::vector<double> g(ny);
  for (int l = 0; l < ny; ++l) {
    double y = -kPi + l * kTwoPi / ny, m = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nx; ++j) {
      double v = d(-kPi + j * kTwoPi / nx, y);
      m = std::min(m, v);
      cb.b_max = std::max(cb.b_max, v);
    }
    g[l] = m;
  }
  const double ae = std::abs(eta);
  if (ae * ae * cb.v_max >= 1.0) {
    auto f = [&](double x) { return 1.0 - p.value(x) * ae * ae; };
    double xm = turning_point(f, 0.0, -1.0), xp = turning_point(f, 0.0, 1.0);
    cb.sigma1 = std::min(0.5 * std::min(std::abs(xm), std::abs(xp)), cb.sigma);
    cb.v_sigma1 = std::min(p.value(cb.sigma1), p.value(-cb.sigma1));
  } else {
    cb.sigma1 = cb.sigma;
    cb.v_sigma1 = cb.v_sigma;
  }
  if (cb.b_max <= 0) return cb;
  for (double level : {1.0, 0.5, 0.1}) {
    const double thr = level * cb.b_max * (1 - 1e-12);
    int best = 0, run = 0;
    bool all = true;
    for (int l = 0; l < 2 * ny; ++l) {
      run = g[l % ny] >= thr ? run + 1 : 0;
      if (g[l % ny] < thr) all = false;
      best = std::max(best, std::min(run, ny));
    }
    double len = all ? kTwoPi : std::max(0, best - 1) * kTwoPi / ny;
    double c1 = level * cb.b_max * len * cb.v_sigma / (4 * kPi * cb.v_max);
    if (c1 > cb.case1) {
      cb.case1 = c1;
      cb.level = level;
      cb.band_length = len;
    }
  }
  cb.case2 = cb.level * cb.b_max * cb.band_length * cb.v_sigma1 / (4 * kPi * cb.v_max);
  cb.applicable = ae * ae * cb.v_max < 1.0 ? cb.case1 : cb.case2;
  return cb;
}

double halton(std::uint64_t i, int base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= base;
    r += f * double(i % base);
    i /= base;
  }
  return r;
}

json ControlReport::to_json() const {
  json v = json::array();
  for (const auto& q : violating_points) v.push_back(q.to_json());
  return {{"egcc_min_average", egcc_min_average},
          {"sgcc_min_average", sgcc_min_average},
          {"egcc_argmin", egcc_argmin.to_json()},
          {"sgcc_argmin", {{"y", sgcc_argmin_y}, {"sign", sgcc_argmin_sign}}},
          {"violating_points", v},
          {"stratum_min", stratum_min},
          {"samples", samples},
          {"near_critical", near_critical},
          {"short_windows", short_windows},
          {"T", T},
          {"numeric_only", numeric_only}};
}

ControlReport classify_control(const DampingProfile& d, const Potential& p, const ControlOptions& opt) {
  if (opt.sample < 100) throw ConfigError("control classification needs at least 100 sample points");
  if (opt.eta_strata.empty()) throw ConfigError("empty eta stratification");
  if (!(opt.T > 0)) throw ConfigError("averaging window must be positive");
  const double vmax = max_potential(p);
  const int ns = int(opt.eta_strata.size());

  // points on p^{-1}(1): x restricted to the accessible well around 0 when confined
  std::vector<PhasePoint> pts(opt.sample);
  for (int i = 0; i < opt.sample; ++i) {
    const double e = opt.eta_strata[i % ns];
    const double u1 = halton(i + 1, 2), u2 = halton(i + 1, 3), u3 = halton(i + 1, 5);
    double x;
    if (e * e * vmax <= 1.0) {
      x = -kPi + kTwoPi * u1;
    } else {
      auto f = [&](double z) { return 1.0 - p.value(z) * e * e; };
      double xm = turning_point(f, 0.0, -1.0), xp = turning_point(f, 0.0, 1.0);
      x = xm + (xp - xm) * u1;
    }
    double xi = std::sqrt(std::max(0.0, 1.0 - p.value(x) * e * e));
    pts[i] = {x, -kPi + kTwoPi * u2, u3 < 0.5 ? xi : -xi, e};
  }

  std::vector<double> eg(opt.sample), sg_plus(opt.sample), sg_minus(opt.sample);
  std::vector<char> crit(opt.sample), shortw(opt.sample);
  const double sdt = std::min(1e-2, opt.T / 1000);
  const long sn = long(std::ceil(opt.T / sdt));
  // tasks: up to 8 points of one stratum, integrated in lockstep
  std::vector<std::vector<int>> tasks;
  for (int st = 0; st < ns; ++st) {
    std::vector<int> cur;
    for (int i = st; i < opt.sample; i += ns) {
      cur.push_back(i);
      if (cur.size() == 8) tasks.push_back(std::exchange(cur, {}));
    }
    if (!cur.empty()) tasks.push_back(cur);
  }
  std::atomic<int> next{0};
  auto work = [&] {
    for (int ti; (ti = next.fetch_add(1)) < int(tasks.size());) {
      std::vector<PhasePoint> batch;
      for (int i : tasks[ti]) batch.push_back(pts[i]);
      auto av = average_batch(batch, d, p, opt.T, max_flow_step(batch[0].eta), FlowOptions{});
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const int i = tasks[ti][k];
        const PhasePoint& s = pts[i];
        eg[i] = av[k].value;
        crit[i] = av[k].near_critical;
        shortw[i] = opt.T < 10.0 * estimate_periods(s, p).slower();
        for (int sign : {1, -1}) {
          double acc = 0, prev = d(0.0, s.y);
          for (long j = 1; j <= sn; ++j) {
            double b = d(0.0, flow_vertical(s.y, sign, j * opt.T / sn));
            acc += 0.5 * (prev + b);
            prev = b;
          }
          (sign > 0 ? sg_plus : sg_minus)[i] = acc / double(sn);
        }
      }
    }
  };
  const int nt = std::max(1, std::min(opt.jobs, int(tasks.size())));
  std::vector<std::thread> th;
  for (int t = 1; t < nt; ++t) th.emplace_back(work);
  work();
  for (auto& t : th) t.join();

  ControlReport r;
  r.samples = opt.sample;
  r.T = opt.T;
  r.stratum_min.assign(ns, std::numeric_limits<double>::infinity());
  r.egcc_min_average = r.sgcc_min_average = std::numeric_limits<double>::infinity();
  for (int i = 0; i < opt.sample; ++i) {
    r.stratum_min[i % ns] = std::min(r.stratum_min[i % ns], eg[i]);
    if (eg[i] < r.egcc_min_average) {
      r.egcc_min_average = eg[i];
      r.egcc_argmin = pts[i];
    }
    for (int sign : {1, -1}) {
      double v = (sign > 0 ? sg_plus : sg_minus)[i];
      if (v < r.sgcc_min_average) {
        r.sgcc_min_average = v;
        r.sgcc_argmin_y = pts[i].y;
        r.sgcc_argmin_sign = sign;
      }
    }
    if (eg[i] < opt.violation_threshold && int(r.violating_points.size()) < opt.max_violations)
      r.violating_points.push_back(pts[i]);
    r.near_critical += crit[i];
    r.short_windows += shortw[i];
  }
  return r;
}

}  // namespace grushin
