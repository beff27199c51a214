// Classical flows of p = xi^2 + V(x) eta^2 and damping averages along them.
#pragma once

#include <iosfwd>
#include <limits>
#include <vector>

#include "grushin/core.hpp"

namespace grushin {

struct EnergyDriftExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Angles are stored unwrapped; wrapped() reports them in [-pi, pi).
struct PhasePoint {
  double x = 0.0, y = 0.0, xi = 0.0, eta = 0.0;
  double energy(const Potential& p) const { return xi * xi + p.value(x) * eta * eta; }
  // x is left alone for the non-periodic quadratic hook.
  PhasePoint wrapped(const Potential& p) const;
  json to_json() const;
};

enum class Integrator { yoshida4, rk4 };

struct FlowOptions {
  Integrator integrator = Integrator::yoshida4;
  double drift_tol = 1e-6;  // relative energy drift that aborts the run
  int sample_every = 1;     // keep every n-th step (the last step is always kept)
};

struct Trajectory {
  std::vector<double> t;
  std::vector<PhasePoint> pts;
  std::vector<double> drift;  // |p(t) - p(0)| / p(0)
  double max_drift = 0.0;
  // Passes close to an equilibrium of the x-motion (xi ~ 0 and V'(x) eta^2 ~ 0).
  bool near_critical = false;
};

// Largest step allowed for momentum eta.
inline double max_flow_step(double eta) { return 1e-3 * std::min(1.0, 1.0 / std::abs(eta)); }

// T may be negative. The step is |T|/ceil(|T|/|dt|); eta never enters an update.
Trajectory flow_elliptic(const PhasePoint& start, const Potential& p, double T, double dt,
                         const FlowOptions& opt = {});

// Columns t, x, y, xi, eta, p, b with angles reported mod 2 pi.
void write_trajectory_csv(std::ostream& out, const Trajectory& tr, const Potential& p, const DampingProfile& d);

double flow_vertical(double y, int sign, double t);

// Horizontal period of x(t) and the time y(t) needs to advance 2 pi.
struct PeriodEstimate {
  double horizontal = 0.0;
  double vertical = std::numeric_limits<double>::infinity();  // infinite when eta = 0
  bool confined = false;  // x trapped between two turning points
  double slower() const { return std::isfinite(vertical) ? std::max(horizontal, vertical) : horizontal; }
};
PeriodEstimate estimate_periods(const PhasePoint& start, const Potential& p);

struct AverageOptions {
  FlowOptions flow;
  double dt = 0.0;                // 0 picks max_flow_step(eta)
  bool require_periods = true;    // enforce T >= 10 slower periods
};

// (1/T) int_0^T b(x(t), y(t)) dt, trapezoid on the integration steps.
double averaged_damping(const PhasePoint& start, const DampingProfile& d, const Potential& p, double T,
                        const AverageOptions& opt = {});

// Lower bound |J| V_s / (4 pi V_m) for the time fraction spent over a band J on which
// min_x b >= level * max b, scaled by level * max b. case1 uses a fixed sigma; case2 the
// eta-dependent sigma_1 of the confined well. `applicable` is the one matching eta.
struct ControlBound {
  double level = 0.0, band_length = 0.0, b_max = 0.0;
  double v_max = 0.0, sigma = 0.0, v_sigma = 0.0, sigma1 = 0.0, v_sigma1 = 0.0;
  double case1 = 0.0, case2 = 0.0, applicable = 0.0;
  json to_json() const;
};
ControlBound control_lower_bound(const DampingProfile& d, const Potential& p, double eta);

struct ControlOptions {
  int sample = 180;
  double T = 200.0;
  std::vector<double> eta_strata = {0.0, 0.1, -0.1, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0};
  int jobs = 1;
  double violation_threshold = 1e-8;
  int max_violations = 32;
};

struct ControlReport {
  double egcc_min_average = 0.0;
  double sgcc_min_average = 0.0;
  PhasePoint egcc_argmin;
  double sgcc_argmin_y = 0.0;
  int sgcc_argmin_sign = 1;
  std::vector<PhasePoint> violating_points;  // EGCC averages below the threshold
  std::vector<double> stratum_min;           // per eta stratum
  int samples = 0;
  int near_critical = 0;
  int short_windows = 0;  // runs shorter than 10 slower periods
  double T = 0.0;
  // Finite-T minima on a sample: a numeric classification, not a proof.
  bool numeric_only = true;
  json to_json() const;
};

ControlReport classify_control(const DampingProfile& d, const Potential& p, const ControlOptions& opt = {});

// Radical inverse of i in the given base.
double halton(std::uint64_t i, int base);

}  // namespace grushin
