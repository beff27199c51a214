// Finite-dimensional averaging on truncated Hermite bases.
//
// A perturbed diagonal matrix D + sum_j eps^j A_j is conjugated by
// U = e^{i eps^N F_N} ... e^{i eps F_1} into D + sum_j eps^j D_j up to
// O(eps^{N+1}); each F_j solves i[D, F_j] = D_j - M_j entrywise.
#pragma once

#include <vector>

#include <Eigen/Dense>

#include "grushin/core.hpp"

namespace grushin {

using MatR = Eigen::MatrixXd;
using VecR = Eigen::VectorXd;

struct DegenerateSpectrum : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct QuadratureOrderTooLow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// <xi^l psi_a, psi_b> for a, b <= K in the scaled variable xi = x sqrt(eta).
// Gauss-Hermite with `nodes` points (default K + l + 20).
MatR hermite_band_matrix(int l, int K, int nodes = 0);

struct NormalFormResult {
  Eigen::MatrixXcd U;
  std::vector<VecR> D;  // D_1..D_N
  double residual = 0.0;
  double eps = 0.0;
  int N = 0;
  json to_json() const;
};

// Conjugates diag(D) + sum_{j=1}^N eps^j As[j-1]; the As must be Hermitian.
NormalFormResult finite_dim_average(const VecR& D, const std::vector<Eigen::MatrixXcd>& As, double eps, int N,
                                    double min_gap = 1e-8);

// Quasi-eigenvalues of eta^{-1}(-d_x^2 + eta^2 V_N(x)), V_N the Taylor polynomial
// x^2 + sum_{l=3}^N t_l x^l. `taylor` holds t_0..t_N as returned by Potential::taylor.
// K defaults to 3N. Also returns the conjugation so callers can read eigenvectors.
struct QuasiEigen {
  VecR mu;                    // mu_k, k <= K
  NormalFormResult nf;        // in eps = eta^{-1/2}
  double third_order_diag = 0.0;  // max |lambda^3_k|
};
QuasiEigen quasi_eigenvalues(double eta, int N, const std::vector<double>& taylor, int K = -1);
// Direct oracle: lowest eigenvalues of the same truncated matrix.
VecR truncated_oscillator_eigenvalues(double eta, int N, const std::vector<double>& taylor, int K);

struct XiOutsideSupport : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Mean-zero solution of 2 xi d_x q0 = chi1(xi) (V - M), M = (1/2pi) int V, at the points x.
std::vector<double> cohomological_q0(const Potential& p, const std::vector<double>& x, double xi);

// Deviation of the period average of U(t)^* (eta x)^power U(t), U(t) = e^{-it(D^2 + eta^2 x^2)/2},
// from 0 (odd powers) or from (D^2 + eta^2 x^2)/2 (power 2), max norm on k <= K - 4.
double harmonic_average_check(int K, double eta, int power);

}  // namespace grushin
