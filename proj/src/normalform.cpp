#include "grushin/normalform.hpp"

#include <algorithm>

namespace grushin {

using MatC = Eigen::MatrixXcd;

MatR hermite_band_matrix(int l, int K, int nodes) {
  if (l < 0 || K < 0) throw std::invalid_argument("band matrix order and size must be nonnegative");
  if (nodes <= 0) nodes = K + l + 20;
  // exact for degree 2K + l when 2 nodes - 1 >= 2K + l
  if (2 * nodes - 1 < 2 * K + l) throw QuadratureOrderTooLow("too few Gauss-Hermite nodes for the band matrix");
  auto gh = gauss_hermite(nodes);
  MatR A = MatR::Zero(K + 1, K + 1);
  for (int m = 0; m < nodes; ++m) {
    auto psi = hermite_functions(K, gh.nodes[m]);
    double w = gh.scaled_weights[m] * std::pow(gh.nodes[m], l);
    for (int a = 0; a <= K; ++a)
      for (int b = 0; b <= a; ++b) A(a, b) += w * psi[a] * psi[b];
  }
  for (int a = 0; a <= K; ++a)
    for (int b = 0; b < a; ++b) A(b, a) = A(a, b);
  return A;
}

namespace {

MatC expi_hermitian(const MatC& F, double t) {
  Eigen::SelfAdjointEigenSolver<MatC> es(F);
  Eigen::VectorXcd ph = (es.eigenvalues().cast<cplx>() * cplx(0, t)).array().exp();
  return es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
}

json mat_json(const MatC& M) {
  json re = json::array(), im = json::array();
  for (int r = 0; r < M.rows(); ++r)
    for (int c = 0; c < M.cols(); ++c) {
      re.push_back(M(r, c).real());
      im.push_back(M(r, c).imag());
    }
  return {{"rows", M.rows()}, {"cols", M.cols()}, {"re", re}, {"im", im}};
}

}  // namespace

json NormalFormResult::to_json() const {
  json d = json::array();
  for (const auto& v : D) d.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return {{"U", mat_json(U)}, {"D", d}, {"residual", residual}, {"eps", eps}, {"N", N}};
}

NormalFormResult finite_dim_average(const VecR& D, const std::vector<MatC>& As, double eps, int N, double min_gap) {
  const int n = int(D.size());
  if (int(As.size()) != N) throw std::invalid_argument("need exactly N perturbation matrices");
  for (int a = 0; a + 1 < n; ++a)
    if (!(D(a + 1) - D(a) > min_gap)) throw DegenerateSpectrum("diagonal entries must be ascending with gap > threshold");

  // Hamiltonian as a polynomial in eps, truncated at order N
  std::vector<MatC> H(N + 1);
  H[0] = D.cast<cplx>().asDiagonal();
  for (int j = 1; j <= N; ++j) {
    if (As[j - 1].rows() != n || As[j - 1].cols() != n) throw std::invalid_argument("perturbation size mismatch");
    H[j] = As[j - 1];
  }

  NormalFormResult res;
  res.eps = eps;
  res.N = N;
  res.U = MatC::Identity(n, n);
  for (int j = 1; j <= N; ++j) {
    const MatC& M = H[j];
    VecR Dj = M.diagonal().real();
    MatC F = MatC::Zero(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        if (a != b) F(a, b) = M(a, b) / cplx(0, D(a) - D(b));
    // H <- e^{i eps^j F} H e^{-i eps^j F} = sum_q (i^q / q!) ad_F^q H, order-shifted by q j
    std::vector<MatC> next(N + 1, MatC::Zero(n, n));
    for (int s = 0; s <= N; ++s) {
      MatC X = H[s];
      cplx coef = 1.0;
      for (int q = 0; s + q * j <= N; ++q) {
        next[s + q * j] += coef * X;
        X = (F * X - X * F).eval();
        coef *= cplx(0, 1) / double(q + 1);
      }
    }
    H = std::move(next);
    res.D.push_back(Dj);
    res.U = expi_hermitian(F, std::pow(eps, j)) * res.U;
  }

  // off-diagonal part of the conjugated matrix; the diagonal target is D + sum eps^j D_j
  MatC full = D.cast<cplx>().asDiagonal();
  for (int j = 1; j <= N; ++j) full += std::pow(eps, j) * As[j - 1];
  MatC R = res.U * full * res.U.adjoint();
  R.diagonal().setZero();
  res.residual = R.norm();
  return res;
}

namespace {
std::vector<MatC> oscillator_terms(int N, const std::vector<double>& taylor, int K) {
  if (N < 3) throw std::invalid_argument("Taylor order must be at least 3");
  if (int(taylor.size()) <= N) throw std::invalid_argument("not enough Taylor coefficients");
  if (std::abs(taylor[2] - 1.0) > 1e-10) throw std::invalid_argument("potential must satisfy V''(0) = 2");
  std::vector<MatC> As;
  for (int l = 3; l <= N; ++l) As.push_back(taylor[l] * hermite_band_matrix(l, K).cast<cplx>());
  return As;
}
}  // namespace

QuasiEigen quasi_eigenvalues(double eta, int N, const std::vector<double>& taylor, int K) {
  if (!(eta > 0)) throw std::invalid_argument("eta must be positive");
  if (K < 0) K = 3 * N;
  auto As = oscillator_terms(N, taylor, K);
  VecR D(K + 1);
  for (int k = 0; k <= K; ++k) D(k) = 2.0 * k + 1.0;
  const double eps = 1.0 / std::sqrt(eta);
  QuasiEigen q;
  q.nf = finite_dim_average(D, As, eps, N - 2);
  q.third_order_diag = q.nf.D[0].cwiseAbs().maxCoeff();
  q.mu = D;
  for (int j = 2; j <= N - 2; ++j) q.mu += std::pow(eps, j) * q.nf.D[j - 1];
  return q;
}

VecR truncated_oscillator_eigenvalues(double eta, int N, const std::vector<double>& taylor, int K) {
  auto As = oscillator_terms(N, taylor, K);
  const double eps = 1.0 / std::sqrt(eta);
  MatC H = MatC::Zero(K + 1, K + 1);
  for (int k = 0; k <= K; ++k) H(k, k) = 2.0 * k + 1.0;
  for (int j = 1; j <= N - 2; ++j) H += std::pow(eps, j) * As[j - 1];
  Eigen::SelfAdjointEigenSolver<MatC> es(H);
  return es.eigenvalues();
}

std::vector<double> cohomological_q0(const Potential& p, const std::vector<double>& x, double xi) {
  const double c = chi1(xi);
  if (c == 0.0) throw XiOutsideSupport("xi outside the support of chi1");
  std::vector<double> q(x.size(), 0.0);
  switch (p.kind()) {
    case Potential::Kind::constant: return q;
    case Potential::Kind::quadratic: throw ConfigError("cohomological equation needs a periodic potential");
    case Potential::Kind::cos_series: break;
  }
  // V - M = -sum c_m cos(m x)
  const auto& cm = p.coefficients();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s = 0;
    for (std::size_t m = 0; m < cm.size(); ++m) s += cm[m] * std::sin((m + 1) * x[i]) / double(m + 1);
    q[i] = -c * s / (2.0 * xi);
  }
  return q;
}

double harmonic_average_check(int K, double eta, int power) {
  if (power < 1 || power > 3) throw std::invalid_argument("power must be 1, 2 or 3");
  if (K < 8) throw std::invalid_argument("basis too small for an interior block");
  const double ae = std::abs(eta);
  MatR X1 = hermite_band_matrix(1, K);
  // (eta x)^p = |eta|^{p/2} xi^p, products taken in the truncated space
  MatR Xp = MatR::Identity(K + 1, K + 1);
  for (int q = 0; q < power; ++q) Xp = (Xp * X1).eval();
  Xp *= std::pow(ae, power / 2.0) * (eta < 0 && power % 2 ? -1.0 : 1.0);
  // period average of e^{i(l_a - l_b) t}, l_k = |eta|(2k+1)/2, over T = 2 pi/|eta|
  const double T = kTwoPi / ae;
  MatC avg(K + 1, K + 1);
  for (int a = 0; a <= K; ++a)
    for (int b = 0; b <= K; ++b) {
      double w = ae * (a - b);
      cplx f = w == 0.0 ? cplx(1.0) : (std::exp(cplx(0, w * T)) - 1.0) / cplx(0, w * T);
      avg(a, b) = Xp(a, b) * f;
    }
  MatC target = MatC::Zero(K + 1, K + 1);
  if (power == 2) {
    // -d_xi^2 through the ladder form of d_xi
    MatR Dd = MatR::Zero(K + 1, K + 1);
    for (int k = 0; k <= K; ++k) {
      if (k >= 1) Dd(k - 1, k) = std::sqrt(k / 2.0);
      if (k + 1 <= K) Dd(k + 1, k) = -std::sqrt((k + 1) / 2.0);
    }
    target = (0.5 * ae * (Dd.transpose() * Dd + X1 * X1)).cast<cplx>();
  }
  const int m = K - 4 + 1;
  return (avg - target).topLeftCorner(m, m).cwiseAbs().maxCoeff();
}

}  // namespace grushin
