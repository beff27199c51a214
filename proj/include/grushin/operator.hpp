// Discretized damped Baouendi-Grushin operators on the torus.
//
// Basis: unitary 2D DFT coefficients of grid values, u_hat(k,n), index-space
// frequencies. The operator
//   A = -h^2 d_x^2 - h^2 V(x) d_y^2 + i h b(x,y) - zeta
// becomes h^2 k^2 + (V conv)(h^2 n^2) + i h (b conv) - zeta, with V and b
// entering as circular convolutions by their grid DFT coefficients.
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "grushin/core.hpp"

namespace grushin {

using SpMat = Eigen::SparseMatrix<cplx, Eigen::ColMajor, int>;

struct GridTooCoarse : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GridMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unitary FFT on an n_y x n_x array, x fastest. Plans are cached per shape.
class Fft2 {
 public:
  Fft2(int n_x, int n_y);
  ~Fft2();
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;
  void forward(cplx* data) const;   // grid values -> coefficients
  void backward(cplx* data) const;  // coefficients -> grid values
 private:
  int nx_, ny_;
  void* fwd_ = nullptr;
  void* bwd_ = nullptr;
};

// Unitary 1D FFT, optionally batched over `howmany` contiguous rows of length n.
class Fft1 {
 public:
  explicit Fft1(int n, int howmany = 1);
  ~Fft1();
  Fft1(const Fft1&) = delete;
  Fft1& operator=(const Fft1&) = delete;
  void forward(cplx* data) const;
  void backward(cplx* data) const;
 private:
  int n_, howmany_;
  void* fwd_ = nullptr;
  void* bwd_ = nullptr;
};

// Complex field of grid values, index l*n_x + j for (x_j, y_l).
struct GrushinField {
  TorusGrid grid;
  double h = 0.0;
  std::vector<cplx> v;

  GrushinField() = default;
  GrushinField(const TorusGrid& g, double h_) : grid(g), h(h_), v(g.size(), cplx(0)) {}
  cplx& at(int j, int l) { return v[std::size_t(l) * grid.n_x + j]; }
  cplx at(int j, int l) const { return v[std::size_t(l) * grid.n_x + j]; }
  // Continuum L^2 norm by the trapezoid rule.
  double norm() const;
};

struct AssembleOptions {
  bool strict = false;          // throw GridTooCoarse instead of warning
  double drop_tol = 1e-14;      // relative threshold for kept DFT coefficients
  bool quiet = false;
};

// Sparse spectral coefficients of a multiplier on the grid: value at index offset (dk, dn).
struct Stencil {
  std::vector<int> dk, dn;
  std::vector<cplx> c;
  int radius_k = 0, radius_n = 0;  // max |signed offset|
  bool full_n = false;             // kept set spans all n offsets
};

class SemiclassicalOperator {
 public:
  static SemiclassicalOperator assemble(double h, const Potential& p, const DampingProfile& d,
                                        const TorusGrid& g, cplx zeta, const AssembleOptions& opt = {});

  double h() const { return h_; }
  cplx zeta() const { return zeta_; }
  const TorusGrid& grid() const { return grid_; }
  const Potential& potential() const { return pot_; }
  const DampingProfile& damping() const { return damp_; }
  std::string tag() const { return "fourier-fourier"; }

  // Matrix-free products on grid values and on unitary DFT coefficients.
  GrushinField apply(const GrushinField& u) const;
  std::vector<cplx> apply_spectral(const std::vector<cplx>& uhat) const;

  // Assembled sparse matrix in the coefficient basis, global index n_idx*n_x + k_idx.
  // Throws if the estimated nonzero count exceeds max_nnz.
  SpMat matrix(std::size_t max_nnz = 50'000'000) const;

  // 1D DFT coefficients (mean-normalized) of V samples and stencils of V, b.
  const std::vector<cplx>& v_hat() const { return vhat_; }
  const Stencil& v_stencil() const { return vst_; }
  const Stencil& b_stencil() const { return bst_; }
  // Mean-normalized 1D DFT of b(0,y) samples, valid when b depends on y only.
  const std::vector<cplx>& b_hat_y() const { return bhat_y_; }
  const std::vector<double>& v_samples() const { return vs_; }
  const std::vector<double>& b_samples() const { return bs_; }

 private:
  double h_ = 0.0;
  cplx zeta_;
  TorusGrid grid_;
  Potential pot_;
  DampingProfile damp_;
  std::vector<double> vs_, bs_;  // V(x_j); b(x_j,y_l) (or b(y_l) when y-only)
  std::vector<cplx> vhat_, bhat_y_;
  Stencil vst_, bst_;
  std::vector<cplx> bhat2_;  // full mean-normalized 2D DFT of b (n_y x n_x), general case
  std::shared_ptr<Fft2> fft_;
};

// Grid values <-> unitary DFT coefficients.
std::vector<cplx> to_spectral(const GrushinField& u);
GrushinField from_spectral(const TorusGrid& g, double h, std::vector<cplx> uhat);
// Phase relating a plane wave e^{i(kx+ny)} to DFT index coefficients on the shifted grid.
inline double grid_phase_sign(int k, int n) { return ((k + n) % 2 == 0) ? 1.0 : -1.0; }

// Resolution policy: next powers of two of c_y/h^2 and c_x/h. c_x = 4 leaves
// the resolvent norm visibly unconverged in n_x at h <= 0.07, hence 8.
TorusGrid default_grid(double h, double c_x = 8.0, double c_y = 4.0);
bool grid_resolves(const TorusGrid& g, double h);

// Sum over words of length k in {d_x, W d_y}, W = sqrt(V), of L^2 norms.
double grushin_seminorm(const GrushinField& u, int k, const Potential& p);
// Laplacian Delta_G u = d_x^2 u + V d_y^2 u.
GrushinField grushin_laplacian(const GrushinField& u, const Potential& p);

struct AprioriParts {
  double lhs = 0.0;        // || |D_y| u ||
  double laplacian = 0.0;  // || Delta_G u ||
  double mass = 0.0;       // || u ||
};
AprioriParts subelliptic_apriori_check(const GrushinField& u, const Potential& p);

// Field persistence: raw little-endian complex64 plus JSON sidecar.
void write_field(const GrushinField& u, const std::string& path, const json& extra = {});
GrushinField read_field(const std::string& path);
// Coordinate-triplet export (MatrixMarket coordinate complex general, 1-based).
void write_matrix_market(const SpMat& A, const std::string& path);

}  // namespace grushin
