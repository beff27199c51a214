// Resolvent norms via smallest singular values, the reduced 1D family and log-log fits.
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "grushin/operator.hpp"

namespace grushin {

using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;

// ---------------------------------------------------------------- sectors

enum class Parity { even, odd, none };

// Orthonormal basis of one parity class of index space Z_n: vectors
// (e_m +- e_{-m})/sqrt2 plus the self-paired indices.
struct SectorBasis {
  int n = 0;
  Parity parity = Parity::none;
  std::vector<int> freq;        // nonnegative frequency (signed for `none`)
  std::vector<int> idx0, idx1;  // supporting indices (idx1 = -1 when single)
  std::vector<double> c0, c1;
  std::vector<int> of_index;    // index -> sector position or -1

  static SectorBasis make(int n, Parity p);
  int size() const { return int(freq.size()); }
};

// Restriction of an operator with even V and b to a parity sector of x and y.
// Ordering of sector vectors: a_x * My + a_y.
class SectorOperator {
 public:
  SectorOperator(const SemiclassicalOperator& op, Parity px, Parity py);

  int mx() const { return bx_.size(); }
  int my() const { return by_.size(); }
  int size() const { return mx() * my(); }
  VecC apply(const VecC& u) const;
  // Sector vector -> full unitary-DFT coefficient vector (and back).
  std::vector<cplx> expand(const VecC& u) const;
  VecC restrict(const std::vector<cplx>& uhat) const;
  // Dense sector matrix (small sizes only, for oracles).
  MatC dense() const;

  const SectorBasis& basis_x() const { return bx_; }
  const SectorBasis& basis_y() const { return by_; }

  // Block-tridiagonal layout: major axis and grouping of major indices.
  struct Layout {
    bool x_major = true;
    int group = 1;
    int nblocks = 0;
    int block_major(int b) const { return b * group; }
  };
  Layout choose_layout() const;
  int major_count(const Layout& L) const { return L.x_major ? mx() : my(); }
  int minor_count(const Layout& L) const { return L.x_major ? my() : mx(); }
  // Entries of block (R, C) of the layout; dense output for R == C, triplets otherwise.
  MatC dense_block(const Layout& L, int R) const;
  SpMat sparse_block(const Layout& L, int R, int C) const;
  // Position of sector entry (ax, ay) in layout ordering.
  int layout_index(const Layout& L, int ax, int ay) const {
    return L.x_major ? ax * my() + ay : ay * mx() + ax;
  }

 private:
  template <class Emit>
  void emit_block(const Layout& L, int R, int C, Emit&& emit) const;

  SectorBasis bx_, by_;
  double h_;
  cplx zeta_;
  std::vector<double> xdiag_, ydiag_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> cx_;  // projected V
  bool dense_b_ = false;
  MatC bdense_;                                      // i h b block (y only)
  std::map<std::pair<int, int>, SpMat> bpairs_;      // (a_x, b_x) -> i h b coupling, My x My
  const SemiclassicalOperator* op_;
};

// Block-tridiagonal LU with dense diagonal blocks (partial pivoting inside blocks).
class BlockTridiagLU {
 public:
  BlockTridiagLU(const SectorOperator& S, const SectorOperator::Layout& L);
  VecC solve(const VecC& b) const;          // A^{-1} b, sector ordering
  VecC solve_adjoint(const VecC& b) const;  // A^{-*} b
  std::size_t bytes() const;

 private:
  VecC to_layout(const VecC& v) const;
  VecC from_layout(const VecC& v) const;
  std::vector<int> perm_;  // layout position -> sector ordering
  std::vector<int> off_;
  std::vector<Eigen::PartialPivLU<MatC>> lu_;
  std::vector<SpMat> lower_, upper_;  // lower_[i] = block (i+1, i); upper_[i] = block (i, i+1)
};

// ---------------------------------------------------------------- sigma_min

struct SigmaMinOptions {
  int max_iter = 120;
  double tol = 1e-10;       // Lanczos residual relative to the Ritz value
  int refine_steps = 1;     // iterative refinement of each solve
  unsigned long seed = 12345;
};

struct SigmaMinResult {
  double sigma = 0.0;
  double certificate = 0.0;   // ||A v|| / ||v|| with the independent apply
  double cert_rel = 0.0;      // |certificate - sigma| / sigma
  int iters = 0;
  bool converged = false;
  double solve_residual = 0.0;  // worst relative residual of refined solves
  VecC v;
};

using LinOp = std::function<VecC(const VecC&)>;
// Largest eigenvalue of (A*A)^{-1} by Lanczos with full reorthogonalization.
SigmaMinResult sigma_min_lanczos(int n, const LinOp& solve, const LinOp& solve_adj, const LinOp& apply,
                                 const LinOp& cert_apply, const SigmaMinOptions& opt = {});
// Dense oracle.
double sigma_min_dense(const MatC& A);

struct ResolventSample {
  double h = 0.0;
  double norm = 0.0;
  double sigma_min = 0.0;
  double beta_h = 0.0;
  int n_x = 0, n_y = 0;
  std::string method;
  int iters = 0;
  double certificate_rel = 0.0;
  double solve_residual = 0.0;
  double wall_ms = 0.0;
  bool converged = false;
  std::string sector;  // parity sector attaining the minimum
  std::string error;
};

struct ResolventOptions {
  SigmaMinOptions lanczos;
  std::size_t dense_limit = 1500;  // dense SVD below this size
  bool verbose = false;
};

ResolventSample resolvent_norm(const SemiclassicalOperator& op, const ResolventOptions& opt = {});
// Smallest singular value of a generic sparse matrix by sparse LU + Lanczos.
SigmaMinResult sigma_min_sparse(const SpMat& A, const SigmaMinOptions& opt = {});

// ---------------------------------------------------------------- 1D family

struct OneDOperator {
  double h = 0.0, E = 0.0, a = 0.0, hbar = 0.0;
  int n = 0;
  MatC A;  // Fourier (unitary DFT) basis
};
// (-h^2 d_y^2 - E + a h^4 d_y^4 chi0~(hbar D_y) + i h b(y)) on n points.
OneDOperator oned_operator(double h, double E, const DampingProfile& d, double a, double hbar, int n);
// Same operator by physical collocation (dense spectral differentiation), for cross-checks.
MatC oned_operator_physical(double h, double E, const DampingProfile& d, double a, double hbar, int n);
// Solve for w given grid values r; returns grid values.
std::vector<cplx> oned_family_solve(double h, double E, const DampingProfile& d, double a,
                                    const std::vector<cplx>& r, double hbar);
// Norm of the solution operator at one E.
double oned_resolvent_norm(double h, double E, const DampingProfile& d, double a, double hbar, int n);

struct OneDSweep {
  double h = 0.0;
  double sup_norm = 0.0;
  double argmax_E = 0.0;
  std::vector<double> E, norms;
};
std::vector<double> oned_energy_grid(double h, double delta, int count = 200, double K0 = 10.0);
OneDSweep oned_sup_norm(double h, const DampingProfile& d, double a, int count = 200, int n = 0);
int oned_grid_size(double h);

// ---------------------------------------------------------------- fits

struct TooFewSamples : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScalingFit {
  std::vector<double> h, value;
  double slope = 0.0;      // value ~ C h^{-slope}
  double intercept = 0.0;  // log C
  double residual = 0.0;   // rms of log residuals
  double half_width = 0.0; // 95% band on the slope
};
// Least squares of log(value) on log(1/h); min_samples defaults to 4.
ScalingFit fit_exponent(const std::vector<double>& h, const std::vector<double>& value, int min_samples = 4);

}  // namespace grushin
