#include "grushin/operator.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>

#include <fftw3.h>

namespace grushin {

namespace {
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

void scale(cplx* d, std::size_t n, double s) {
  for (std::size_t i = 0; i < n; ++i) d[i] *= s;
}
}  // namespace

// ---------------------------------------------------------------- FFT

Fft2::Fft2(int n_x, int n_y) : nx_(n_x), ny_(n_y) {
  std::lock_guard<std::mutex> lk(plan_mutex());
  std::vector<cplx> buf(std::size_t(n_x) * n_y);
  auto* p = reinterpret_cast<fftw_complex*>(buf.data());
  fwd_ = fftw_plan_dft_2d(n_y, n_x, p, p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  bwd_ = fftw_plan_dft_2d(n_y, n_x, p, p, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
}

Fft2::~Fft2() {
  std::lock_guard<std::mutex> lk(plan_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(bwd_));
}

void Fft2::forward(cplx* data) const {
  auto* p = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(static_cast<fftw_plan>(fwd_), p, p);
  scale(data, std::size_t(nx_) * ny_, 1.0 / std::sqrt(double(nx_) * ny_));
}

void Fft2::backward(cplx* data) const {
  auto* p = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(static_cast<fftw_plan>(bwd_), p, p);
  scale(data, std::size_t(nx_) * ny_, 1.0 / std::sqrt(double(nx_) * ny_));
}

Fft1::Fft1(int n, int howmany) : n_(n), howmany_(howmany) {
  std::lock_guard<std::mutex> lk(plan_mutex());
  std::vector<cplx> buf(std::size_t(n) * howmany);
  auto* p = reinterpret_cast<fftw_complex*>(buf.data());
  int dims[1] = {n};
  fwd_ = fftw_plan_many_dft(1, dims, howmany, p, nullptr, 1, n, p, nullptr, 1, n, FFTW_FORWARD,
                            FFTW_ESTIMATE | FFTW_UNALIGNED);
  bwd_ = fftw_plan_many_dft(1, dims, howmany, p, nullptr, 1, n, p, nullptr, 1, n, FFTW_BACKWARD,
                            FFTW_ESTIMATE | FFTW_UNALIGNED);
}

Fft1::~Fft1() {
  std::lock_guard<std::mutex> lk(plan_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(bwd_));
}

void Fft1::forward(cplx* data) const {
  auto* p = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(static_cast<fftw_plan>(fwd_), p, p);
  scale(data, std::size_t(n_) * howmany_, 1.0 / std::sqrt(double(n_)));
}

void Fft1::backward(cplx* data) const {
  auto* p = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(static_cast<fftw_plan>(bwd_), p, p);
  scale(data, std::size_t(n_) * howmany_, 1.0 / std::sqrt(double(n_)));
}

// ---------------------------------------------------------------- fields

double GrushinField::norm() const {
  double s = 0.0;
  for (const auto& z : v) s += std::norm(z);
  return std::sqrt(s * grid.dx() * grid.dy());
}

std::vector<cplx> to_spectral(const GrushinField& u) {
  std::vector<cplx> w = u.v;
  Fft2 f(u.grid.n_x, u.grid.n_y);
  f.forward(w.data());
  return w;
}

GrushinField from_spectral(const TorusGrid& g, double h, std::vector<cplx> uhat) {
  Fft2 f(g.n_x, g.n_y);
  f.backward(uhat.data());
  GrushinField u(g, h);
  u.v = std::move(uhat);
  return u;
}

TorusGrid default_grid(double h, double c_x, double c_y) {
  return TorusGrid(std::max(4, next_pow2(c_x / h)), std::max(4, next_pow2(c_y / (h * h))));
}

bool grid_resolves(const TorusGrid& g, double h) {
  return g.n_y >= 4.0 / (h * h) - 1e-9 && g.n_x >= 4.0 / h - 1e-9;
}

// ---------------------------------------------------------------- operator

namespace {

// Mean-normalized DFT of real samples.
std::vector<cplx> dft_mean(const std::vector<double>& f) {
  int n = int(f.size());
  std::vector<cplx> w(f.begin(), f.end());
  Fft1 t(n);
  t.forward(w.data());
  scale(w.data(), w.size(), 1.0 / std::sqrt(double(n)));
  return w;
}

}  // namespace

SemiclassicalOperator SemiclassicalOperator::assemble(double h, const Potential& p, const DampingProfile& d,
                                                      const TorusGrid& g, cplx zeta, const AssembleOptions& opt) {
  if (!(h > 0.0)) throw std::invalid_argument("NonpositiveH: h must be positive");
  if (!grid_resolves(g, h)) {
    std::string msg = "grid " + std::to_string(g.n_x) + "x" + std::to_string(g.n_y) +
                      " does not resolve h=" + std::to_string(h) + " (need n_y >= 4/h^2, n_x >= 4/h)";
    if (opt.strict) throw GridTooCoarse(msg);
    if (!opt.quiet) std::cerr << "warning: " << msg << "\n";
  }
  SemiclassicalOperator op;
  op.h_ = h;
  op.zeta_ = zeta;
  op.grid_ = g;
  op.pot_ = p;
  op.damp_ = d;
  op.fft_ = std::make_shared<Fft2>(g.n_x, g.n_y);

  op.vs_.resize(g.n_x);
  for (int j = 0; j < g.n_x; ++j) op.vs_[j] = p.value(g.x(j));
  op.vhat_ = dft_mean(op.vs_);
  double vmax = 0.0;
  for (auto& c : op.vhat_) vmax = std::max(vmax, std::abs(c));
  for (int m = 0; m < g.n_x; ++m) {
    if (std::abs(op.vhat_[m]) > opt.drop_tol * vmax) {
      int s = signed_freq(m, g.n_x);
      op.vst_.dk.push_back(s);
      op.vst_.dn.push_back(0);
      op.vst_.c.push_back(op.vhat_[m]);
      op.vst_.radius_k = std::max(op.vst_.radius_k, std::abs(s));
    }
  }

  if (d.y_only()) {
    op.bs_.resize(g.n_y);
    for (int l = 0; l < g.n_y; ++l) op.bs_[l] = d(0.0, g.y(l));
    op.bhat_y_ = dft_mean(op.bs_);
    double bmax = 0.0;
    for (auto& c : op.bhat_y_) bmax = std::max(bmax, std::abs(c));
    for (int m = 0; m < g.n_y; ++m) {
      if (bmax > 0 && std::abs(op.bhat_y_[m]) > opt.drop_tol * bmax) {
        int s = signed_freq(m, g.n_y);
        op.bst_.dk.push_back(0);
        op.bst_.dn.push_back(s);
        op.bst_.c.push_back(op.bhat_y_[m]);
        op.bst_.radius_n = std::max(op.bst_.radius_n, std::abs(s));
      }
    }
  } else {
    op.bs_.resize(g.size());
    for (int l = 0; l < g.n_y; ++l)
      for (int j = 0; j < g.n_x; ++j) op.bs_[std::size_t(l) * g.n_x + j] = d(g.x(j), g.y(l));
    std::vector<cplx> w(op.bs_.begin(), op.bs_.end());
    op.fft_->forward(w.data());
    scale(w.data(), w.size(), 1.0 / std::sqrt(double(g.size())));
    double bmax = 0.0;
    for (auto& c : w) bmax = std::max(bmax, std::abs(c));
    for (int l = 0; l < g.n_y; ++l)
      for (int j = 0; j < g.n_x; ++j) {
        cplx c = w[std::size_t(l) * g.n_x + j];
        if (bmax > 0 && std::abs(c) > opt.drop_tol * bmax) {
          int sk = signed_freq(j, g.n_x), sn = signed_freq(l, g.n_y);
          op.bst_.dk.push_back(sk);
          op.bst_.dn.push_back(sn);
          op.bst_.c.push_back(c);
          op.bst_.radius_k = std::max(op.bst_.radius_k, std::abs(sk));
          op.bst_.radius_n = std::max(op.bst_.radius_n, std::abs(sn));
        }
      }
    op.bhat2_ = std::move(w);
  }
  op.bst_.full_n = 2 * op.bst_.radius_n + 1 >= g.n_y;
  return op;
}

std::vector<cplx> SemiclassicalOperator::apply_spectral(const std::vector<cplx>& uhat) const {
  const int nx = grid_.n_x, ny = grid_.n_y;
  if (uhat.size() != grid_.size()) throw GridMismatch("field size does not match operator grid");
  const double h2 = h_ * h_;
  std::vector<cplx> t1(uhat.size()), t2(uhat);
  for (int l = 0; l < ny; ++l) {
    double n = signed_freq(l, ny);
    for (int j = 0; j < nx; ++j) t1[std::size_t(l) * nx + j] = h2 * n * n * uhat[std::size_t(l) * nx + j];
  }
  fft_->backward(t1.data());
  fft_->backward(t2.data());
  const cplx ih(0.0, h_);
  const bool yo = bs_.size() == std::size_t(ny);
  for (int l = 0; l < ny; ++l)
    for (int j = 0; j < nx; ++j) {
      std::size_t i = std::size_t(l) * nx + j;
      double b = yo ? bs_[l] : bs_[i];
      t1[i] = vs_[j] * t1[i] + ih * b * t2[i];
    }
  fft_->forward(t1.data());
  for (int l = 0; l < ny; ++l)
    for (int j = 0; j < nx; ++j) {
      double k = signed_freq(j, nx);
      std::size_t i = std::size_t(l) * nx + j;
      t1[i] += (h2 * k * k - zeta_) * uhat[i];
    }
  return t1;
}

GrushinField SemiclassicalOperator::apply(const GrushinField& u) const {
  if (!(u.grid == grid_)) throw GridMismatch("field grid does not match operator grid");
  std::vector<cplx> w = u.v;
  fft_->forward(w.data());
  w = apply_spectral(w);
  fft_->backward(w.data());
  GrushinField r(grid_, h_);
  r.v = std::move(w);
  return r;
}

SpMat SemiclassicalOperator::matrix(std::size_t max_nnz) const {
  const int nx = grid_.n_x, ny = grid_.n_y;
  const std::size_t N = grid_.size();
  std::size_t est = N * (1 + vst_.c.size() + bst_.c.size());
  if (est > max_nnz) throw std::runtime_error("assembled matrix too large; use the matrix-free path");
  const double h2 = h_ * h_;
  const cplx ih(0.0, h_);
  std::vector<Eigen::Triplet<cplx>> t;
  t.reserve(est);
  for (int l = 0; l < ny; ++l) {
    double n = signed_freq(l, ny);
    for (int j = 0; j < nx; ++j) {
      double k = signed_freq(j, nx);
      int row = l * nx + j;
      t.emplace_back(row, row, h2 * k * k - zeta_);
      for (std::size_t s = 0; s < vst_.c.size(); ++s) {
        int col = l * nx + wrap_index(j - vst_.dk[s], nx);
        t.emplace_back(row, col, vst_.c[s] * h2 * n * n);
      }
      for (std::size_t s = 0; s < bst_.c.size(); ++s) {
        int col = wrap_index(l - bst_.dn[s], ny) * nx + wrap_index(j - bst_.dk[s], nx);
        t.emplace_back(row, col, ih * bst_.c[s]);
      }
    }
  }
  SpMat A(N, N);
  A.setFromTriplets(t.begin(), t.end());
  A.makeCompressed();
  return A;
}

// ---------------------------------------------------------------- seminorms

namespace {

// Spectral derivative of order (ox, oy) of a field given by coefficients.
std::vector<cplx> spectral_derivative(const std::vector<cplx>& uhat, const TorusGrid& g, int ox, int oy) {
  std::vector<cplx> w(uhat.size());
  for (int l = 0; l < g.n_y; ++l) {
    int n = signed_freq(l, g.n_y);
    cplx fy = std::pow(cplx(0, n), oy);
    if (oy % 2 == 1 && 2 * std::abs(n) == g.n_y) fy = 0;
    for (int j = 0; j < g.n_x; ++j) {
      int k = signed_freq(j, g.n_x);
      cplx fx = std::pow(cplx(0, k), ox);
      if (ox % 2 == 1 && 2 * std::abs(k) == g.n_x) fx = 0;
      w[std::size_t(l) * g.n_x + j] = fx * fy * uhat[std::size_t(l) * g.n_x + j];
    }
  }
  return w;
}

double l2(const std::vector<cplx>& v, const TorusGrid& g) {
  double s = 0.0;
  for (const auto& z : v) s += std::norm(z);
  return std::sqrt(s * g.dx() * g.dy());
}

}  // namespace

double grushin_seminorm(const GrushinField& u, int k, const Potential& p) {
  if (k != 1 && k != 2) throw std::invalid_argument("seminorm order must be 1 or 2");
  const TorusGrid& g = u.grid;
  Fft2 f(g.n_x, g.n_y);
  std::vector<cplx> uh = u.v;
  f.forward(uh.data());
  auto phys = [&](std::vector<cplx> c) {
    f.backward(c.data());
    return c;
  };
  std::vector<double> W(g.n_x), Wp(g.n_x), V(g.n_x);
  for (int j = 0; j < g.n_x; ++j) {
    double x = g.x(j);
    V[j] = p.value(x);
    W[j] = std::sqrt(std::max(0.0, V[j]));
    Wp[j] = W[j] > 0 ? p.d1(x) / (2.0 * W[j]) : 0.0;
  }
  auto mulx = [&](std::vector<cplx> v, const std::vector<double>& m) {
    for (int l = 0; l < g.n_y; ++l)
      for (int j = 0; j < g.n_x; ++j) v[std::size_t(l) * g.n_x + j] *= m[j];
    return v;
  };
  if (k == 1) {
    auto ux = phys(spectral_derivative(uh, g, 1, 0));
    auto uy = phys(spectral_derivative(uh, g, 0, 1));
    return l2(ux, g) + l2(mulx(uy, W), g);
  }
  auto uxx = phys(spectral_derivative(uh, g, 2, 0));
  auto uy = phys(spectral_derivative(uh, g, 0, 1));
  auto uxy = phys(spectral_derivative(uh, g, 1, 1));
  auto uyy = phys(spectral_derivative(uh, g, 0, 2));
  // d_x (W d_y u) by the product rule, W d_y d_x u, W d_y W d_y u = V d_y^2 u
  std::vector<cplx> a = mulx(uy, Wp), b = mulx(uxy, W);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return l2(uxx, g) + l2(a, g) + l2(b, g) + l2(mulx(uyy, V), g);
}

GrushinField grushin_laplacian(const GrushinField& u, const Potential& p) {
  const TorusGrid& g = u.grid;
  Fft2 f(g.n_x, g.n_y);
  std::vector<cplx> uh = u.v;
  f.forward(uh.data());
  auto uxx = spectral_derivative(uh, g, 2, 0);
  auto uyy = spectral_derivative(uh, g, 0, 2);
  f.backward(uxx.data());
  f.backward(uyy.data());
  GrushinField r(g, u.h);
  for (int l = 0; l < g.n_y; ++l)
    for (int j = 0; j < g.n_x; ++j) {
      std::size_t i = std::size_t(l) * g.n_x + j;
      r.v[i] = uxx[i] + p.value(g.x(j)) * uyy[i];
    }
  return r;
}

AprioriParts subelliptic_apriori_check(const GrushinField& u, const Potential& p) {
  const TorusGrid& g = u.grid;
  std::vector<cplx> uh = to_spectral(u);
  for (int l = 0; l < g.n_y; ++l) {
    double n = std::abs(signed_freq(l, g.n_y));
    for (int j = 0; j < g.n_x; ++j) uh[std::size_t(l) * g.n_x + j] *= n;
  }
  AprioriParts r;
  r.lhs = from_spectral(g, u.h, std::move(uh)).norm();
  r.laplacian = grushin_laplacian(u, p).norm();
  r.mass = u.norm();
  return r;
}

// ---------------------------------------------------------------- IO

namespace {
template <class T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}
}  // namespace

void write_field(const GrushinField& u, const std::string& path, const json& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& z : u.v) {
    float re = to_le(float(z.real())), im = to_le(float(z.imag()));
    out.write(reinterpret_cast<const char*>(&re), 4);
    out.write(reinterpret_cast<const char*>(&im), 4);
  }
  json side = {{"format", "complex64-le"},
               {"layout", "row-major (y, x), x fastest"},
               {"n_x", u.grid.n_x},
               {"n_y", u.grid.n_y},
               {"h", u.h},
               {"x0", -kPi},
               {"y0", -kPi}};
  if (!extra.is_null()) side["meta"] = extra;
  std::ofstream js(path + ".json");
  js << side.dump(2) << "\n";
}

GrushinField read_field(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw std::runtime_error("missing sidecar " + path + ".json");
  json side = json::parse(js);
  TorusGrid g(side.at("n_x").get<int>(), side.at("n_y").get<int>());
  GrushinField u(g, side.at("h").get<double>());
  std::ifstream in(path, std::ios::binary);
  for (auto& z : u.v) {
    float re, im;
    in.read(reinterpret_cast<char*>(&re), 4);
    in.read(reinterpret_cast<char*>(&im), 4);
    if (!in) throw std::runtime_error("truncated field file " + path);
    z = cplx(to_le(re), to_le(im));
  }
  return u;
}

void write_matrix_market(const SpMat& A, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "%%MatrixMarket matrix coordinate complex general\n";
  out << A.rows() << " " << A.cols() << " " << A.nonZeros() << "\n";
  out << std::setprecision(17);
  for (int c = 0; c < A.outerSize(); ++c)
    for (SpMat::InnerIterator it(A, c); it; ++it)
      out << it.row() + 1 << " " << it.col() + 1 << " " << it.value().real() << " " << it.value().imag() << "\n";
}

}  // namespace grushin
