#include "grushin/resolvent.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <random>
#include <set>
#include <unordered_map>

#include <Eigen/SparseLU>
#include <boost/math/distributions/students_t.hpp>

namespace grushin {

// ---------------------------------------------------------------- sector basis

SectorBasis SectorBasis::make(int n, Parity p) {
  SectorBasis s;
  s.n = n;
  s.parity = p;
  s.of_index.assign(n, -1);
  const double r = 1.0 / std::sqrt(2.0);
  auto add = [&](int f, int i0, double a0, int i1, double a1) {
    s.of_index[i0] = s.size();
    if (i1 >= 0) s.of_index[i1] = s.size();
    s.freq.push_back(f);
    s.idx0.push_back(i0);
    s.c0.push_back(a0);
    s.idx1.push_back(i1);
    s.c1.push_back(a1);
  };
  switch (p) {
    case Parity::even:
      for (int m = 0; m <= n / 2; ++m) {
        if (m == 0 || 2 * m == n) add(m, m, 1.0, -1, 0.0);
        else add(m, m, r, n - m, r);
      }
      break;
    case Parity::odd:
      for (int m = 1; 2 * m < n; ++m) add(m, m, r, n - m, -r);
      break;
    case Parity::none:
      for (int f = -n / 2; f < n / 2; ++f) add(f, wrap_index(f, n), 1.0, -1, 0.0);
      break;
  }
  return s;
}

namespace {

const char* parity_name(Parity p) {
  switch (p) {
    case Parity::even: return "even";
    case Parity::odd: return "odd";
    default: return "none";
  }
}

// sum over supports of a (rows) and b (cols) of c_a c_b kernel(i - j)
template <class K>
cplx project_pair(const SectorBasis& B, int a, int b, K&& kernel) {
  cplx s = 0;
  const int ia[2] = {B.idx0[a], B.idx1[a]};
  const double ca[2] = {B.c0[a], B.c1[a]};
  const int ib[2] = {B.idx0[b], B.idx1[b]};
  const double cb[2] = {B.c0[b], B.c1[b]};
  for (int u = 0; u < 2; ++u) {
    if (ia[u] < 0) continue;
    for (int v = 0; v < 2; ++v) {
      if (ib[v] < 0) continue;
      s += ca[u] * cb[v] * kernel(wrap_index(ia[u] - ib[v], B.n));
    }
  }
  return s;
}

// candidate columns coupled to sector row a through the index offsets
std::vector<int> coupled(const SectorBasis& B, int a, const std::vector<int>& offsets) {
  std::set<int> out;
  const int ia[2] = {B.idx0[a], B.idx1[a]};
  for (int u = 0; u < 2; ++u) {
    if (ia[u] < 0) continue;
    for (int d : offsets) {
      int b = B.of_index[wrap_index(ia[u] - d, B.n)];
      if (b >= 0) out.insert(b);
    }
  }
  return {out.begin(), out.end()};
}

}  // namespace

// ---------------------------------------------------------------- sector operator

SectorOperator::SectorOperator(const SemiclassicalOperator& op, Parity px, Parity py)
    : bx_(SectorBasis::make(op.grid().n_x, px)),
      by_(SectorBasis::make(op.grid().n_y, py)),
      h_(op.h()),
      zeta_(op.zeta()),
      op_(&op) {
  const int Mx = mx(), My = my();
  const int nx = op.grid().n_x, ny = op.grid().n_y;
  const double h2 = h_ * h_;
  xdiag_.resize(Mx);
  ydiag_.resize(My);
  for (int a = 0; a < Mx; ++a) xdiag_[a] = h2 * double(bx_.freq[a]) * bx_.freq[a];
  for (int a = 0; a < My; ++a) ydiag_[a] = h2 * double(by_.freq[a]) * by_.freq[a];

  // projected V
  const auto& vh = op.v_hat();
  std::vector<Eigen::Triplet<double>> tv;
  for (int a = 0; a < Mx; ++a)
    for (int b : coupled(bx_, a, op.v_stencil().dk)) {
      cplx v = project_pair(bx_, a, b, [&](int d) { return vh[d]; });
      if (std::abs(v) > 0) tv.emplace_back(a, b, v.real());
    }
  cx_.resize(Mx, Mx);
  cx_.setFromTriplets(tv.begin(), tv.end());

  const cplx ih(0.0, h_);
  const Stencil& bs = op.b_stencil();
  if (bs.c.empty()) return;
  const DampingProfile& d = op.damping();
  if (d.y_only() && 2 * bs.radius_n + 1 > std::max(16, My / 8)) {
    dense_b_ = true;
    const auto& bh = op.b_hat_y();
    bdense_.resize(My, My);
    for (int b = 0; b < My; ++b)
      for (int a = 0; a < My; ++a) bdense_(a, b) = ih * project_pair(by_, a, b, [&](int dd) { return bh[dd]; });
    return;
  }
  // general sparse stencil: per x pair, a kernel in the n offset
  std::set<int> dks(bs.dk.begin(), bs.dk.end());
  std::vector<int> dkv(dks.begin(), dks.end());
  for (int ax = 0; ax < Mx; ++ax) {
    for (int bxi : coupled(bx_, ax, dkv)) {
      // kernel in n for this x pair
      std::unordered_map<int, cplx> kn;
      const int ia[2] = {bx_.idx0[ax], bx_.idx1[ax]};
      const double ca[2] = {bx_.c0[ax], bx_.c1[ax]};
      const int ib[2] = {bx_.idx0[bxi], bx_.idx1[bxi]};
      const double cb[2] = {bx_.c0[bxi], bx_.c1[bxi]};
      for (std::size_t s = 0; s < bs.c.size(); ++s) {
        int dkw = wrap_index(bs.dk[s], nx);
        for (int u = 0; u < 2; ++u) {
          if (ia[u] < 0) continue;
          for (int v = 0; v < 2; ++v) {
            if (ib[v] < 0) continue;
            if (wrap_index(ia[u] - ib[v], nx) == dkw) kn[wrap_index(bs.dn[s], ny)] += ca[u] * cb[v] * bs.c[s];
          }
        }
      }
      if (kn.empty()) continue;
      std::vector<int> dns;
      for (auto& [k, v] : kn) dns.push_back(k);
      std::vector<Eigen::Triplet<cplx>> t;
      for (int ay = 0; ay < My; ++ay)
        for (int by : coupled(by_, ay, dns)) {
          cplx v = project_pair(by_, ay, by, [&](int dd) {
            auto it = kn.find(dd);
            return it == kn.end() ? cplx(0) : it->second;
          });
          if (std::abs(v) > 0) t.emplace_back(ay, by, ih * v);
        }
      if (t.empty()) continue;
      SpMat T(My, My);
      T.setFromTriplets(t.begin(), t.end());
      bpairs_[{ax, bxi}] = std::move(T);
    }
  }
}

VecC SectorOperator::apply(const VecC& u) const {
  const int Mx = mx(), My = my();
  VecC out(size());
  for (int ax = 0; ax < Mx; ++ax)
    for (int ay = 0; ay < My; ++ay) out(ax * My + ay) = (xdiag_[ax] - zeta_) * u(ax * My + ay);
  for (int ax = 0; ax < Mx; ++ax)
    for (decltype(cx_)::InnerIterator it(cx_, ax); it; ++it)
      for (int ay = 0; ay < My; ++ay) out(ax * My + ay) += it.value() * ydiag_[ay] * u(it.col() * My + ay);
  if (dense_b_) {
    Eigen::Map<const MatC> U(u.data(), My, Mx);
    Eigen::Map<MatC> O(out.data(), My, Mx);
    O.noalias() += bdense_ * U;
  }
  for (const auto& [k, T] : bpairs_) out.segment(k.first * My, My) += T * u.segment(k.second * My, My);
  return out;
}

std::vector<cplx> SectorOperator::expand(const VecC& u) const {
  const int nx = bx_.n, ny = by_.n, My = my();
  std::vector<cplx> w(std::size_t(nx) * ny, cplx(0));
  for (int ax = 0; ax < mx(); ++ax)
    for (int ay = 0; ay < My; ++ay) {
      cplx val = u(ax * My + ay);
      const int ix[2] = {bx_.idx0[ax], bx_.idx1[ax]};
      const double cx[2] = {bx_.c0[ax], bx_.c1[ax]};
      const int iy[2] = {by_.idx0[ay], by_.idx1[ay]};
      const double cy[2] = {by_.c0[ay], by_.c1[ay]};
      for (int p = 0; p < 2; ++p) {
        if (ix[p] < 0) continue;
        for (int q = 0; q < 2; ++q) {
          if (iy[q] < 0) continue;
          w[std::size_t(iy[q]) * nx + ix[p]] += cx[p] * cy[q] * val;
        }
      }
    }
  return w;
}

VecC SectorOperator::restrict(const std::vector<cplx>& w) const {
  const int nx = bx_.n, My = my();
  VecC u = VecC::Zero(size());
  for (int ax = 0; ax < mx(); ++ax)
    for (int ay = 0; ay < My; ++ay) {
      const int ix[2] = {bx_.idx0[ax], bx_.idx1[ax]};
      const double cx[2] = {bx_.c0[ax], bx_.c1[ax]};
      const int iy[2] = {by_.idx0[ay], by_.idx1[ay]};
      const double cy[2] = {by_.c0[ay], by_.c1[ay]};
      cplx s = 0;
      for (int p = 0; p < 2; ++p) {
        if (ix[p] < 0) continue;
        for (int q = 0; q < 2; ++q) {
          if (iy[q] < 0) continue;
          s += cx[p] * cy[q] * w[std::size_t(iy[q]) * nx + ix[p]];
        }
      }
      u(ax * My + ay) = s;
    }
  return u;
}

MatC SectorOperator::dense() const {
  MatC D(size(), size());
  VecC e = VecC::Zero(size());
  for (int c = 0; c < size(); ++c) {
    e(c) = 1.0;
    D.col(c) = apply(e);
    e(c) = 0.0;
  }
  return D;
}

SectorOperator::Layout SectorOperator::choose_layout() const {
  int gx = 1, gy = 1;
  for (int a = 0; a < cx_.outerSize(); ++a)
    for (decltype(cx_)::InnerIterator it(cx_, a); it; ++it) gx = std::max(gx, std::abs(a - int(it.col())));
  for (const auto& [k, T] : bpairs_) {
    gx = std::max(gx, std::abs(k.first - k.second));
    for (int c = 0; c < T.outerSize(); ++c)
      for (SpMat::InnerIterator it(T, c); it; ++it) gy = std::max(gy, std::abs(int(it.row()) - c));
  }
  auto cost = [](int major, int minor, int g) {
    double nb = std::ceil(double(major) / g);
    double bs = double(g) * minor;
    return nb * bs * bs * bs;
  };
  Layout L;
  double cxm = cost(mx(), my(), gx);
  if (dense_b_) gy = my();  // the dense y block couples every y index
  double cym = cost(my(), mx(), gy);
  L.x_major = cxm <= cym;
  L.group = L.x_major ? gx : gy;
  L.nblocks = (major_count(L) + L.group - 1) / L.group;
  return L;
}

template <class Emit>
void SectorOperator::emit_block(const Layout& L, int R, int C, Emit&& emit) const {
  const int Mx = mx(), My = my(), g = L.group;
  if (L.x_major) {
    const int r0 = R * g, r1 = std::min(Mx, r0 + g), c0 = C * g, c1 = std::min(Mx, c0 + g);
    if (R == C)
      for (int ax = r0; ax < r1; ++ax)
        for (int ay = 0; ay < My; ++ay) emit((ax - r0) * My + ay, (ax - r0) * My + ay, xdiag_[ax] - zeta_);
    for (int ax = r0; ax < r1; ++ax)
      for (decltype(cx_)::InnerIterator it(cx_, ax); it; ++it) {
        int bx = int(it.col());
        if (bx < c0 || bx >= c1) continue;
        for (int ay = 0; ay < My; ++ay) emit((ax - r0) * My + ay, (bx - c0) * My + ay, it.value() * ydiag_[ay]);
      }
    for (auto it = bpairs_.lower_bound({r0, 0}); it != bpairs_.end() && it->first.first < r1; ++it) {
      int ax = it->first.first, bx = it->first.second;
      if (bx < c0 || bx >= c1) continue;
      const SpMat& T = it->second;
      for (int c = 0; c < T.outerSize(); ++c)
        for (SpMat::InnerIterator jt(T, c); jt; ++jt)
          emit((ax - r0) * My + int(jt.row()), (bx - c0) * My + c, jt.value());
    }
  } else {
    const int r0 = R * g, r1 = std::min(My, r0 + g), c0 = C * g, c1 = std::min(My, c0 + g);
    if (R == C) {
      for (int ay = r0; ay < r1; ++ay)
        for (int ax = 0; ax < Mx; ++ax) emit((ay - r0) * Mx + ax, (ay - r0) * Mx + ax, xdiag_[ax] - zeta_);
      for (int ax = 0; ax < Mx; ++ax)
        for (decltype(cx_)::InnerIterator it(cx_, ax); it; ++it)
          for (int ay = r0; ay < r1; ++ay)
            emit((ay - r0) * Mx + ax, (ay - r0) * Mx + int(it.col()), it.value() * ydiag_[ay]);
    }
    if (dense_b_)
      for (int by = c0; by < c1; ++by)
        for (int ay = r0; ay < r1; ++ay)
          for (int ax = 0; ax < Mx; ++ax) emit((ay - r0) * Mx + ax, (by - c0) * Mx + ax, bdense_(ay, by));
    for (const auto& [k, T] : bpairs_) {
      int ax = k.first, bx = k.second;
      for (int by = c0; by < c1; ++by)
        for (SpMat::InnerIterator jt(T, by); jt; ++jt) {
          int ay = int(jt.row());
          if (ay < r0 || ay >= r1) continue;
          emit((ay - r0) * Mx + ax, (by - c0) * Mx + bx, jt.value());
        }
    }
  }
}

MatC SectorOperator::dense_block(const Layout& L, int R) const {
  const int major = major_count(L), minor = minor_count(L);
  const int len = std::min(major, (R + 1) * L.group) - R * L.group;
  MatC D = MatC::Zero(len * minor, len * minor);
  emit_block(L, R, R, [&](int r, int c, cplx v) { D(r, c) += v; });
  if (dense_b_ && L.x_major)
    for (int q = 0; q < len; ++q) D.block(q * minor, q * minor, minor, minor) += bdense_;
  return D;
}

SpMat SectorOperator::sparse_block(const Layout& L, int R, int C) const {
  const int major = major_count(L), minor = minor_count(L);
  const int lr = std::min(major, (R + 1) * L.group) - R * L.group;
  const int lc = std::min(major, (C + 1) * L.group) - C * L.group;
  std::vector<Eigen::Triplet<cplx>> t;
  emit_block(L, R, C, [&](int r, int c, cplx v) { t.emplace_back(r, c, v); });
  SpMat B(lr * minor, lc * minor);
  B.setFromTriplets(t.begin(), t.end());
  B.makeCompressed();
  return B;
}

// ---------------------------------------------------------------- block LU

namespace {
// A^* x = b  <=>  A^T conj(x) = conj(b)
VecC adj_solve(const Eigen::PartialPivLU<MatC>& lu, const VecC& b) {
  return VecC(lu.transpose().solve(b.conjugate())).conjugate();
}
}  // namespace

BlockTridiagLU::BlockTridiagLU(const SectorOperator& S, const SectorOperator::Layout& L) {
  const int nb = L.nblocks;
  const int minor = S.minor_count(L), major = S.major_count(L);
  perm_.resize(S.size());
  for (int ax = 0; ax < S.mx(); ++ax)
    for (int ay = 0; ay < S.my(); ++ay) perm_[S.layout_index(L, ax, ay)] = ax * S.my() + ay;
  off_.assign(nb + 1, 0);
  for (int b = 0; b < nb; ++b) off_[b + 1] = off_[b] + (std::min(major, (b + 1) * L.group) - b * L.group) * minor;
  lu_.resize(nb);
  lower_.resize(std::max(0, nb - 1));
  upper_.resize(std::max(0, nb - 1));
  MatC D = S.dense_block(L, 0);
  for (int i = 0; i < nb; ++i) {
    lu_[i].compute(D);
    if (i + 1 == nb) break;
    upper_[i] = S.sparse_block(L, i, i + 1);
    lower_[i] = S.sparse_block(L, i + 1, i);
    MatC X = lu_[i].solve(MatC(upper_[i]));
    D = S.dense_block(L, i + 1);
    D.noalias() -= lower_[i] * X;
  }
}

VecC BlockTridiagLU::to_layout(const VecC& v) const {
  VecC w(v.size());
  for (std::size_t p = 0; p < perm_.size(); ++p) w(p) = v(perm_[p]);
  return w;
}

VecC BlockTridiagLU::from_layout(const VecC& w) const {
  VecC v(w.size());
  for (std::size_t p = 0; p < perm_.size(); ++p) v(perm_[p]) = w(p);
  return v;
}

VecC BlockTridiagLU::solve(const VecC& b) const {
  const int nb = int(lu_.size());
  VecC r = to_layout(b);
  auto seg = [&](VecC& v, int i) { return v.segment(off_[i], off_[i + 1] - off_[i]); };
  for (int i = 0; i + 1 < nb; ++i) {
    VecC z = lu_[i].solve(seg(r, i));
    seg(r, i + 1) -= lower_[i] * z;
  }
  VecC x(r.size());
  seg(x, nb - 1) = lu_[nb - 1].solve(seg(r, nb - 1));
  for (int i = nb - 2; i >= 0; --i) {
    VecC t = seg(r, i) - upper_[i] * seg(x, i + 1);
    seg(x, i) = lu_[i].solve(t);
  }
  return from_layout(x);
}

VecC BlockTridiagLU::solve_adjoint(const VecC& c) const {
  const int nb = int(lu_.size());
  VecC r = to_layout(c);
  auto seg = [&](VecC& v, int i) { return v.segment(off_[i], off_[i + 1] - off_[i]); };
  VecC p(r.size());
  seg(p, 0) = adj_solve(lu_[0], seg(r, 0));
  for (int i = 0; i + 1 < nb; ++i) {
    VecC t = seg(r, i + 1) - upper_[i].adjoint() * seg(p, i);
    seg(p, i + 1) = adj_solve(lu_[i + 1], t);
  }
  for (int i = nb - 2; i >= 0; --i) {
    VecC t = lower_[i].adjoint() * seg(p, i + 1);
    seg(p, i) -= adj_solve(lu_[i], t);
  }
  return from_layout(p);
}

std::size_t BlockTridiagLU::bytes() const {
  std::size_t s = 0;
  for (const auto& l : lu_) s += std::size_t(l.matrixLU().size()) * sizeof(cplx);
  for (const auto& m : lower_) s += std::size_t(m.nonZeros()) * (sizeof(cplx) + sizeof(int));
  for (const auto& m : upper_) s += std::size_t(m.nonZeros()) * (sizeof(cplx) + sizeof(int));
  return s;
}

// ---------------------------------------------------------------- Lanczos

SigmaMinResult sigma_min_lanczos(int n, const LinOp& solve, const LinOp& solve_adj, const LinOp& apply,
                                 const LinOp& cert_apply, const SigmaMinOptions& opt) {
  SigmaMinResult res;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> nd;
  VecC q(n);
  for (int i = 0; i < n; ++i) q(i) = cplx(nd(rng), nd(rng));
  q.normalize();

  // refined solve: x = S b, then x += S (b - A x)
  double worst = 0.0;
  auto refined = [&](const LinOp& S, const LinOp& Aop, const VecC& b) {
    VecC x = S(b);
    for (int s = 0; s < opt.refine_steps; ++s) {
      VecC r = b - Aop(x);
      x += S(r);
    }
    double rel = (b - Aop(x)).norm() / std::max(b.norm(), 1e-300);
    worst = std::max(worst, rel);
    return x;
  };
  // only the forward solve is refined; A* has no matrix-free apply here

  std::vector<VecC> Q;
  std::vector<double> al, be;
  Eigen::VectorXd s;
  double theta = 0.0;
  for (int k = 0; k < opt.max_iter; ++k) {
    Q.push_back(q);
    VecC y = solve_adj(q);
    VecC w = refined(solve, apply, y);
    double a = q.dot(w).real();
    w -= a * q;
    if (k > 0) w -= be[k - 1] * Q[k - 1];
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& qj : Q) w -= qj * qj.dot(w);
    double b = w.norm();
    al.push_back(a);
    int m = k + 1;
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      T(i, i) = al[i];
      if (i + 1 < m) T(i, i + 1) = T(i + 1, i) = be[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    theta = es.eigenvalues()(m - 1);
    s = es.eigenvectors().col(m - 1);
    double resid = b * std::abs(s(m - 1));
    res.iters = m;
    if ((k >= 2 && resid <= opt.tol * theta) || b < 1e-300 * std::max(1.0, theta) || m == n) {
      res.converged = true;
      break;
    }
    be.push_back(b);
    q = w / b;
  }
  VecC v = VecC::Zero(n);
  for (int j = 0; j < int(Q.size()); ++j) v += s(j) * Q[j];
  v.normalize();
  res.sigma = 1.0 / std::sqrt(theta);
  res.certificate = cert_apply(v).norm();
  res.cert_rel = std::abs(res.certificate - res.sigma) / res.sigma;
  res.solve_residual = worst;
  res.v = std::move(v);
  return res;
}

double sigma_min_dense(const MatC& A) {
  Eigen::BDCSVD<MatC> svd(A);
  return svd.singularValues().minCoeff();
}

SigmaMinResult sigma_min_sparse(const SpMat& A, const SigmaMinOptions& opt) {
  Eigen::SparseLU<SpMat> lu, lua;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw std::runtime_error("FactorizationFailed: sparse LU");
  SpMat Ah = A.adjoint();
  lua.compute(Ah);
  if (lua.info() != Eigen::Success) throw std::runtime_error("FactorizationFailed: sparse LU of adjoint");
  LinOp solve = [&](const VecC& b) -> VecC { return lu.solve(b); };
  LinOp solve_adj = [&](const VecC& b) -> VecC { return lua.solve(b); };
  LinOp apply = [&](const VecC& x) -> VecC { return A * x; };
  return sigma_min_lanczos(int(A.rows()), solve, solve_adj, apply, apply, opt);
}

// ---------------------------------------------------------------- resolvent norm

ResolventSample resolvent_norm(const SemiclassicalOperator& op, const ResolventOptions& opt) {
  auto t0 = std::chrono::steady_clock::now();
  ResolventSample r;
  r.h = op.h();
  r.beta_h = op.zeta().imag() / op.h();
  r.n_x = op.grid().n_x;
  r.n_y = op.grid().n_y;
  const std::size_t N = op.grid().size();
  try {
    if (N <= opt.dense_limit) {
      MatC A(op.matrix());
      r.sigma_min = sigma_min_dense(A);
      r.method = "dense-svd";
      r.converged = true;
    } else {
      std::vector<Parity> px = {Parity::even, Parity::odd};
      std::vector<Parity> py = op.damping().even_y() ? std::vector<Parity>{Parity::even, Parity::odd}
                                                     : std::vector<Parity>{Parity::none};
      r.sigma_min = std::numeric_limits<double>::infinity();
      r.converged = true;
      r.method = "sector-blocklu-lanczos";
      for (Parity a : px)
        for (Parity b : py) {
          SectorOperator S(op, a, b);
          auto L = S.choose_layout();
          double bs = double(L.group) * S.minor_count(L);
          double mem = L.nblocks * bs * bs * 16.0;
          if (mem > 3.2e9) throw std::runtime_error("FactorizationFailed: block LU needs too much memory");
          BlockTridiagLU lu(S, L);
          LinOp solve = [&](const VecC& v) { return lu.solve(v); };
          LinOp solve_adj = [&](const VecC& v) { return lu.solve_adjoint(v); };
          LinOp apply = [&](const VecC& v) { return S.apply(v); };
          LinOp cert = [&](const VecC& v) {
            auto w = op.apply_spectral(S.expand(v));
            return VecC(Eigen::Map<VecC>(w.data(), Eigen::Index(w.size())));
          };
          SigmaMinResult s = sigma_min_lanczos(S.size(), solve, solve_adj, apply, cert, opt.lanczos);
          if (opt.verbose)
            std::cerr << "  sector " << parity_name(a) << "/" << parity_name(b) << " size " << S.size()
                      << (L.x_major ? " x" : " y") << "-major g=" << L.group << " sigma=" << s.sigma
                      << " iters=" << s.iters << " cert=" << s.cert_rel << " solve_res=" << s.solve_residual
                      << "\n";
          r.iters += s.iters;
          r.solve_residual = std::max(r.solve_residual, s.solve_residual);
          bool ok = s.converged && s.cert_rel <= 1e-6;
          if (s.sigma < r.sigma_min) {
            r.sigma_min = s.sigma;
            r.certificate_rel = s.cert_rel;
            r.sector = std::string(parity_name(a)) + "/" + parity_name(b);
          }
          r.converged = r.converged && ok;
        }
    }
    r.norm = 1.0 / r.sigma_min;
  } catch (const std::exception& e) {
    r.error = e.what();
    r.converged = false;
    r.norm = std::numeric_limits<double>::infinity();
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------- 1D family

namespace {
std::vector<cplx> dft_mean_1d(const std::vector<double>& f) {
  int n = int(f.size());
  std::vector<cplx> w(f.begin(), f.end());
  Fft1 t(n);
  t.forward(w.data());
  for (auto& z : w) z /= std::sqrt(double(n));
  return w;
}
}  // namespace

int oned_grid_size(double h) { return std::max(256, next_pow2(4.0 / h)); }

OneDOperator oned_operator(double h, double E, const DampingProfile& d, double a, double hbar, int n) {
  OneDOperator o{h, E, a, hbar, n, MatC::Zero(n, n)};
  std::vector<double> b(n);
  for (int l = 0; l < n; ++l) b[l] = d(0.0, -kPi + l * kTwoPi / n);
  auto bh = dft_mean_1d(b);
  const cplx ih(0.0, h);
  const double h2 = h * h, h4 = h2 * h2;
  for (int k = 0; k < n; ++k) {
    double f = signed_freq(k, n);
    for (int kp = 0; kp < n; ++kp) o.A(k, kp) = ih * bh[wrap_index(k - kp, n)];
    o.A(k, k) += h2 * f * f - E + a * h4 * f * f * f * f * chi0_tilde(hbar * f);
  }
  return o;
}

MatC oned_operator_physical(double h, double E, const DampingProfile& d, double a, double hbar, int n) {
  // periodic spectral second-derivative matrix, closed form (n even)
  const double dx = kTwoPi / n;
  MatC A(n, n);
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < n; ++l) {
      double v;
      if (j == l) v = -kPi * kPi / (3.0 * dx * dx) - 1.0 / 6.0;
      else {
        double s = std::sin((j - l) * dx / 2.0);
        v = -(((j - l) % 2 == 0) ? 1.0 : -1.0) / (2.0 * s * s);
      }
      A(j, l) = -h * h * v;
    }
  if (a != 0.0) {
    // fourth-order term through the Fourier multiplier
    Fft1 f(n);
    for (int l = 0; l < n; ++l) {
      std::vector<cplx> e(n, 0.0);
      e[l] = 1.0;
      f.forward(e.data());
      for (int k = 0; k < n; ++k) {
        double fr = signed_freq(k, n);
        e[k] *= a * std::pow(h, 4) * std::pow(fr, 4) * chi0_tilde(hbar * fr);
      }
      f.backward(e.data());
      for (int j = 0; j < n; ++j) A(j, l) += e[j];
    }
  }
  for (int j = 0; j < n; ++j) A(j, j) += -E + cplx(0, h) * d(0.0, -kPi + j * dx);
  return A;
}

std::vector<cplx> oned_family_solve(double h, double E, const DampingProfile& d, double a,
                                    const std::vector<cplx>& r, double hbar) {
  int n = int(r.size());
  OneDOperator o = oned_operator(h, E, d, a, hbar, n);
  std::vector<cplx> rh = r;
  Fft1 f(n);
  f.forward(rh.data());
  Eigen::PartialPivLU<MatC> lu(o.A);
  VecC w = lu.solve(Eigen::Map<VecC>(rh.data(), n));
  if (!w.allFinite()) throw std::runtime_error("SingularSystem: 1D family");
  std::vector<cplx> out(w.data(), w.data() + n);
  f.backward(out.data());
  return out;
}

double oned_resolvent_norm(double h, double E, const DampingProfile& d, double a, double hbar, int n) {
  OneDOperator o = oned_operator(h, E, d, a, hbar, n);
  Eigen::PartialPivLU<MatC> lu(o.A);
  LinOp solve = [&](const VecC& v) -> VecC { return lu.solve(v); };
  LinOp solve_adj = [&](const VecC& v) -> VecC { return adj_solve(lu, v); };
  LinOp apply = [&](const VecC& v) -> VecC { return o.A * v; };
  SigmaMinOptions opt;
  opt.refine_steps = 0;
  auto s = sigma_min_lanczos(n, solve, solve_adj, apply, apply, opt);
  return 1.0 / s.sigma;
}

std::vector<double> oned_energy_grid(double h, double delta, int count, double K0) {
  double lo = 0.1 * h * h, hi = std::max(1.0, 2.0 * K0 * std::pow(h, 1.0 - delta));
  std::vector<double> E(count);
  for (int i = 0; i < count; ++i) E[i] = lo * std::pow(hi / lo, double(i) / (count - 1));
  return E;
}

OneDSweep oned_sup_norm(double h, const DampingProfile& d, double a, int count, int n) {
  if (n <= 0) n = oned_grid_size(h);
  double delta = 1.0 / (d.nu() + 2.0);
  double hbar = std::pow(h, (1.0 + delta) / 2.0);
  OneDSweep s;
  s.h = h;
  s.E = oned_energy_grid(h, delta, count);
  for (double E : s.E) {
    double v = oned_resolvent_norm(h, E, d, a, hbar, n);
    s.norms.push_back(v);
    if (v > s.sup_norm) {
      s.sup_norm = v;
      s.argmax_E = E;
    }
  }
  return s;
}

// ---------------------------------------------------------------- fit

ScalingFit fit_exponent(const std::vector<double>& h, const std::vector<double>& value, int min_samples) {
  if (h.size() != value.size()) throw std::invalid_argument("fit_exponent: size mismatch");
  if (int(h.size()) < min_samples) throw TooFewSamples("fit_exponent needs at least " + std::to_string(min_samples) + " samples");
  ScalingFit f;
  f.h = h;
  f.value = value;
  const int n = int(h.size());
  double sx = 0, sy = 0;
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = std::log(1.0 / h[i]);
    y[i] = std::log(value[i]);
    sx += x[i];
    sy += y[i];
  }
  double mx = sx / n, my = sy / n, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0;
  for (int i = 0; i < n; ++i) {
    double e = y[i] - (f.intercept + f.slope * x[i]);
    ssr += e * e;
  }
  f.residual = std::sqrt(ssr / n);
  if (n > 2) {
    boost::math::students_t dist(n - 2);
    double t = boost::math::quantile(boost::math::complement(dist, 0.025));
    f.half_width = t * std::sqrt(ssr / (n - 2) / sxx);
  }
  return f;
}

}  // namespace grushin
