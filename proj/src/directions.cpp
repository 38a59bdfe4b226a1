#include "bd3mg/directions.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace bd3mg {

Sym2 pinv_sym(const Sym2& m, double tol_rel) {
  Eigen::Matrix2d mat;
  mat << m.a, m.b, m.b, m.c;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig;
  eig.computeDirect(mat);
  const Eigen::Vector2d lam = eig.eigenvalues();
  const double lam_max = lam.cwiseAbs().maxCoeff();
  if (lam_max == 0.0 || !std::isfinite(lam_max)) return {};
  Eigen::Vector2d inv = Eigen::Vector2d::Zero();
  for (int i = 0; i < 2; ++i)
    if (std::abs(lam[i]) > tol_rel * lam_max) inv[i] = 1.0 / lam[i];
  const Eigen::Matrix2d& q = eig.eigenvectors();
  const Eigen::Matrix2d p = q * inv.asDiagonal() * q.transpose();
  return {p(0, 0), 0.5 * (p(0, 1) + p(1, 0)), p(1, 1)};
}

SubspaceBasis make_basis(std::span<const double> grad, std::span<const double> d_mem) {
  if (grad.size() != d_mem.size()) throw std::invalid_argument("memory direction length differs from block size");
  SubspaceBasis basis;
  const double gnorm = norm2(grad);
  const double cutoff = 1e-14 * (1.0 + gnorm);
  basis.columns[0].resize(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) basis.columns[0][i] = -grad[i];
  basis.columns[1].assign(d_mem.begin(), d_mem.end());
  for (int c = 0; c < 2; ++c) {
    basis.active[c] = norm2(basis.columns[c]) > cutoff;
    if (basis.active[c])
      ++basis.active_count;
    else
      std::fill(basis.columns[c].begin(), basis.columns[c].end(), 0.0);
  }
  return basis;
}

namespace {

void check_task(const BlockTask& t) {
  if (t.d_mem.size() != t.block.voxels())
    throw std::invalid_argument("task memory direction has length " + std::to_string(t.d_mem.size()) +
                                ", block has " + std::to_string(t.block.voxels()));
}

std::vector<double> finite_gradient(const BlockTask& t) {
  auto g = grad_block(t.obj, t.x, t.block);
  for (double v : g)
    if (!std::isfinite(v)) throw std::runtime_error("non-finite block gradient");
  return g;
}

bool is_zero(std::span<const double> v) {
  for (double e : v)
    if (e != 0.0) return false;
  return true;
}

// d' = D u with u = -(D^T A D)^+ D^T g, where curvature(c) returns A times column c.
template <class Curvature>
std::vector<double> subspace_step(const SubspaceBasis& basis, std::span<const double> g, Curvature&& curvature) {
  GramSystem sys;
  std::array<std::vector<double>, 2> ad;
  for (int c = 0; c < 2; ++c)
    if (basis.active[c]) ad[c] = curvature(basis.columns[c]);
  auto entry = [&](int i, int j) { return basis.active[i] && basis.active[j] ? dot(basis.columns[i], ad[j]) : 0.0; };
  const double off = 0.5 * (entry(0, 1) + entry(1, 0));
  sys.gram = {entry(0, 0), off, entry(1, 1)};
  for (int c = 0; c < 2; ++c) sys.rhs[c] = basis.active[c] ? dot(basis.columns[c], g) : 0.0;

  const Sym2 p = pinv_sym(sys.gram, sys.pinv_tol);
  const double u0 = -(p.a * sys.rhs[0] + p.b * sys.rhs[1]);
  const double u1 = -(p.b * sys.rhs[0] + p.c * sys.rhs[1]);
  std::vector<double> step(g.size(), 0.0);
  for (std::size_t i = 0; i < step.size(); ++i) step[i] = u0 * basis.columns[0][i] + u1 * basis.columns[1][i];
  return step;
}

}  // namespace

std::vector<double> mg_direction(const BlockTask& task) {
  check_task(task);
  const auto g = finite_gradient(task);
  if (is_zero(g)) return std::vector<double>(g.size(), 0.0);
  const MajorantOperator maj(task.obj, task.x, task.block);
  const auto basis = make_basis(g, task.d_mem);
  return subspace_step(basis, g, [&](const std::vector<double>& col) { return maj.apply(col); });
}

std::vector<double> gd_direction(const BlockTask& task, double lipschitz) {
  if (!(lipschitz > 0.0)) throw std::invalid_argument("gd_direction: Lipschitz constant must be positive");
  check_task(task);
  auto g = finite_gradient(task);
  for (auto& v : g) v = -v / lipschitz;
  return g;
}

std::vector<double> cg_direction(const BlockTask& task, double lipschitz) {
  if (!(lipschitz > 0.0)) throw std::invalid_argument("cg_direction: Lipschitz constant must be positive");
  check_task(task);
  const auto g = finite_gradient(task);
  if (is_zero(g)) return std::vector<double>(g.size(), 0.0);
  const auto basis = make_basis(g, task.d_mem);
  return subspace_step(basis, g, [&](const std::vector<double>& col) {
    std::vector<double> out(col.size());
    for (std::size_t i = 0; i < col.size(); ++i) out[i] = lipschitz * col[i];
    return out;
  });
}

Increment mm_direction(const BlockTask& task, const KrylovOptions& opts) {
  if (!(opts.tol > 0.0)) throw std::invalid_argument("mm_direction: tolerance must be positive");
  check_task(task);
  const auto g = finite_gradient(task);
  Increment result;
  result.step.assign(g.size(), 0.0);
  const double gnorm = norm2(g);
  if (gnorm == 0.0) return result;

  const MajorantOperator maj(task.obj, task.x, task.block);
  auto& d = result.step;
  std::vector<double> r(g.size()), p(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) r[i] = -g[i];
  p = r;
  double rr = dot(r, r);
  const double target = opts.tol * gnorm;
  result.solver_converged = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const auto ap = maj.apply(p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;  // breakdown; keep the current iterate
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    result.solver_iterations = it + 1;
    const double rr_new = dot(r, r);
    if (std::sqrt(rr_new) <= target) {
      result.solver_converged = true;
      break;
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
  }
  return result;
}

}  // namespace bd3mg
