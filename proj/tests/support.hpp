#pragma once

// Shared fixtures and brute-force oracles for the test suites. Everything here
// is written directly from the model definitions with plain loops, independent
// of the row-streaming kernels in the library.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

#include "bd3mg/blur.hpp"
#include "bd3mg/objective.hpp"
#include "bd3mg/rng.hpp"
#include "bd3mg/volume.hpp"

namespace bd3mg::oracle {

inline Volume3D random_volume(Dims3 dims, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Xoshiro256 rng(seed);
  Volume3D v(dims);
  for (auto& e : v.storage()) e = rng.uniform(lo, hi);
  return v;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Xoshiro256 rng(seed);
  std::vector<double> v(n);
  for (auto& e : v) e = rng.uniform(lo, hi);
  return v;
}

inline PsfStack random_psf(Dims3 dims, KernelDims kdims, std::uint64_t seed) {
  return generate_psf_stack(dims, kdims, PsfRanges{}, seed);
}

inline double kernel_at(const PsfStack& psf, int z, int i, int j, int l) {
  const auto& k = psf.kdims();
  return psf.kernel(z)[(std::size_t(l) * k.ky + j) * k.kx + i];
}

/// (Hx)(p) = sum_u h_{z_p}(u) x(p - u), zero outside the volume.
inline Volume3D naive_blur(const PsfStack& psf, const Volume3D& x) {
  const Dims3 d = x.dims();
  const auto& k = psf.kdims();
  Volume3D out(d);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int xi = 0; xi < d.nx; ++xi) {
        double acc = 0.0;
        for (int l = 0; l < k.kz; ++l)
          for (int j = 0; j < k.ky; ++j)
            for (int i = 0; i < k.kx; ++i) {
              const int qx = xi - (i - k.hx()), qy = y - (j - k.hy()), qz = z - (l - k.hz());
              if (qx < 0 || qy < 0 || qz < 0 || qx >= d.nx || qy >= d.ny || qz >= d.nz) continue;
              acc += kernel_at(psf, z, i, j, l) * x.at(qx, qy, qz);
            }
        out.at(xi, y, z) = acc;
      }
  return out;
}

/// Scalar-loop evaluation of the four-term objective.
inline double naive_objective(const PsfStack& psf, const Volume3D& y, const RegParams& p, const Volume3D& x) {
  const Dims3 d = x.dims();
  const Volume3D hx = naive_blur(psf, x);
  double data = 0.0, box = 0.0, tv = 0.0, axial = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    data += 0.5 * (hx[n] - y[n]) * (hx[n] - y[n]);
    const double c = std::min(std::max(x[n], p.x_min), p.x_max);
    box += (x[n] - c) * (x[n] - c);
  }
  for (int z = 0; z < d.nz; ++z)
    for (int yy = 0; yy < d.ny; ++yy)
      for (int xi = 0; xi < d.nx; ++xi) {
        const double gx = xi + 1 < d.nx ? x.at(xi + 1, yy, z) - x.at(xi, yy, z) : 0.0;
        const double gy = yy + 1 < d.ny ? x.at(xi, yy + 1, z) - x.at(xi, yy, z) : 0.0;
        const double gz = z + 1 < d.nz ? x.at(xi, yy, z + 1) - x.at(xi, yy, z) : 0.0;
        tv += std::sqrt(gx * gx + gy * gy + p.delta * p.delta);
        axial += gz * gz;
      }
  return data + p.eta * box + p.lambda * tv + p.kappa * axial;
}

/// Columns of a linear map n -> m applied to unit vectors.
inline Eigen::MatrixXd materialize(std::size_t n, const std::function<std::vector<double>(const std::vector<double>&)>& op) {
  Eigen::MatrixXd m;
  std::vector<double> e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    e[c] = 1.0;
    const auto col = op(e);
    if (c == 0) m.resize(Eigen::Index(col.size()), Eigen::Index(n));
    for (std::size_t r = 0; r < col.size(); ++r) m(Eigen::Index(r), Eigen::Index(c)) = col[r];
    e[c] = 0.0;
  }
  return m;
}

/// Dense block majorant built from scratch: H^T H from the naive blur, and the
/// difference operators as explicit matrices, then the principal submatrix on S.
inline Eigen::MatrixXd dense_block_majorant(const Objective& obj, const Volume3D& anchor, const SliceBlock& block) {
  const Dims3 d = obj.dims();
  const RegParams& p = obj.params();
  const auto n = Eigen::Index(d.voxels());
  Eigen::MatrixXd H = materialize(d.voxels(), [&](const std::vector<double>& v) {
    return naive_blur(obj.psf(), Volume3D(d, v)).storage();
  });
  Eigen::MatrixXd Vx = Eigen::MatrixXd::Zero(n, n), Vy = Vx, Vz = Vx;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const auto r = Eigen::Index(anchor.index(x, y, z));
        if (x + 1 < d.nx) Vx(r, Eigen::Index(anchor.index(x + 1, y, z))) = 1.0, Vx(r, r) = -1.0;
        if (y + 1 < d.ny) Vy(r, Eigen::Index(anchor.index(x, y + 1, z))) = 1.0, Vy(r, r) = -1.0;
        if (z + 1 < d.nz) Vz(r, Eigen::Index(anchor.index(x, y, z + 1))) = 1.0, Vz(r, r) = -1.0;
      }
  Eigen::Map<const Eigen::VectorXd> a(anchor.data().data(), n);
  const Eigen::VectorXd gx = Vx * a, gy = Vy * a;
  Eigen::VectorXd omega(n);
  for (Eigen::Index i = 0; i < n; ++i) omega(i) = 1.0 / std::sqrt(gx(i) * gx(i) + gy(i) * gy(i) + p.delta * p.delta);
  const Eigen::MatrixXd full = H.transpose() * H + 2.0 * p.eta * Eigen::MatrixXd::Identity(n, n) +
                               p.lambda * Vx.transpose() * omega.asDiagonal() * Vx +
                               p.lambda * Vy.transpose() * omega.asDiagonal() * Vy + 2.0 * p.kappa * Vz.transpose() * Vz;
  const auto off = Eigen::Index(std::size_t(block.z_lo) * d.slice_voxels());
  const auto len = Eigen::Index(block.voxels());
  return full.block(off, off, len, len);
}

/// Blurred, noisy phantom with default regularization.
struct Instance {
  Volume3D truth;
  Objective obj;
  Volume3D x0;
};

inline Instance make_instance(Dims3 dims, KernelDims kdims, double noise_sigma, std::uint64_t seed,
                              PsfRanges ranges = {}, RegParams reg = {}) {
  Volume3D truth = phantom(dims, seed);
  PsfStack psf = generate_psf_stack(dims, kdims, ranges, seed + 1);
  Volume3D y = add_gaussian_noise(apply_H(psf, truth), noise_sigma, seed + 2);
  const double ymax = y.max_value();
  Objective obj(std::move(psf), std::move(y), reg);
  return {std::move(truth), std::move(obj), init_uniform(dims, ymax, seed + 3)};
}

/// The 32x32x8 benchmark instance used by the convergence and quality checks:
/// 5x5x3 kernels with per-axis sigma in [0.5, 1.5], noise 0.06 (input SNR about 10 dB).
inline Instance benchmark_instance() {
  const Dims3 dims{32, 32, 8};
  Volume3D truth = phantom(dims, 7);
  PsfRanges r;
  r.sigma1 = r.sigma2 = r.sigma3 = {0.5, 1.5};
  PsfStack psf = generate_psf_stack(dims, {5, 5, 3}, r, 3);
  Volume3D y = add_gaussian_noise(apply_H(psf, truth), 0.06, 4);
  const double ymax = y.max_value();
  Objective obj(std::move(psf), std::move(y), RegParams{});
  return {std::move(truth), std::move(obj), init_uniform(dims, ymax, 1)};
}

}  // namespace bd3mg::oracle
