#include <gtest/gtest.h>

#include <cmath>

#include "bd3mg/objective.hpp"
#include "support.hpp"

using namespace bd3mg;
using namespace bd3mg::oracle;

namespace {

Objective random_objective(Dims3 d, KernelDims kd, std::uint64_t seed, RegParams p = {}) {
  return Objective(random_psf(d, kd, seed), random_volume(d, seed + 1), p);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// f restricted to the block with the rest of x held at anchor.
double f_block(const Objective& obj, const Volume3D& anchor, const SliceBlock& b, const std::vector<double>& v) {
  Volume3D x = anchor;
  std::copy(v.begin(), v.end(), x.storage().begin() + std::ptrdiff_t(std::size_t(b.z_lo) * anchor.dims().slice_voxels()));
  return eval_f(obj, x);
}

}  // namespace

TEST(Objective, ConstantVolumeKeepsOnlyTvFloor) {
  const Dims3 d{5, 4, 3};
  const PsfStack psf = random_psf(d, {3, 3, 3}, 1);
  const Volume3D x(d, 0.4);
  const RegParams p;
  const Objective obj(psf, apply_H(psf, x), p);
  EXPECT_NEAR(eval_f(obj, x), p.lambda * double(d.voxels()) * p.delta, 1e-12);
  const Volume3D g = grad_f(obj, x);
  for (double gi : g.data()) EXPECT_NEAR(gi, 0.0, 1e-13);

  const Objective zero(psf, Volume3D(d), p);
  EXPECT_NEAR(eval_f(zero, Volume3D(d)), p.lambda * double(d.voxels()) * p.delta, 1e-12);
}

TEST(Objective, MatchesScalarLoopOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Dims3 d{6, 6, 4};
    const RegParams p{0.3, 2.0, 0.2, 0.1, 0.1, 0.8};
    const Objective obj = random_objective(d, {3, 5, 3}, 10 + s, p);
    const Volume3D x = random_volume(d, 20 + s, -0.3, 1.3);
    EXPECT_LE(rel_err(eval_f(obj, x), naive_objective(obj.psf(), obj.observation(), p, x)), 1e-12);
  }
}

TEST(Objective, RejectsInvalidParameters) {
  const Dims3 d{3, 3, 2};
  EXPECT_THROW(random_objective(d, {1, 1, 1}, 1, RegParams{0.0, 1, 1, 1, 0, 1}), std::invalid_argument);
  EXPECT_THROW(random_objective(d, {1, 1, 1}, 1, RegParams{1, 1, 1, 1, 1, 0}), std::invalid_argument);
  const Objective obj = random_objective(d, {1, 1, 1}, 1);
  Volume3D x(d);
  x[0] = std::nan("");
  EXPECT_THROW(eval_f(obj, x), std::runtime_error);
}

TEST(Gradient, CentralFiniteDifferences) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Dims3 d{6, 6, 4};
    const Objective obj = random_objective(d, {3, 3, 3}, 50 + s);
    Volume3D x = random_volume(d, 60 + s, -0.2, 1.2);
    const Volume3D g = grad_f(obj, x);
    Xoshiro256 rng(70 + s);
    for (int t = 0; t < 20; ++t) {
      const std::size_t n = rng() % x.size();
      const double h = 1e-6 * (1.0 + std::abs(x[n]));
      const double x0 = x[n];
      x[n] = x0 + h;
      const double fp = eval_f(obj, x);
      x[n] = x0 - h;
      const double fm = eval_f(obj, x);
      x[n] = x0;
      EXPECT_LE(std::abs((fp - fm) / (2 * h) - g[n]), 1e-5 * std::max(1.0, std::abs(g[n]))) << "voxel " << n;
    }
  }
}

TEST(Gradient, LinearInLambda) {
  const Dims3 d{5, 5, 3};
  const PsfStack psf = random_psf(d, {3, 3, 1}, 4);
  const Volume3D y = random_volume(d, 5), x = random_volume(d, 6);
  RegParams p1, p2;
  p2.lambda = 2.0 * p1.lambda;
  RegParams tiny = p1;
  tiny.lambda = 1e-300;
  const Volume3D g1 = grad_f(Objective(psf, y, p1), x), g2 = grad_f(Objective(psf, y, p2), x);
  const Volume3D g0 = grad_f(Objective(psf, y, tiny), x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double tv1 = g1[i] - g0[i];
    EXPECT_NEAR(g2[i] - g1[i], tv1, 1e-12 * (1.0 + std::abs(tv1)));
  }
}

TEST(Gradient, BlockRestriction) {
  const Dims3 d{5, 4, 9};
  const Objective obj = random_objective(d, {3, 3, 5}, 8);
  const Volume3D x = random_volume(d, 9);
  const Volume3D g = grad_f(obj, x);
  for (const SliceBlock b : {SliceBlock{0, 0, d}, SliceBlock{3, 5, d}, SliceBlock{8, 8, d}, SliceBlock{0, 8, d}}) {
    const SliceBlock need = slab_support(obj.psf(), b);
    const Slab slab = extract_slab(x, need.z_lo, need.z_hi);
    const auto gb = grad_block(obj, slab.view(), b);
    const auto ref = restrict_to(g, b);
    ASSERT_EQ(gb.size(), ref.size());
    for (std::size_t i = 0; i < gb.size(); ++i) EXPECT_NEAR(gb[i], ref[i], 1e-12 * (1.0 + std::abs(ref[i])));
  }
  const Slab narrow = extract_slab(x, 3, 5);
  EXPECT_THROW(grad_block(obj, narrow.view(), SliceBlock{4, 4, d}), std::out_of_range);

  const Objective zero(obj.psf(), Volume3D(d), RegParams{});
  for (double v : grad_block(zero, full_view(Volume3D(d)), SliceBlock{2, 3, d})) EXPECT_EQ(v, 0.0);
}

TEST(Majorant, MatchesDenseMaterialization) {
  const Dims3 d{4, 4, 3};
  for (const KernelDims kd : {KernelDims{1, 1, 1}, KernelDims{3, 3, 3}}) {
    const Objective obj = random_objective(d, kd, 31);
    const Volume3D anchor = random_volume(d, 32, -0.2, 1.2);
    for (const SliceBlock b : {SliceBlock{0, 2, d}, SliceBlock{1, 1, d}, SliceBlock{0, 1, d}}) {
      const MajorantOperator maj(obj, full_view(anchor), b);
      const Eigen::MatrixXd got = materialize(b.voxels(), [&](const std::vector<double>& v) { return maj.apply(v); });
      const Eigen::MatrixXd ref = dense_block_majorant(obj, anchor, b);
      EXPECT_LE((got - ref).norm(), 1e-12 * ref.norm());
    }
  }
}

TEST(Majorant, DiracFirstColumn) {
  const Dims3 d{4, 4, 3};
  const RegParams p;
  const Objective obj(dirac_psf_stack(d), random_volume(d, 1), p);
  const Volume3D anchor = random_volume(d, 2);
  const MajorantOperator maj(obj, full_view(anchor), SliceBlock{0, 2, d});
  std::vector<double> e(d.voxels(), 0.0);
  e[0] = 1.0;
  const double got = maj.apply(e)[0];
  // Voxel 0 enters V^X and V^Y rows 0 with coefficient -1, and V^Z row 0.
  const auto w = maj.weights();
  EXPECT_NEAR(got, 1.0 + 2 * p.eta + p.lambda * (w[0] + w[0]) + 2 * p.kappa * 1.0, 1e-14);
}

TEST(Majorant, SymmetricAndBoundedBelow) {
  const Dims3 d{5, 4, 6};
  const Objective obj = random_objective(d, {3, 3, 3}, 41);
  const Volume3D anchor = random_volume(d, 42);
  const SliceBlock b{2, 3, d};
  const MajorantOperator maj(obj, full_view(anchor), b);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto u = random_vector(b.voxels(), 100 + s), v = random_vector(b.voxels(), 200 + s);
    const double uav = dot(u, maj.apply(v)), vau = dot(v, maj.apply(u));
    EXPECT_LE(std::abs(uav - vau), 1e-10 * std::abs(uav) + 1e-14);
    EXPECT_GE(dot(v, maj.apply(v)), 2 * obj.params().eta * dot(v, v) * (1 - 1e-14));
  }
}

TEST(Majorant, TightAtAnchorAndMajorizes) {
  const Dims3 d{6, 5, 4};
  const Objective obj = random_objective(d, {3, 3, 3}, 51);
  Xoshiro256 rng(52);
  int checked = 0;
  for (int t = 0; t < 40; ++t) {
    const Volume3D anchor = random_volume(d, 1000 + t, -0.3, 1.3);
    const int lo = int(rng() % 4), hi = std::min(3, lo + int(rng() % 2));
    const SliceBlock b{lo, hi, d};
    const MajorantOperator maj(obj, full_view(anchor), b);
    const auto a = restrict_to(anchor, b);
    const double fa = eval_f(obj, anchor);
    EXPECT_NEAR(majorant_Q(obj, maj, a, anchor), fa, 1e-12 * (1 + std::abs(fa)));
    for (int k = 0; k < 10; ++k) {
      auto v = a;
      const double scale = rng.uniform(0.0, 10.0 * obj.params().delta);
      const auto dir = random_vector(v.size(), rng());
      const double nd = norm2(dir);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += scale * dir[i] / nd;
      EXPECT_GE(majorant_Q(obj, maj, v, anchor), f_block(obj, anchor, b, v) - 1e-10 * (1 + std::abs(fa)));
      ++checked;
    }
  }
  EXPECT_EQ(checked, 400);
}

TEST(Majorant, HalfQuadraticSurrogateIsExact) {
  // Replacing each TV potential by its tangent quadratic at the anchor, and the
  // box distance by its 2-eta quadratic bound, gives a quadratic that Q reproduces.
  const Dims3 d{5, 5, 3};
  const Objective obj = random_objective(d, {3, 3, 3}, 61);
  const RegParams& p = obj.params();
  const Volume3D anchor = random_volume(d, 62, -0.3, 1.3);
  const SliceBlock b{1, 2, d};
  const MajorantOperator maj(obj, full_view(anchor), b);
  auto grad_xy = [&](const Volume3D& x, int i, int j, int z) {
    const double gx = i + 1 < d.nx ? x.at(i + 1, j, z) - x.at(i, j, z) : 0.0;
    const double gy = j + 1 < d.ny ? x.at(i, j + 1, z) - x.at(i, j, z) : 0.0;
    return gx * gx + gy * gy;
  };
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto v = restrict_to(anchor, b);
    const auto dir = random_vector(v.size(), 70 + s, -0.5, 0.5);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += dir[i];
    Volume3D x = anchor;
    std::copy(v.begin(), v.end(), x.storage().begin() + std::ptrdiff_t(std::size_t(b.z_lo) * d.slice_voxels()));

    const Volume3D hx = naive_blur(obj.psf(), x);
    double data = 0, box = 0, tv = 0, axial = 0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      data += 0.5 * (hx[n] - obj.observation()[n]) * (hx[n] - obj.observation()[n]);
      const double pa = std::clamp(anchor[n], p.x_min, p.x_max);
      const double step = x[n] - anchor[n];
      box += (anchor[n] - pa) * (anchor[n] - pa) + 2 * (anchor[n] - pa) * step + step * step;
    }
    for (int z = 0; z < d.nz; ++z)
      for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i) {
          const double t0 = grad_xy(anchor, i, j, z), t1 = grad_xy(x, i, j, z);
          const double phi0 = std::sqrt(t0 + p.delta * p.delta);
          tv += phi0 + 0.5 * (t1 - t0) / phi0;
          if (z + 1 < d.nz) axial += std::pow(x.at(i, j, z + 1) - x.at(i, j, z), 2);
        }
    const double surrogate = data + p.eta * box + p.lambda * tv + p.kappa * axial;
    EXPECT_NEAR(majorant_Q(obj, maj, v, anchor), surrogate, 1e-11 * (1 + std::abs(surrogate)));
  }
}

TEST(Majorant, RejectsStaleAnchor) {
  const Dims3 d{4, 4, 3};
  const Objective obj = random_objective(d, {1, 1, 1}, 3);
  Volume3D anchor = random_volume(d, 4);
  const SliceBlock b{1, 1, d};
  const MajorantOperator maj(obj, full_view(anchor), b);
  anchor.at(0, 0, 1) += 1.0;
  EXPECT_THROW(majorant_Q(obj, maj, restrict_to(anchor, b), anchor), std::logic_error);
  EXPECT_THROW(maj.apply(std::vector<double>(3)), std::invalid_argument);
}

TEST(Lipschitz, DiracAnalyticPath) {
  const Dims3 d{6, 6, 4};
  RegParams p;
  p.eta = p.kappa = 1e-300;
  p.lambda = p.delta = 0.5;
  const Objective obj(dirac_psf_stack(d), Volume3D(d), p);
  EXPECT_NEAR(data_term_curvature(obj.psf()), 1.0, 1e-12);
  EXPECT_NEAR(lipschitz_estimate(obj), 9.0, 1e-12);
}

TEST(Lipschitz, BoundsUnitSumKernelsAndGradientIncrements) {
  const Dims3 d{6, 5, 4};
  const Objective obj = random_objective(d, {3, 3, 3}, 81);
  const RegParams& p = obj.params();
  const double rho = data_term_curvature(obj.psf());
  EXPECT_LE(rho, 1.0 + 1e-12);
  // Dense spectral radius as the reference.
  const Eigen::MatrixXd H = materialize(d.voxels(), [&](const std::vector<double>& v) {
    return naive_blur(obj.psf(), Volume3D(d, v)).storage();
  });
  const double rho_dense = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H.transpose() * H).eigenvalues().maxCoeff();
  EXPECT_GE(rho, rho_dense * (1 - 1e-9));
  const double L = lipschitz_estimate(obj);
  EXPECT_LE(L, 1.0 + 2 * p.eta + 8 * p.lambda / p.delta + 8 * p.kappa + 1e-12);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Volume3D a = random_volume(d, 300 + s, -0.5, 1.5);
    Volume3D b = a;
    const auto dir = random_vector(a.size(), 600 + s, -1, 1);
    const double scale = std::pow(10.0, -double(s % 4));
    for (std::size_t i = 0; i < a.size(); ++i) b[i] += scale * dir[i];
    const Volume3D ga = grad_f(obj, a), gb = grad_f(obj, b);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += (ga[i] - gb[i]) * (ga[i] - gb[i]);
      den += (a[i] - b[i]) * (a[i] - b[i]);
    }
    EXPECT_LE(std::sqrt(num), L * std::sqrt(den) * (1 + 1e-12));
  }
}
