#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bd3mg/blur.hpp"
#include "bd3mg/volume.hpp"

namespace bd3mg {

/// Regularization weights: TV weight lambda, box penalty eta, axial weight
/// kappa, TV smoothing delta, and the box [x_min, x_max].
struct RegParams {
  double lambda = 0.1;
  double eta = 1.0;
  double kappa = 0.05;
  double delta = 0.05;
  double x_min = 0.0;
  double x_max = 1.0;

  void validate() const;
};

/// f(x) = 1/2 |Hx - y|^2 + eta * dist_box(x)^2
///      + lambda * sum_n sqrt((V^X x)_n^2 + (V^Y x)_n^2 + delta^2) + kappa * |V^Z x|^2
///
/// V^X, V^Y, V^Z are forward differences that vanish on the far face of their axis.
class Objective {
 public:
  Objective(PsfStack psf, Volume3D y, RegParams params);

  const PsfStack& psf() const { return psf_; }
  const Volume3D& observation() const { return y_; }
  const RegParams& params() const { return params_; }
  const Dims3& dims() const { return y_.dims(); }

 private:
  PsfStack psf_;
  Volume3D y_;
  RegParams params_;
};

/// The four terms of f separately; value() is their sum.
struct ObjectiveTerms {
  double data = 0.0;
  double box = 0.0;
  double tv = 0.0;
  double axial = 0.0;
  double value() const { return data + box + tv + axial; }
};

ObjectiveTerms eval_terms(const Objective& obj, const Volume3D& x);
double eval_f(const Objective& obj, const Volume3D& x);
Volume3D grad_f(const Objective& obj, const Volume3D& x);
/// Gradient restricted to the block. x must cover slab_support(block).
std::vector<double> grad_block(const Objective& obj, const SlabView& x, const SliceBlock& block);

/// Half-quadratic TV weights 1 / sqrt((V^X x)^2 + (V^Y x)^2 + delta^2) on the given slices.
std::vector<double> tv_weights(const Objective& obj, const SlabView& x, int z_lo, int z_hi);

/// Block curvature operator A_(S)(anchor) of the quadratic majorant, applied
/// matrix-free on the block's slab:
///   A = H^T H + 2 eta Id + lambda (V^X)^T W V^X + lambda (V^Y)^T W V^Y + 2 kappa (V^Z)^T V^Z
/// restricted to the principal submatrix on the block, with W = diag(omega(anchor)).
class MajorantOperator {
 public:
  MajorantOperator(const Objective& obj, const SlabView& anchor, const SliceBlock& block);

  const SliceBlock& block() const { return block_; }
  std::size_t size() const { return block_.voxels(); }
  std::span<const double> weights() const { return omega_; }
  std::uint64_t anchor_fingerprint() const { return fingerprint_; }

  std::vector<double> apply(std::span<const double> v) const;
  /// Throws std::logic_error if the given anchor is not the one the weights were built from.
  void check_anchor(const SlabView& anchor) const;

 private:
  const Objective* obj_;
  SliceBlock block_;
  std::vector<double> omega_;
  std::uint64_t fingerprint_;
};

std::vector<double> majorant_apply(const MajorantOperator& maj, std::span<const double> v);

/// Q_(S)(v, anchor) = f(anchor) + <grad_S f(anchor), v - anchor_S> + 1/2 <v - anchor_S, A_S (v - anchor_S)>.
double majorant_Q(const Objective& obj, const MajorantOperator& maj, std::span<const double> v, const Volume3D& anchor);

/// Upper bound on the Lipschitz constant of grad f:
/// rho(H^T H) + 2 eta + (lambda / delta) * 8 + 2 kappa * 4.
double lipschitz_estimate(const Objective& obj);
/// Spectral radius of H^T H by power iteration (inflated 5%), capped by |H|_1 |H|_inf.
double data_term_curvature(const PsfStack& psf, int iterations = 50);

/// Fingerprint of the block slices of a slab, used to tie a majorant to its anchor.
std::uint64_t slab_fingerprint(const SlabView& x, int z_lo, int z_hi);

}  // namespace bd3mg
