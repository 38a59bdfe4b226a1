#include "bd3mg/objective.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "bd3mg/rng.hpp"

namespace bd3mg {

void RegParams::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be > 0");
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be > 0");
  if (!(x_min < x_max)) throw std::invalid_argument("x_min must be < x_max");
}

Objective::Objective(PsfStack psf, Volume3D y, RegParams params)
    : psf_(std::move(psf)), y_(std::move(y)), params_(params) {
  if (y_.dims() != psf_.dims()) throw std::invalid_argument("Objective: observation dims differ from PSF dims");
  params_.validate();
}

namespace {

void require_dims(const Objective& obj, const Dims3& d, const char* op) {
  if (d != obj.dims())
    throw std::invalid_argument(std::string(op) + ": dims mismatch " + to_string(d) + " vs " + to_string(obj.dims()));
}

// Forward differences within one slice; zero on the far face.
inline double diff_x(const double* s, int x, int y, int nx) {
  return x + 1 < nx ? s[std::size_t(y) * nx + x + 1] - s[std::size_t(y) * nx + x] : 0.0;
}
inline double diff_y(const double* s, int x, int y, int nx, int ny) {
  return y + 1 < ny ? s[std::size_t(y + 1) * nx + x] - s[std::size_t(y) * nx + x] : 0.0;
}

// out += scale * [ (V^X)^T W V^X + (V^Y)^T W V^Y ] s on one slice.
void add_weighted_tv_normal(double* out, const double* s, const double* w, int nx, int ny, double scale) {
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      const std::size_t n = std::size_t(y) * nx + x;
      const double px = w[n] * diff_x(s, x, y, nx);
      const double py = w[n] * diff_y(s, x, y, nx, ny);
      // (V^T p)(i) = p(i-1) - p(i); the far-face entries of p are already zero.
      out[n] -= scale * (px + py);
      if (x + 1 < nx) out[n + 1] += scale * px;
      if (y + 1 < ny) out[n + nx] += scale * py;
    }
}

}  // namespace

std::vector<double> tv_weights(const Objective& obj, const SlabView& x, int z_lo, int z_hi) {
  const Dims3& d = obj.dims();
  if (!x.covers(z_lo, z_hi)) throw std::out_of_range("tv_weights: slab does not cover requested slices");
  const double d2 = obj.params().delta * obj.params().delta;
  std::vector<double> w(d.slice_voxels() * std::size_t(z_hi - z_lo + 1));
  for (int z = z_lo; z <= z_hi; ++z) {
    const double* s = x.slice(z);
    double* wz = w.data() + d.slice_voxels() * std::size_t(z - z_lo);
    for (int y = 0; y < d.ny; ++y)
      for (int xi = 0; xi < d.nx; ++xi) {
        const double gx = diff_x(s, xi, y, d.nx), gy = diff_y(s, xi, y, d.nx, d.ny);
        wz[std::size_t(y) * d.nx + xi] = 1.0 / std::sqrt(gx * gx + gy * gy + d2);
      }
  }
  return w;
}

ObjectiveTerms eval_terms(const Objective& obj, const Volume3D& x) {
  require_dims(obj, x.dims(), "eval_f");
  const Dims3& d = obj.dims();
  const RegParams& p = obj.params();
  ObjectiveTerms t;

  const Volume3D hx = apply_H(obj.psf(), x);
  double data = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = hx[i] - obj.observation()[i];
    data += r * r;
  }
  t.data = 0.5 * data;

  double box = 0.0;
  for (double v : x.data()) {
    const double dist = v < p.x_min ? p.x_min - v : (v > p.x_max ? v - p.x_max : 0.0);
    box += dist * dist;
  }
  t.box = p.eta * box;

  const double d2 = p.delta * p.delta;
  double tv = 0.0, axial = 0.0;
  for (int z = 0; z < d.nz; ++z) {
    const double* s = x.data().data() + d.slice_voxels() * std::size_t(z);
    for (int y = 0; y < d.ny; ++y)
      for (int xi = 0; xi < d.nx; ++xi) {
        const double gx = diff_x(s, xi, y, d.nx), gy = diff_y(s, xi, y, d.nx, d.ny);
        tv += std::sqrt(gx * gx + gy * gy + d2);
        if (z + 1 < d.nz) {
          const double gz = s[std::size_t(y) * d.nx + xi + d.slice_voxels()] - s[std::size_t(y) * d.nx + xi];
          axial += gz * gz;
        }
      }
  }
  t.tv = p.lambda * tv;
  t.axial = p.kappa * axial;
  if (!std::isfinite(t.value())) throw std::runtime_error("eval_f: non-finite objective value (corrupt input?)");
  return t;
}

double eval_f(const Objective& obj, const Volume3D& x) { return eval_terms(obj, x).value(); }

std::vector<double> grad_block(const Objective& obj, const SlabView& x, const SliceBlock& block) {
  require_dims(obj, x.dims, "grad_block");
  require_dims(obj, block.dims, "grad_block");
  block.validate();
  const SliceBlock need = slab_support(obj.psf(), block);
  if (!x.covers(need.z_lo, need.z_hi))
    throw std::out_of_range("grad_block: insufficient slab data, need slices [" + std::to_string(need.z_lo) + "," +
                            std::to_string(need.z_hi) + "], have [" + std::to_string(x.z_lo) + "," +
                            std::to_string(x.z_hi) + "]");
  const Dims3& d = obj.dims();
  const RegParams& p = obj.params();
  const std::size_t plane = d.slice_voxels();
  const int hz = obj.psf().kdims().hz();

  // Residual Hx - y on the slices the block's H^T rows read.
  const int r_lo = std::max(0, block.z_lo - hz), r_hi = std::min(d.nz - 1, block.z_hi + hz);
  Slab residual = apply_H_rows(obj.psf(), x, r_lo, r_hi);
  const double* y = obj.observation().data().data() + plane * std::size_t(r_lo);
  for (std::size_t i = 0; i < residual.data.size(); ++i) residual.data[i] -= y[i];
  Slab g = apply_Ht_rows(obj.psf(), residual.view(), block.z_lo, block.z_hi);

  const auto omega = tv_weights(obj, x, block.z_lo, block.z_hi);
  for (int z = block.z_lo; z <= block.z_hi; ++z) {
    const double* s = x.slice(z);
    double* gz = g.data.data() + plane * std::size_t(z - block.z_lo);
    add_weighted_tv_normal(gz, s, omega.data() + plane * std::size_t(z - block.z_lo), d.nx, d.ny, p.lambda);

    const double* below = z > 0 ? x.slice(z - 1) : nullptr;
    const double* above = z + 1 < d.nz ? x.slice(z + 1) : nullptr;
    for (std::size_t n = 0; n < plane; ++n) {
      const double v = s[n];
      const double clamped = std::clamp(v, p.x_min, p.x_max);
      gz[n] += 2.0 * p.eta * (v - clamped);
      // (V^Z)^T V^Z x at z is q(z-1) - q(z) with q(z) = x(z+1) - x(z), q(nz-1) = 0.
      double axial = 0.0;
      if (below) axial += v - below[n];
      if (above) axial -= above[n] - v;
      gz[n] += 2.0 * p.kappa * axial;
    }
  }
  return std::move(g.data);
}

Volume3D grad_f(const Objective& obj, const Volume3D& x) {
  require_dims(obj, x.dims(), "grad_f");
  const SliceBlock all{0, x.dims().nz - 1, x.dims()};
  return Volume3D(x.dims(), grad_block(obj, full_view(x), all));
}

std::uint64_t slab_fingerprint(const SlabView& x, int z_lo, int z_hi) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int z = z_lo; z <= z_hi; ++z) {
    const double* s = x.slice(z);
    for (std::size_t n = 0; n < x.dims.slice_voxels(); ++n) {
      h ^= std::bit_cast<std::uint64_t>(s[n]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

MajorantOperator::MajorantOperator(const Objective& obj, const SlabView& anchor, const SliceBlock& block)
    : obj_(&obj), block_(block) {
  require_dims(obj, anchor.dims, "MajorantOperator");
  require_dims(obj, block.dims, "MajorantOperator");
  block_.validate();
  omega_ = tv_weights(obj, anchor, block.z_lo, block.z_hi);
  fingerprint_ = slab_fingerprint(anchor, block.z_lo, block.z_hi);
}

void MajorantOperator::check_anchor(const SlabView& anchor) const {
  if (!anchor.covers(block_.z_lo, block_.z_hi) || slab_fingerprint(anchor, block_.z_lo, block_.z_hi) != fingerprint_)
    throw std::logic_error("MajorantOperator: stale TV weights, the anchor changed since construction");
}

std::vector<double> MajorantOperator::apply(std::span<const double> v) const {
  if (v.size() != size())
    throw std::invalid_argument("majorant_apply: vector length " + std::to_string(v.size()) + " != block size " +
                                std::to_string(size()));
  const Objective& obj = *obj_;
  const Dims3& d = obj.dims();
  const RegParams& p = obj.params();
  const std::size_t plane = d.slice_voxels();
  const int hz = obj.psf().kdims().hz();

  // H^T H on the embedding of v (zero off the block).
  const SlabView embedded{d, block_.z_lo, block_.z_hi, v};
  const int w_lo = std::max(0, block_.z_lo - hz), w_hi = std::min(d.nz - 1, block_.z_hi + hz);
  const Slab hv = apply_H_rows(obj.psf(), embedded, w_lo, w_hi, SlabEdge::zero);
  Slab out = apply_Ht_rows(obj.psf(), hv.view(), block_.z_lo, block_.z_hi);

  for (int z = block_.z_lo; z <= block_.z_hi; ++z) {
    const std::size_t off = plane * std::size_t(z - block_.z_lo);
    const double* s = v.data() + off;
    double* oz = out.data.data() + off;
    add_weighted_tv_normal(oz, s, omega_.data() + off, d.nx, d.ny, p.lambda);

    const double* below = z > block_.z_lo ? s - plane : nullptr;
    const double* above = z < block_.z_hi ? s + plane : nullptr;
    const bool has_below = z > 0, has_above = z + 1 < d.nz;
    for (std::size_t n = 0; n < plane; ++n) {
      double axial = 0.0;
      if (has_below) axial += s[n] - (below ? below[n] : 0.0);
      if (has_above) axial -= (above ? above[n] : 0.0) - s[n];
      oz[n] += 2.0 * p.eta * s[n] + 2.0 * p.kappa * axial;
    }
  }
  return std::move(out.data);
}

std::vector<double> majorant_apply(const MajorantOperator& maj, std::span<const double> v) { return maj.apply(v); }

double majorant_Q(const Objective& obj, const MajorantOperator& maj, std::span<const double> v, const Volume3D& anchor) {
  const SlabView view = full_view(anchor);
  maj.check_anchor(view);
  if (v.size() != maj.size()) throw std::invalid_argument("majorant_Q: vector length mismatch");
  const auto g = grad_block(obj, view, maj.block());
  const auto a = restrict_to(anchor, maj.block());
  std::vector<double> step(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) step[i] = v[i] - a[i];
  const auto a_step = maj.apply(step);
  return eval_f(obj, anchor) + dot(g, step) + 0.5 * dot(step, a_step);
}

double data_term_curvature(const PsfStack& psf, int iterations) {
  const Dims3& d = psf.dims();

  // |H|_1 |H|_inf from row and column sums of |H|.
  std::vector<double> abs_kernels(psf.all_kernels().begin(), psf.all_kernels().end());
  for (auto& k : abs_kernels) k = std::abs(k);
  const PsfStack abs_psf(d, psf.kdims(), psf.params(), std::move(abs_kernels));
  const Volume3D ones(d, 1.0);
  const double row_max = apply_H(abs_psf, ones).max_value();
  const double col_max = apply_Ht(abs_psf, ones).max_value();
  const double norm_bound = row_max * col_max;

  Xoshiro256 rng(0x5eed);
  Volume3D v(d);
  for (auto& e : v.data()) e = rng.uniform(0.5, 1.5);
  double nv = norm2(v.data());
  for (auto& e : v.data()) e /= nv;
  double estimate = 0.0, previous = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Volume3D w = apply_Ht(psf, apply_H(psf, v));
    previous = estimate;
    estimate = norm2(w.data());
    if (estimate == 0.0) return 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / estimate;
  }
  const bool converged = std::abs(estimate - previous) <= 1e-3 * estimate;
  if (!converged) return norm_bound;
  return std::min(1.05 * estimate, norm_bound);
}

double lipschitz_estimate(const Objective& obj) {
  const RegParams& p = obj.params();
  // |V|^2 <= 4 for each forward-difference operator.
  return data_term_curvature(obj.psf()) + 2.0 * p.eta + (p.lambda / p.delta) * 8.0 + 2.0 * p.kappa * 4.0;
}

}  // namespace bd3mg
