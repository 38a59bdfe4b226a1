#include "bd3mg/blur.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "bd3mg/rng.hpp"

namespace bd3mg {

void KernelDims::validate(const Dims3& target) const {
  auto odd_positive = [](int k) { return k >= 1 && k % 2 == 1; };
  if (!odd_positive(kx) || !odd_positive(ky) || !odd_positive(kz))
    throw std::invalid_argument("kernel dims must be odd and positive, got " + std::to_string(kx) + "x" +
                                std::to_string(ky) + "x" + std::to_string(kz));
  if (kz > 2 * target.nz - 1) throw std::invalid_argument("kernel depth kz exceeds 2*nz-1");
}

PsfStack::PsfStack(Dims3 dims, KernelDims kdims, std::vector<PsfParams> params, std::vector<double> kernels)
    : dims_(dims), kdims_(kdims), params_(std::move(params)), kernels_(std::move(kernels)) {
  dims_.validate();
  kdims_.validate(dims_);
  if (params_.size() != std::size_t(dims_.nz)) throw std::invalid_argument("PsfStack: need one parameter record per depth");
  if (kernels_.size() != kdims_.size() * std::size_t(dims_.nz))
    throw std::invalid_argument("PsfStack: kernel payload length mismatch");
}

std::vector<double> gaussian_kernel(const KernelDims& kd, const PsfParams& p) {
  if (!(p.sigma1 > 0.0 && p.sigma2 > 0.0 && p.sigma3 > 0.0)) throw std::invalid_argument("PSF sigma must be positive");
  // R = R_y(theta) R_z(phi); the quadratic form is u^T R^T diag(1/sigma^2) R u.
  const double cp = std::cos(p.phi), sp = std::sin(p.phi);
  const double ct = std::cos(p.theta), st = std::sin(p.theta);
  const double rz[3][3] = {{cp, -sp, 0.0}, {sp, cp, 0.0}, {0.0, 0.0, 1.0}};
  const double ry[3][3] = {{ct, 0.0, st}, {0.0, 1.0, 0.0}, {-st, 0.0, ct}};
  double r[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      r[i][j] = 0.0;
      for (int k = 0; k < 3; ++k) r[i][j] += ry[i][k] * rz[k][j];
    }
  const double inv_var[3] = {1.0 / (p.sigma1 * p.sigma1), 1.0 / (p.sigma2 * p.sigma2), 1.0 / (p.sigma3 * p.sigma3)};

  std::vector<double> k(kd.size());
  double sum = 0.0;
  for (int l = 0; l < kd.kz; ++l)
    for (int j = 0; j < kd.ky; ++j)
      for (int i = 0; i < kd.kx; ++i) {
        const double u[3] = {double(i - kd.hx()), double(j - kd.hy()), double(l - kd.hz())};
        double q = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double ru = r[a][0] * u[0] + r[a][1] * u[1] + r[a][2] * u[2];
          q += inv_var[a] * ru * ru;
        }
        const double v = std::exp(-0.5 * q);
        k[(std::size_t(l) * kd.ky + j) * kd.kx + i] = v;
        sum += v;
      }
  // The centre sample is exp(0) = 1, so sum >= 1.
  for (auto& v : k) v /= sum;
  return k;
}

PsfStack generate_psf_stack(Dims3 dims, KernelDims kdims, const PsfRanges& ranges, std::uint64_t seed) {
  dims.validate();
  kdims.validate(dims);
  for (const Interval* r : {&ranges.sigma1, &ranges.sigma2, &ranges.sigma3, &ranges.phi, &ranges.theta})
    if (!(r->lo <= r->hi)) throw std::invalid_argument("PSF parameter range has lo > hi");
  for (const Interval* r : {&ranges.sigma1, &ranges.sigma2, &ranges.sigma3})
    if (!(r->lo > 0.0)) throw std::invalid_argument("PSF sigma range must be strictly positive");

  Xoshiro256 rng(seed);
  std::vector<PsfParams> params(std::size_t(dims.nz));
  std::vector<double> kernels;
  kernels.reserve(kdims.size() * std::size_t(dims.nz));
  for (auto& p : params) {
    p.sigma1 = rng.uniform(ranges.sigma1.lo, ranges.sigma1.hi);
    p.sigma2 = rng.uniform(ranges.sigma2.lo, ranges.sigma2.hi);
    p.sigma3 = rng.uniform(ranges.sigma3.lo, ranges.sigma3.hi);
    p.phi = rng.uniform(ranges.phi.lo, ranges.phi.hi);
    p.theta = rng.uniform(ranges.theta.lo, ranges.theta.hi);
    const auto k = gaussian_kernel(kdims, p);
    kernels.insert(kernels.end(), k.begin(), k.end());
  }
  return PsfStack(dims, kdims, std::move(params), std::move(kernels));
}

PsfStack dirac_psf_stack(Dims3 dims, KernelDims kdims) {
  kdims.validate(dims);
  std::vector<double> one(kdims.size(), 0.0);
  one[(std::size_t(kdims.hz()) * kdims.ky + kdims.hy()) * kdims.kx + kdims.hx()] = 1.0;
  std::vector<double> kernels;
  for (int z = 0; z < dims.nz; ++z) kernels.insert(kernels.end(), one.begin(), one.end());
  return PsfStack(dims, kdims, std::vector<PsfParams>(std::size_t(dims.nz)), std::move(kernels));
}

namespace {

// False when the slice is absent and should be read as zero.
bool has_source(const SlabView& src, int z, SlabEdge edge, const char* op) {
  if (z >= src.z_lo && z <= src.z_hi) return true;
  if (edge == SlabEdge::zero) return false;
  throw std::out_of_range(std::string(op) + ": slab [" + std::to_string(src.z_lo) + "," + std::to_string(src.z_hi) +
                            "] does not provide slice " + std::to_string(z));
}

// out_row[x] += w * in_row[x + shift] over the x range where both are inside [0, n).
inline void shifted_axpy(double* out_row, const double* in_row, int n, int shift, double w) {
  const int x0 = std::max(0, -shift);
  const int x1 = std::min(n, n - shift);
  for (int x = x0; x < x1; ++x) out_row[x] += w * in_row[x + shift];
}

// Accumulates one kernel plane (fixed l) applied to one input slice into one
// output slice. sign = -1 reads in(p - u) (forward), +1 reads in(p + u) (adjoint).
void accumulate_plane(double* out, const double* in, const double* plane, const KernelDims& kd, const Dims3& d,
                      int sign) {
  const int nx = d.nx, ny = d.ny;
  for (int j = 0; j < kd.ky; ++j) {
    const int uy = sign * (j - kd.hy());
    const int y0 = std::max(0, -uy), y1 = std::min(ny, ny - uy);
    for (int i = 0; i < kd.kx; ++i) {
      const double w = plane[std::size_t(j) * kd.kx + i];
      if (w == 0.0) continue;
      const int ux = sign * (i - kd.hx());
      for (int y = y0; y < y1; ++y)
        shifted_axpy(out + std::size_t(y) * nx, in + std::size_t(y + uy) * nx, nx, ux, w);
    }
  }
}

Slab make_output(const PsfStack& psf, const SlabView& src, int out_lo, int out_hi, const char* op) {
  if (src.dims != psf.dims()) throw std::invalid_argument(std::string(op) + ": dims mismatch");
  if (out_lo < 0 || out_hi >= psf.dims().nz || out_lo > out_hi)
    throw std::invalid_argument(std::string(op) + ": output range out of volume");
  Slab out{psf.dims(), out_lo, out_hi, {}};
  out.data.assign(psf.dims().slice_voxels() * std::size_t(out_hi - out_lo + 1), 0.0);
  return out;
}

}  // namespace

Slab apply_H_rows(const PsfStack& psf, const SlabView& x, int out_lo, int out_hi, SlabEdge edge) {
  Slab out = make_output(psf, x, out_lo, out_hi, "apply_H");
  const auto& kd = psf.kdims();
  const auto& d = psf.dims();
  const std::size_t plane_size = std::size_t(kd.kx) * kd.ky;
  for (int z = out_lo; z <= out_hi; ++z) {
    const double* kernel = psf.kernel(z).data();
    double* dst = out.data.data() + d.slice_voxels() * std::size_t(z - out_lo);
    for (int l = 0; l < kd.kz; ++l) {
      const int zi = z - (l - kd.hz());
      if (zi < 0 || zi >= d.nz) continue;
      if (!has_source(x, zi, edge, "apply_H")) continue;
      accumulate_plane(dst, x.slice(zi), kernel + plane_size * l, kd, d, -1);
    }
  }
  return out;
}

Slab apply_Ht_rows(const PsfStack& psf, const SlabView& v, int out_lo, int out_hi, SlabEdge edge) {
  Slab out = make_output(psf, v, out_lo, out_hi, "apply_Ht");
  const auto& kd = psf.kdims();
  const auto& d = psf.dims();
  const std::size_t plane_size = std::size_t(kd.kx) * kd.ky;
  for (int z = out_lo; z <= out_hi; ++z) {
    double* dst = out.data.data() + d.slice_voxels() * std::size_t(z - out_lo);
    for (int l = 0; l < kd.kz; ++l) {
      const int zp = z + (l - kd.hz());
      if (zp < 0 || zp >= d.nz) continue;
      if (!has_source(v, zp, edge, "apply_Ht")) continue;
      accumulate_plane(dst, v.slice(zp), psf.kernel(zp).data() + plane_size * l, kd, d, +1);
    }
  }
  return out;
}

Volume3D apply_H(const PsfStack& psf, const Volume3D& x) {
  if (x.dims() != psf.dims()) throw std::invalid_argument("apply_H: dims mismatch");
  return Volume3D(x.dims(), apply_H_rows(psf, full_view(x), 0, x.dims().nz - 1).data);
}

Volume3D apply_Ht(const PsfStack& psf, const Volume3D& v) {
  if (v.dims() != psf.dims()) throw std::invalid_argument("apply_Ht: dims mismatch");
  return Volume3D(v.dims(), apply_Ht_rows(psf, full_view(v), 0, v.dims().nz - 1).data);
}

SliceBlock slab_support(int kz, const SliceBlock& block) {
  const int reach = (kz - 1) + 1;
  return {std::max(0, block.z_lo - reach), std::min(block.dims.nz - 1, block.z_hi + reach), block.dims};
}

SliceBlock slab_support(const PsfStack& psf, const SliceBlock& block) {
  block.validate();
  return slab_support(psf.kdims().kz, block);
}

void write_psf(const PsfStack& psf, std::ostream& sink) {
  sink.write(kPsfMagic, sizeof(kPsfMagic));
  io::put_u32(sink, kPsfVersion);
  const auto& d = psf.dims();
  const auto& k = psf.kdims();
  for (int v : {d.nx, d.ny, d.nz, k.kx, k.ky, k.kz}) io::put_u32(sink, std::uint32_t(v));
  for (const auto& p : psf.params())
    for (double v : {p.sigma1, p.sigma2, p.sigma3, p.phi, p.theta}) io::put_f64(sink, v);
  io::put_f64_array(sink, psf.all_kernels());
  if (!sink) throw std::runtime_error("write_psf: stream write failed");
}

PsfStack read_psf(std::istream& source) {
  char magic[8];
  if (!source.read(magic, 8)) throw TruncatedError("truncated: missing magic");
  if (std::memcmp(magic, kPsfMagic, 8) != 0) throw BadMagicError("bad magic: not a BD3MGPSF file");
  const auto version = io::get_u32(source, "version");
  if (version != kPsfVersion)
    throw VersionMismatchError("version mismatch: file has " + std::to_string(version) + ", expected 1");
  Dims3 d;
  d.nx = int(io::get_u32(source, "nx"));
  d.ny = int(io::get_u32(source, "ny"));
  d.nz = int(io::get_u32(source, "nz"));
  KernelDims k;
  k.kx = int(io::get_u32(source, "kx"));
  k.ky = int(io::get_u32(source, "ky"));
  k.kz = int(io::get_u32(source, "kz"));
  if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw VolumeFormatError("invalid dims " + to_string(d));
  try {
    k.validate(d);
  } catch (const std::invalid_argument& e) {
    throw VolumeFormatError(e.what());
  }
  std::vector<PsfParams> params(std::size_t(d.nz));
  for (auto& p : params) {
    p.sigma1 = io::get_f64(source, "psf parameters");
    p.sigma2 = io::get_f64(source, "psf parameters");
    p.sigma3 = io::get_f64(source, "psf parameters");
    p.phi = io::get_f64(source, "psf parameters");
    p.theta = io::get_f64(source, "psf parameters");
  }
  std::vector<double> kernels(k.size() * std::size_t(d.nz));
  io::get_f64_array(source, kernels, "kernel payload");
  if (source.peek() != std::char_traits<char>::eof()) throw LengthMismatchError("kernel payload longer than header implies");
  return PsfStack(d, k, std::move(params), std::move(kernels));
}

void save_psf(const PsfStack& psf, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_psf(psf, os);
}

PsfStack load_psf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return read_psf(is);
  } catch (const VolumeFormatError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace bd3mg
