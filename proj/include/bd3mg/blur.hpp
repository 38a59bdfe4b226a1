#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bd3mg/volume.hpp"

namespace bd3mg {

/// Spatial extent of each PSF; every component odd and >= 1.
struct KernelDims {
  int kx = 1;
  int ky = 1;
  int kz = 1;

  int hx() const { return (kx - 1) / 2; }
  int hy() const { return (ky - 1) / 2; }
  int hz() const { return (kz - 1) / 2; }
  std::size_t size() const { return std::size_t(kx) * std::size_t(ky) * std::size_t(kz); }
  void validate(const Dims3& target) const;

  friend bool operator==(const KernelDims&, const KernelDims&) = default;
};

/// Shape of one depth's Gaussian: standard deviations along the rotated axes
/// (voxels) and two rotation angles (radians), R = R_y(theta) * R_z(phi).
struct PsfParams {
  double sigma1 = 1.0;
  double sigma2 = 1.0;
  double sigma3 = 1.0;
  double phi = 0.0;
  double theta = 0.0;

  friend bool operator==(const PsfParams&, const PsfParams&) = default;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct PsfRanges {
  Interval sigma1{0.8, 2.5};
  Interval sigma2{0.8, 2.5};
  Interval sigma3{0.8, 2.5};
  Interval phi{0.0, 3.141592653589793};
  Interval theta{0.0, 3.141592653589793};
};

/// One normalized kernel per output depth. Kernel entry (i, j, l) weights the
/// offset u = (i - hx, j - hy, l - hz), and output voxel p receives
/// sum_u h_{z_p}(u) x(p - u) with zero padding outside the volume.
class PsfStack {
 public:
  PsfStack(Dims3 dims, KernelDims kdims, std::vector<PsfParams> params, std::vector<double> kernels);

  const Dims3& dims() const { return dims_; }
  const KernelDims& kdims() const { return kdims_; }
  const std::vector<PsfParams>& params() const { return params_; }
  std::span<const double> kernel(int z) const { return {kernels_.data() + kdims_.size() * std::size_t(z), kdims_.size()}; }
  std::span<const double> all_kernels() const { return kernels_; }

  friend bool operator==(const PsfStack&, const PsfStack&) = default;

 private:
  Dims3 dims_;
  KernelDims kdims_;
  std::vector<PsfParams> params_;
  std::vector<double> kernels_;
};

/// Normalized anisotropic Gaussian sampled on the centered kernel grid.
std::vector<double> gaussian_kernel(const KernelDims& kdims, const PsfParams& p);

PsfStack generate_psf_stack(Dims3 dims, KernelDims kdims, const PsfRanges& ranges, std::uint64_t seed);
/// Every depth carries the same single-voxel kernel, so H is the identity.
PsfStack dirac_psf_stack(Dims3 dims, KernelDims kdims = {1, 1, 1});

Volume3D apply_H(const PsfStack& psf, const Volume3D& x);
Volume3D apply_Ht(const PsfStack& psf, const Volume3D& v);

/// How range-restricted application treats in-volume slices missing from the source slab.
enum class SlabEdge {
  strict,  // error: the slab was expected to cover them
  zero,    // the source is zero outside the slab (embedding of a block vector)
};

// Range-restricted forms computing output slices [out_lo, out_hi] only.
Slab apply_H_rows(const PsfStack& psf, const SlabView& x, int out_lo, int out_hi, SlabEdge edge = SlabEdge::strict);
Slab apply_Ht_rows(const PsfStack& psf, const SlabView& v, int out_lo, int out_hi, SlabEdge edge = SlabEdge::strict);

/// Slices of x needed to evaluate the block gradient and majorant action:
/// the block dilated by kz - 1 (H then H^T) plus one for the axial stencil.
SliceBlock slab_support(const PsfStack& psf, const SliceBlock& block);
SliceBlock slab_support(int kz, const SliceBlock& block);

inline constexpr char kPsfMagic[8] = {'B', 'D', '3', 'M', 'G', 'P', 'S', 'F'};
inline constexpr std::uint32_t kPsfVersion = 1;

void write_psf(const PsfStack& psf, std::ostream& sink);
PsfStack read_psf(std::istream& source);
void save_psf(const PsfStack& psf, const std::string& path);
PsfStack load_psf(const std::string& path);

}  // namespace bd3mg
