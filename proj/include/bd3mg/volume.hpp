#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bd3mg {

/// Voxel counts per axis. Linear index is x + nx * (y + ny * z).
struct Dims3 {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  std::size_t voxels() const { return std::size_t(nx) * std::size_t(ny) * std::size_t(nz); }
  std::size_t slice_voxels() const { return std::size_t(nx) * std::size_t(ny); }
  void validate() const;

  friend bool operator==(const Dims3&, const Dims3&) = default;
};

std::string to_string(const Dims3& d);

class Volume3D {
 public:
  Volume3D() = default;
  explicit Volume3D(Dims3 dims, double fill = 0.0);
  Volume3D(Dims3 dims, std::vector<double> data);

  const Dims3& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(int x, int y, int z) { return data_[index(x, y, z)]; }
  double at(int x, int y, int z) const { return data_[index(x, y, z)]; }

  std::size_t index(int x, int y, int z) const {
    return std::size_t(x) + std::size_t(dims_.nx) * (std::size_t(y) + std::size_t(dims_.ny) * std::size_t(z));
  }

  bool all_finite() const;
  double max_value() const;
  double min_value() const;

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims3 dims_;
  std::vector<double> data_;
};

/// Inclusive run of z-slices [z_lo, z_hi] inside a volume of the given dims.
struct SliceBlock {
  int z_lo = 0;
  int z_hi = 0;
  Dims3 dims;

  int height() const { return z_hi - z_lo + 1; }
  std::size_t voxels() const { return dims.slice_voxels() * std::size_t(height()); }
  bool contains(int z) const { return z >= z_lo && z <= z_hi; }
  bool overlaps(const SliceBlock& o) const { return z_lo <= o.z_hi && o.z_lo <= z_hi; }
  void validate() const;

  friend bool operator==(const SliceBlock&, const SliceBlock&) = default;
};

/// Read-only window over the slices [z_lo, z_hi] of a volume.
struct SlabView {
  Dims3 dims;  // parent volume dims
  int z_lo = 0;
  int z_hi = -1;
  std::span<const double> data;

  bool covers(int lo, int hi) const { return z_lo <= lo && hi <= z_hi; }
  const double* slice(int z) const { return data.data() + dims.slice_voxels() * std::size_t(z - z_lo); }
};

/// Owned copy of a run of slices. Used as the x payload of worker tasks.
struct Slab {
  Dims3 dims;
  int z_lo = 0;
  int z_hi = -1;
  std::vector<double> data;

  SlabView view() const { return {dims, z_lo, z_hi, data}; }
};

SlabView full_view(const Volume3D& v);
Slab extract_slab(const Volume3D& v, int z_lo, int z_hi);

/// Flattened restriction of v to the block (slice-major, same order as the volume).
std::vector<double> restrict_to(const Volume3D& v, const SliceBlock& block);
/// Adds a flattened block vector into v over the block's voxels.
void add_on_block(Volume3D& v, const SliceBlock& block, std::span<const double> values);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// Binary format errors. Each failure mode has its own type so callers and tests
// can tell them apart.
class VolumeFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public VolumeFormatError {
 public:
  using VolumeFormatError::VolumeFormatError;
};
class VersionMismatchError : public VolumeFormatError {
 public:
  using VolumeFormatError::VolumeFormatError;
};
class TruncatedError : public VolumeFormatError {
 public:
  using VolumeFormatError::VolumeFormatError;
};
class LengthMismatchError : public VolumeFormatError {
 public:
  using VolumeFormatError::VolumeFormatError;
};

inline constexpr char kVolumeMagic[8] = {'B', 'D', '3', 'M', 'G', 'V', 'O', 'L'};
inline constexpr std::uint32_t kVolumeVersion = 1;

void write_volume(const Volume3D& vol, std::ostream& sink);
Volume3D read_volume(std::istream& source);
void save_volume(const Volume3D& vol, const std::string& path);
Volume3D load_volume(const std::string& path);

namespace io {
// Little-endian primitives shared with the PSF container.
void put_u32(std::ostream& os, std::uint32_t v);
void put_f64(std::ostream& os, double v);
std::uint32_t get_u32(std::istream& is, const char* what);
double get_f64(std::istream& is, const char* what);
void put_f64_array(std::ostream& os, std::span<const double> values);
void get_f64_array(std::istream& is, std::span<double> values, const char* what);
}  // namespace io

/// 20 log10(|reference| / |estimate - reference|). Returns +infinity when the
/// two volumes are identical.
double snr_db(const Volume3D& reference, const Volume3D& estimate);
/// |x - x_star| / |x_star|.
double rel_dist(const Volume3D& x, const Volume3D& x_star);

/// Synthetic test object in [0, 1]: smooth Gaussian blobs plus sharp spheres and boxes.
Volume3D phantom(Dims3 dims, std::uint64_t seed);
Volume3D add_gaussian_noise(const Volume3D& vol, double sigma, std::uint64_t seed);
Volume3D init_uniform(Dims3 dims, double upper, std::uint64_t seed);

}  // namespace bd3mg
