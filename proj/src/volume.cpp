#include "bd3mg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "bd3mg/rng.hpp"

namespace bd3mg {

void Dims3::validate() const {
  if (nx < 1 || ny < 1 || nz < 1) throw std::invalid_argument("invalid dims " + to_string(*this));
}

std::string to_string(const Dims3& d) {
  return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

Volume3D::Volume3D(Dims3 dims, double fill) : dims_(dims) {
  dims_.validate();
  data_.assign(dims_.voxels(), fill);
}

Volume3D::Volume3D(Dims3 dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  dims_.validate();
  if (data_.size() != dims_.voxels())
    throw std::invalid_argument("volume data length " + std::to_string(data_.size()) + " does not match dims " +
                                to_string(dims_));
}

bool Volume3D::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Volume3D::max_value() const { return *std::max_element(data_.begin(), data_.end()); }
double Volume3D::min_value() const { return *std::min_element(data_.begin(), data_.end()); }

void SliceBlock::validate() const {
  dims.validate();
  if (z_lo < 0 || z_lo > z_hi || z_hi >= dims.nz)
    throw std::invalid_argument("invalid slice block [" + std::to_string(z_lo) + "," + std::to_string(z_hi) +
                                "] for nz=" + std::to_string(dims.nz));
}

SlabView full_view(const Volume3D& v) { return {v.dims(), 0, v.dims().nz - 1, v.data()}; }

Slab extract_slab(const Volume3D& v, int z_lo, int z_hi) {
  if (z_lo < 0 || z_hi >= v.dims().nz || z_lo > z_hi) throw std::invalid_argument("slab range out of volume");
  const std::size_t plane = v.dims().slice_voxels();
  auto first = v.data().begin() + std::ptrdiff_t(plane * std::size_t(z_lo));
  auto last = v.data().begin() + std::ptrdiff_t(plane * std::size_t(z_hi + 1));
  return {v.dims(), z_lo, z_hi, std::vector<double>(first, last)};
}

std::vector<double> restrict_to(const Volume3D& v, const SliceBlock& block) {
  const std::size_t plane = v.dims().slice_voxels();
  auto first = v.data().begin() + std::ptrdiff_t(plane * std::size_t(block.z_lo));
  return std::vector<double>(first, first + std::ptrdiff_t(block.voxels()));
}

void add_on_block(Volume3D& v, const SliceBlock& block, std::span<const double> values) {
  if (values.size() != block.voxels()) throw std::invalid_argument("block increment has wrong length");
  double* dst = v.data().data() + v.dims().slice_voxels() * std::size_t(block.z_lo);
  for (std::size_t i = 0; i < values.size(); ++i) dst[i] += values[i];
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace io {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw TruncatedError(std::string("truncated: missing ") + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw TruncatedError(std::string("truncated: missing ") + what);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void put_f64_array(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(double)));
  } else {
    for (double v : values) put_f64(os, v);
  }
}

void get_f64_array(std::istream& is, std::span<double> values, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto want = std::streamsize(values.size() * sizeof(double));
    is.read(reinterpret_cast<char*>(values.data()), want);
    if (is.gcount() != want)
      throw TruncatedError(std::string("truncated ") + what + ": expected " + std::to_string(want) + " bytes, got " +
                           std::to_string(is.gcount()));
  } else {
    for (auto& v : values) v = get_f64(is, what);
  }
}

}  // namespace io

void write_volume(const Volume3D& vol, std::ostream& sink) {
  sink.write(kVolumeMagic, sizeof(kVolumeMagic));
  io::put_u32(sink, kVolumeVersion);
  io::put_u32(sink, std::uint32_t(vol.dims().nx));
  io::put_u32(sink, std::uint32_t(vol.dims().ny));
  io::put_u32(sink, std::uint32_t(vol.dims().nz));
  io::put_f64_array(sink, vol.data());
  if (!sink) throw std::runtime_error("write_volume: stream write failed");
}

Volume3D read_volume(std::istream& source) {
  char magic[8];
  if (!source.read(magic, 8)) throw TruncatedError("truncated: missing magic");
  if (std::memcmp(magic, kVolumeMagic, 8) != 0) throw BadMagicError("bad magic: not a BD3MGVOL file");
  const auto version = io::get_u32(source, "version");
  if (version != kVolumeVersion)
    throw VersionMismatchError("version mismatch: file has " + std::to_string(version) + ", expected 1");
  Dims3 d;
  d.nx = int(io::get_u32(source, "nx"));
  d.ny = int(io::get_u32(source, "ny"));
  d.nz = int(io::get_u32(source, "nz"));
  if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw VolumeFormatError("invalid dims " + to_string(d));
  Volume3D vol(d);
  io::get_f64_array(source, vol.data(), "payload");
  if (source.peek() != std::char_traits<char>::eof())
    throw LengthMismatchError("payload longer than dims " + to_string(d) + " imply");
  return vol;
}

void save_volume(const Volume3D& vol, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_volume(vol, os);
}

Volume3D load_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  try {
    return read_volume(is);
  } catch (const VolumeFormatError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

namespace {

void require_same_dims(const Volume3D& a, const Volume3D& b, const char* op) {
  if (a.dims() != b.dims())
    throw std::invalid_argument(std::string(op) + ": dims mismatch " + to_string(a.dims()) + " vs " +
                                to_string(b.dims()));
}

double diff_norm(const Volume3D& a, const Volume3D& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double snr_db(const Volume3D& reference, const Volume3D& estimate) {
  require_same_dims(reference, estimate, "snr_db");
  const double ref = norm2(reference.data());
  if (ref == 0.0) throw std::invalid_argument("snr_db: reference has zero norm");
  const double err = diff_norm(estimate, reference);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(ref / err);
}

double rel_dist(const Volume3D& x, const Volume3D& x_star) {
  require_same_dims(x, x_star, "rel_dist");
  const double ref = norm2(x_star.data());
  if (ref == 0.0) throw std::invalid_argument("rel_dist: x_star has zero norm");
  return diff_norm(x, x_star) / ref;
}

Volume3D phantom(Dims3 dims, std::uint64_t seed) {
  Volume3D vol(dims);
  Xoshiro256 rng(seed);
  const double sx = dims.nx, sy = dims.ny, sz = dims.nz;

  // Smooth blobs, additive.
  const int n_blobs = 3;
  for (int b = 0; b < n_blobs; ++b) {
    const double cx = rng.uniform(0.2, 0.8) * sx, cy = rng.uniform(0.2, 0.8) * sy, cz = rng.uniform(0.2, 0.8) * sz;
    const double rx = rng.uniform(0.1, 0.25) * sx, ry = rng.uniform(0.1, 0.25) * sy, rz = rng.uniform(0.15, 0.35) * sz;
    const double amp = rng.uniform(0.2, 0.5);
    for (int z = 0; z < dims.nz; ++z)
      for (int y = 0; y < dims.ny; ++y)
        for (int x = 0; x < dims.nx; ++x) {
          const double u = (x - cx) / rx, v = (y - cy) / ry, w = (z - cz) / rz;
          vol.at(x, y, z) += amp * std::exp(-0.5 * (u * u + v * v + w * w));
        }
  }

  // Sharp solids overwrite with their constant level where brighter.
  const int n_spheres = 2;
  for (int s = 0; s < n_spheres; ++s) {
    const double cx = rng.uniform(0.25, 0.75) * sx, cy = rng.uniform(0.25, 0.75) * sy, cz = rng.uniform(0.25, 0.75) * sz;
    const double r = rng.uniform(0.1, 0.2) * std::min(sx, sy);
    const double rz = std::max(r * sz / std::max(sx, sy) * 2.0, 1.0);
    const double level = rng.uniform(0.6, 1.0);
    for (int z = 0; z < dims.nz; ++z)
      for (int y = 0; y < dims.ny; ++y)
        for (int x = 0; x < dims.nx; ++x) {
          const double u = (x - cx) / r, v = (y - cy) / r, w = (z - cz) / rz;
          if (u * u + v * v + w * w <= 1.0) vol.at(x, y, z) = std::max(vol.at(x, y, z), level);
        }
  }
  const int n_boxes = 2;
  for (int b = 0; b < n_boxes; ++b) {
    const int x0 = int(rng.uniform(0.1, 0.6) * sx), y0 = int(rng.uniform(0.1, 0.6) * sy);
    const int z0 = int(rng.uniform(0.0, 0.5) * sz);
    const int wx = std::max(1, int(rng.uniform(0.1, 0.3) * sx)), wy = std::max(1, int(rng.uniform(0.1, 0.3) * sy));
    const int wz = std::max(1, int(rng.uniform(0.25, 0.5) * sz));
    const double level = rng.uniform(0.4, 0.9);
    for (int z = z0; z < std::min(dims.nz, z0 + wz); ++z)
      for (int y = y0; y < std::min(dims.ny, y0 + wy); ++y)
        for (int x = x0; x < std::min(dims.nx, x0 + wx); ++x) vol.at(x, y, z) = std::max(vol.at(x, y, z), level);
  }

  for (auto& v : vol.data()) v = std::clamp(v, 0.0, 1.0);
  return vol;
}

Volume3D add_gaussian_noise(const Volume3D& vol, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("add_gaussian_noise: sigma must be nonnegative");
  Volume3D out = vol;
  if (sigma == 0.0) return out;
  Xoshiro256 rng(seed);
  auto data = out.data();
  std::size_t i = 0;
  for (; i + 1 < data.size(); i += 2) {
    const auto [g0, g1] = rng.normal_pair();
    data[i] += sigma * g0;
    data[i + 1] += sigma * g1;
  }
  if (i < data.size()) data[i] += sigma * rng.normal_pair().first;
  return out;
}

Volume3D init_uniform(Dims3 dims, double upper, std::uint64_t seed) {
  if (!(upper >= 0.0)) throw std::invalid_argument("init_uniform: upper must be nonnegative");
  Volume3D out(dims);
  Xoshiro256 rng(seed);
  for (auto& v : out.data()) v = upper * rng.uniform();
  return out;
}

}  // namespace bd3mg
