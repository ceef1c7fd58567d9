#pragma once

#include "medimp/imaging/volume.hpp"
#include "medimp/numerics/random.hpp"

#include <numbers>

namespace medimp {

struct AffineParams {
  double rotation_deg = 0;                    // about the z axis
  double scale = 1;                           // isotropic
  std::array<double, 3> translation{0, 0, 0}; // voxels, (x, y, z)

  bool operator==(const AffineParams&) const = default;
};

struct AugmentationRanges {
  double probability = 0.5;
  double max_rotation_deg = 10;
  double min_scale = 0.9, max_scale = 1.1;
  double max_translation_frac = 0.05;
  double max_blur_sigma = 0.5;
  double max_noise_sigma = 0.05;
  double max_abs_log_gamma = 0.3;
};

struct AugmentationParams {
  bool do_flip = false, do_affine = false, do_blur = false, do_noise = false, do_contrast = false;
  AffineParams affine;
  double blur_sigma = 0;
  double noise_sigma = 0;
  double log_gamma = 0;
  std::uint64_t noise_seed = 0;

  [[nodiscard]] bool any() const { return do_flip || do_affine || do_blur || do_noise || do_contrast; }
  bool operator==(const AugmentationParams&) const = default;
};

/// Every parameter is drawn regardless of its flag so one stream position maps to one field.
inline AugmentationParams sample_augmentation_params(std::uint64_t seed, std::uint64_t sample_id,
                                                     const Volume& shape_of,
                                                     const AugmentationRanges& r = {}) {
  Rng rng({seed, sample_id, 0x6175676dULL});
  AugmentationParams p;
  p.do_flip = rng.bernoulli(r.probability);
  p.do_affine = rng.bernoulli(r.probability);
  p.do_blur = rng.bernoulli(r.probability);
  p.do_noise = rng.bernoulli(r.probability);
  p.do_contrast = rng.bernoulli(r.probability);
  p.affine.rotation_deg = rng.uniform(-r.max_rotation_deg, r.max_rotation_deg);
  p.affine.scale = rng.uniform(r.min_scale, r.max_scale);
  const std::array<double, 3> ext{double(shape_of.nx), double(shape_of.ny), double(shape_of.nz)};
  for (int a = 0; a < 3; ++a) {
    const double m = r.max_translation_frac * ext[a];
    p.affine.translation[a] = rng.uniform(-m, m);
  }
  p.blur_sigma = rng.uniform(0.0, r.max_blur_sigma);
  p.noise_sigma = rng.uniform(0.0, r.max_noise_sigma);
  p.log_gamma = rng.uniform(-r.max_abs_log_gamma, r.max_abs_log_gamma);
  p.noise_seed = rng.next();
  return p;
}

/// Mirror along x.
inline Volume flip_x(const Volume& v) {
  Volume out = v;
  for (std::size_t z = 0; z < v.nz; ++z)
    for (std::size_t y = 0; y < v.ny; ++y)
      for (std::size_t x = 0; x < v.nx; ++x) out.at(x, y, z) = v.at(v.nx - 1 - x, y, z);
  return out;
}

/// Trilinear sample with zero outside the grid.
inline double sample_trilinear(const Volume& v, double x, double y, double z) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const double tx = x - fx, ty = y - fy, tz = z - fz;
  const auto ix = static_cast<long>(fx), iy = static_cast<long>(fy), iz = static_cast<long>(fz);
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const long xx = ix + dx, yy = iy + dy, zz = iz + dz;
        if (xx < 0 || yy < 0 || zz < 0 || xx >= long(v.nx) || yy >= long(v.ny) || zz >= long(v.nz))
          continue;
        const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += w * v.at(std::size_t(xx), std::size_t(yy), std::size_t(zz));
      }
  return acc;
}

/// Rotation about z and isotropic scale around the grid centre, then translation.
/// Resampled by inverse mapping each output voxel.
inline Volume affine_resample(const Volume& v, const AffineParams& a) {
  const double th = a.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cx = (double(v.nx) - 1) / 2, cy = (double(v.ny) - 1) / 2, cz = (double(v.nz) - 1) / 2;
  Volume out = v;
  for (std::size_t z = 0; z < v.nz; ++z)
    for (std::size_t y = 0; y < v.ny; ++y)
      for (std::size_t x = 0; x < v.nx; ++x) {
        const double px = double(x) - cx - a.translation[0];
        const double py = double(y) - cy - a.translation[1];
        const double pz = double(z) - cz - a.translation[2];
        const double sx = (c * px + s * py) / a.scale + cx;
        const double sy = (-s * px + c * py) / a.scale + cy;
        const double sz = pz / a.scale + cz;
        out.at(x, y, z) = static_cast<float>(sample_trilinear(v, sx, sy, sz));
      }
  return out;
}

/// Normalized Gaussian taps over [-r, r] with r = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0) return {1.0};
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& w : k) w /= sum;
  return k;
}

/// Symmetric (half-sample) reflection: -1 -> 0, n -> n-1.
inline std::size_t reflect_index(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  if (m == 1) return 0;
  const long period = 2 * m;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < m ? i : period - 1 - i);
}

inline Volume gaussian_blur(const Volume& v, double sigma) {
  const auto k = gaussian_kernel(sigma);
  if (k.size() == 1) return v;
  const long r = static_cast<long>(k.size() / 2);
  Volume cur = v;
  const std::array<std::size_t, 3> ext{v.nx, v.ny, v.nz};
  for (int axis = 0; axis < 3; ++axis) {
    Volume next = cur;
    for (std::size_t z = 0; z < v.nz; ++z)
      for (std::size_t y = 0; y < v.ny; ++y)
        for (std::size_t x = 0; x < v.nx; ++x) {
          std::array<std::size_t, 3> p{x, y, z};
          const long c = static_cast<long>(p[axis]);
          double acc = 0;
          for (long t = -r; t <= r; ++t) {
            p[axis] = reflect_index(c + t, ext[axis]);
            acc += k[t + r] * cur.at(p[0], p[1], p[2]);
          }
          next.at(x, y, z) = static_cast<float>(acc);
        }
    cur = std::move(next);
  }
  return cur;
}

inline Volume add_noise(const Volume& v, double sigma, std::uint64_t seed) {
  if (sigma == 0) return v;
  Rng rng(seed);
  Volume out = v;
  for (auto& x : out.voxels) x = static_cast<float>(x + sigma * rng.normal());
  return out;
}

/// v -> v^exp(log_gamma) on values clamped to [0, 1].
inline Volume adjust_contrast(const Volume& v, double log_gamma) {
  if (log_gamma == 0) return v;
  const double g = std::exp(log_gamma);
  Volume out = v;
  for (auto& x : out.voxels) x = static_cast<float>(std::pow(std::clamp<double>(x, 0.0, 1.0), g));
  return out;
}

inline Volume apply_augmentation(const Volume& v, const AugmentationParams& p) {
  if (!v.normalized) throw std::invalid_argument("apply_augmentation: volume is not normalized");
  if (!p.any()) return v;
  Volume out = v;
  if (p.do_flip) out = flip_x(out);
  if (p.do_affine) out = affine_resample(out, p.affine);
  if (p.do_blur) out = gaussian_blur(out, p.blur_sigma);
  if (p.do_noise) out = add_noise(out, p.noise_sigma, p.noise_seed);
  if (p.do_contrast) out = adjust_contrast(out, p.log_gamma);
  for (auto& x : out.voxels) x = std::clamp(x, 0.0f, 1.0f);
  return out;
}

}  // namespace medimp
