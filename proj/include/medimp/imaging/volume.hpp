#pragma once

#include "medimp/io/files.hpp"
#include "medimp/numerics/tensor.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <filesystem>

namespace medimp {

/// 3D scalar grid stored z-major: index (z * ny + y) * nx + x.
struct Volume {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::vector<float> voxels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  bool normalized = false;

  Volume() = default;
  Volume(std::size_t nx_, std::size_t ny_, std::size_t nz_, float fill = 0.0f)
      : nx(nx_), ny(ny_), nz(nz_), voxels(nx_ * ny_ * nz_, fill) {
    if (!nx || !ny || !nz) throw std::invalid_argument("volume extents must be positive");
  }

  [[nodiscard]] std::size_t size() const { return voxels.size(); }
  [[nodiscard]] std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * ny + y) * nx + x;
  }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  [[nodiscard]] float at(std::size_t x, std::size_t y, std::size_t z) const {
    return voxels[index(x, y, z)];
  }

  [[nodiscard]] bool same_extents(const Volume& o) const {
    return nx == o.nx && ny == o.ny && nz == o.nz;
  }

  [[nodiscard]] double mean() const {
    double s = 0;
    for (float v : voxels) s += v;
    return s / static_cast<double>(voxels.size());
  }

  /// Single-channel tensor 1 x nz x ny x nx shared with the conv layout.
  template <std::floating_point T>
  [[nodiscard]] Tensor<T> to_tensor() const {
    return Tensor<T>({1, nz, ny, nx}, std::vector<T>(voxels.begin(), voxels.end()));
  }

  bool operator==(const Volume&) const = default;
};

inline constexpr double kNormalizeEps = 1e-8;
inline constexpr double kNormalizeClip = 5.0;

/// Standardize, clip the z-score to [-5, 5], then map linearly onto [0, 1].
inline Volume normalize_volume(const Volume& v) {
  if (v.normalized) throw std::invalid_argument("normalize_volume: volume already normalized");
  if (v.voxels.empty()) throw std::invalid_argument("normalize_volume: empty volume");
  const double mu = v.mean();
  double ss = 0;
  for (float x : v.voxels) ss += (x - mu) * (x - mu);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  Volume out = v;
  for (auto& x : out.voxels) {
    const double z = std::clamp((x - mu) / (sd + kNormalizeEps), -kNormalizeClip, kNormalizeClip);
    x =static_cast<float>((z + kNormalizeClip) / (2 * kNormalizeClip));
  }
  out.normalized = true;
  return out;
}

inline nlohmann::json volume_sidecar(const Volume& v) {
  return {{"extents", {v.nx, v.ny, v.nz}},
          {"spacing", v.spacing},
          {"normalized", v.normalized},
          {"dtype", "float32-le"}};
}

/// Writes `<stem>.raw` (little-endian float32, z-major) and `<stem>.json`.
inline void save_volume(const Volume& v, const std::filesystem::path& stem) {
  std::string raw;
  raw.reserve(v.size() * 4);
  for (float x : v.voxels) io::put(raw, x);
  auto rawp = stem;
  rawp += ".raw";
  auto jsonp = stem;
  jsonp += ".json";
  io::write_atomic(rawp, raw);
  io::write_atomic(jsonp, volume_sidecar(v).dump(2) + "\n");
}

inline Volume load_volume(const std::filesystem::path& stem) {
  auto rawp = stem;
  rawp += ".raw";
  auto jsonp = stem;
  jsonp += ".json";
  const auto meta = nlohmann::json::parse(io::read_file(jsonp));
  const auto ext = meta.at("extents").get<std::array<std::size_t, 3>>();
  Volume v(ext[0], ext[1], ext[2]);
  v.spacing = meta.at("spacing").get<std::array<double, 3>>();
  v.normalized = meta.at("normalized").get<bool>();
  const auto raw = io::read_file(rawp);
  if (raw.size() != v.size() * 4)
    throw std::runtime_error("volume '" + rawp.string() + "' has " + std::to_string(raw.size()) +
                             " bytes, expected " + std::to_string(v.size() * 4));
  io::Reader r(raw, rawp.string());
  for (auto& x : v.voxels) x = r.get<float>();
  return v;
}

}  // namespace medimp
