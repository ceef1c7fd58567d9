#pragma once

#include "medimp/numerics/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace medimp {

struct TsneConfig {
  double perplexity = 15;
  std::size_t iterations = 500;
  double learning_rate = 200;
  double exaggeration = 12;
  std::uint64_t seed = 0;
};

/// Row-major n×n matrix.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> v;
  double& operator()(std::size_t i, std::size_t j) { return v[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * n + j]; }
};

inline SquareMatrix squared_distances(const std::vector<std::vector<double>>& x) {
  SquareMatrix d{x.size(), std::vector<double>(x.size() * x.size())};
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
      d(i, j) = d(j, i) = s;
    }
  return d;
}

struct Affinities {
  SquareMatrix conditional;  // row i: p(j | i)
  SquareMatrix joint;        // symmetrized, sums to 1
  std::vector<double> beta;  // per-row precision 1 / (2σ²)
};

/// Shannon entropy in bits of one conditional row.
inline double row_entropy_bits(const SquareMatrix& p, std::size_t i) {
  double h = 0;
  for (std::size_t j = 0; j < p.n; ++j)
    if (p(i, j) > 0) h -= p(i, j) * std::log2(p(i, j));
  return h;
}

/// Per-row bisection on the Gaussian precision until 2^H is within `tol` of the
/// perplexity, then P = (P_cond + P_condᵀ) / 2n.
inline Affinities tsne_affinities(const std::vector<std::vector<double>>& x, double perplexity,
                                  double tol = 1e-4) {
  const std::size_t n = x.size();
  if (!(perplexity > 0) || 3 * perplexity >= double(n))
    throw std::invalid_argument("t-SNE: perplexity " + std::to_string(perplexity) + " needs more than " +
                                std::to_string(static_cast<std::size_t>(std::ceil(3 * perplexity))) +
                                " points, got " + std::to_string(n));
  const auto d = squared_distances(x);
  Affinities a{{n, std::vector<double>(n * n)}, {n, std::vector<double>(n * n)}, std::vector<double>(n, 1.0)};
  const double target = std::log(perplexity);  // nats
  for (std::size_t i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d(i, j));
    // Entropy in nats for a given beta, with distances shifted by the row minimum.
    auto eval = [&](double beta) {
      double z = 0, dz = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (d(i, j) - dmin));
        z += w;
        dz += w * (d(i, j) - dmin);
      }
      return beta * dz / z + std::log(z);
    };
    double lo = 0, hi = std::numeric_limits<double>::infinity(), beta = 1.0;
    for (int it = 0; it < 200; ++it) {
      const double h = eval(beta);
      if (std::abs(std::exp(h) - perplexity) < tol) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
    a.beta[i] = beta;
    double z = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) z += a.conditional(i, j) = std::exp(-beta * (d(i, j) - dmin));
    for (std::size_t j = 0; j < n; ++j) a.conditional(i, j) /= z;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a.joint(i, j) = (a.conditional(i, j) + a.conditional(j, i)) / (2.0 * double(n));
  return a;
}

/// Exact-gradient t-SNE to two dimensions. Early exaggeration and momentum 0.5 for the
/// first quarter of the iterations, then momentum 0.8; per-coordinate adaptive gains.
inline std::vector<std::array<double, 2>> tsne_2d(const std::vector<std::vector<double>>& x,
                                                  const TsneConfig& cfg = {}) {
  const auto a = tsne_affinities(x, cfg.perplexity);
  const std::size_t n = x.size();
  Rng rng({cfg.seed, 0x74736e65ULL});
  std::vector<std::array<double, 2>> y(n), vel(n), gains(n, {1.0, 1.0});
  for (auto& p : y) p = {rng.normal(0, 1e-4), rng.normal(0, 1e-4)};
  const std::size_t switch_at = cfg.iterations / 4;
  std::vector<double> num(n * n);
  std::vector<std::array<double, 2>> grad(n);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double exag = it < switch_at ? cfg.exaggeration : 1.0;
    const double momentum = it < switch_at ? 0.5 : 0.8;
    double z = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = q;
        z += 2 * q;
      }
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = {0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = num[i * n + j];
        const double m = 4.0 * (exag * a.joint(i, j) - q / z) * q;
        grad[i][0] += m * (y[i][0] - y[j][0]);
        grad[i][1] += m * (y[i][1] - y[j][1]);
      }
    }
    double mean[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 2; ++k) {
        auto& g = gains[i][k];
        g = (grad[i][k] > 0) != (vel[i][k] > 0) ? g + 0.2 : std::max(g * 0.8, 0.01);
        vel[i][k] = momentum * vel[i][k] - cfg.learning_rate * g * grad[i][k];
        y[i][k] += vel[i][k];
        mean[k] += y[i][k] / double(n);
      }
    for (auto& p : y) {
      p[0] -= mean[0];
      p[1] -= mean[1];
    }
  }
  for (const auto& p : y)
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw std::runtime_error("t-SNE diverged");
  return y;
}

}  // namespace medimp
