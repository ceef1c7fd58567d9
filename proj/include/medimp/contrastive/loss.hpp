#pragma once

#include "medimp/numerics/ops.hpp"

#include <cmath>
#include <limits>

namespace medimp {

/// Initial logit scale: exp(s) = 1 / 0.07.
inline const double kInitLogitScale = std::log(1.0 / 0.07);

/// Largest s of type T with exp(s) <= 100 when evaluated in double precision.
template <std::floating_point T>
T max_logit_scale() {
  T s = static_cast<T>(std::log(100.0));
  while (std::exp(static_cast<double>(s)) > 100.0) s = std::nextafter(s, T{0});
  return s;
}

template <std::floating_point T>
T clamp_logit_scale(T s) {
  return std::min(s, max_logit_scale<T>());
}

/// Entry (b, k) is the cosine between image row b and text row k.
template <std::floating_point T>
Var<T> cosine_similarity_matrix(Var<T> f_i, Var<T> f_t) {
  if (f_i.value().rank() != 2 || f_i.shape() != f_t.shape())
    throw ShapeError("cosine_similarity_matrix: " + shape_str(f_i.shape()) + " vs " +
                     shape_str(f_t.shape()));
  return ops::matmul(ops::row_normalize(f_i), ops::transpose(ops::row_normalize(f_t)));
}

enum class Direction { ImageToText, TextToImage };

/// Sum over b of -log softmax(row b of sim * inv_tau)[b]; text→image uses columns.
template <std::floating_point T>
Var<T> info_nce_directional(Var<T> sim, Var<T> inv_tau, Direction d) {
  auto s = d == Direction::ImageToText ? sim : ops::transpose(sim);
  auto logp = ops::log_softmax_rows(ops::mul_scalar(s, inv_tau));
  return ops::scale(ops::sum(ops::diagonal(logp)), T{-1});
}

template <std::floating_point T>
Var<T> info_nce_directional(Var<T> sim, T tau, Direction d) {
  if (!(tau > 0)) throw std::invalid_argument("info_nce_directional: tau must be positive");
  return info_nce_directional(sim, sim.graph()->constant(Tensor<T>::scalar(T{1} / tau)), d);
}

struct LossParts {
  double image_to_text = 0, text_to_image = 0;
};

/// (L_i→t + L_t→i) / 2 with 1/τ = exp(min(s, ln 100)).
template <std::floating_point T>
Var<T> contrastive_loss(Var<T> f_i, Var<T> f_t, Var<T> logit_scale, LossParts* parts = nullptr) {
  auto inv_tau = ops::exp(ops::clamp_max(logit_scale, max_logit_scale<T>()));
  auto sim = cosine_similarity_matrix(f_i, f_t);
  auto it = info_nce_directional(sim, inv_tau, Direction::ImageToText);
  auto ti = info_nce_directional(sim, inv_tau, Direction::TextToImage);
  if (parts) *parts = {double(it.value().item()), double(ti.value().item())};
  return ops::scale(ops::add(it, ti), T{0.5});
}

/// Fraction of rows whose most similar column is the paired one (first index wins ties).
template <std::floating_point T>
double retrieval_top1(const Tensor<T>& sim) {
  const std::size_t b = sim.dim(0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < sim.dim(1); ++k)
      if (sim(i, k) > sim(i, best)) best = k;
    hits += best == i;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

}  // namespace medimp
