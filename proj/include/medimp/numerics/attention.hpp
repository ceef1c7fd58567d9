#pragma once

#include "medimp/numerics/ops.hpp"
#include "medimp/numerics/random.hpp"

#include <cmath>
#include <string>

namespace medimp {

template <std::floating_point T>
struct AttentionWeights {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionWeights bind(const Bound<T>& p, const std::string& prefix) {
    return {p[prefix + ".wq"], p[prefix + ".bq"], p[prefix + ".wk"], p[prefix + ".bk"],
            p[prefix + ".wv"], p[prefix + ".bv"], p[prefix + ".wo"], p[prefix + ".bo"]};
  }
};

template <std::floating_point T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double sd) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

/// Registers q/k/v/output projections (d→d, output d→d_out) under `prefix`.
template <std::floating_point T>
void add_attention_params(ParameterStore<T>& store, const std::string& prefix, std::size_t d,
                          std::size_t d_out, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* proj : {"q", "k", "v"}) {
    store.add(prefix + ".w" + proj, random_tensor<T>(Shape{d, d}, rng, sd));
    store.add(prefix + ".b" + proj, Tensor<T>(Shape{d}), false);
  }
  store.add(prefix + ".wo", random_tensor<T>(Shape{d, d_out}, rng, sd));
  store.add(prefix + ".bo", Tensor<T>(Shape{d_out}), false);
}

/// Scaled dot-product attention per head over projected inputs; head outputs are
/// concatenated and output-projected. query is nq×d, keys/values n×d. Keys whose
/// mask entry is false are excluded from every head's normalization.
template <std::floating_point T>
Var<T> multi_head_attention(Var<T> query, Var<T> keys, Var<T> values,
                            const AttentionWeights<T>& w, std::size_t heads,
                            const std::vector<bool>& key_mask = {}) {
  const std::size_t d = query.value().dim(1);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  if (keys.value().dim(1) != d || values.value().shape() != keys.value().shape()) {
    throw ShapeError("multi_head_attention: query " + shape_str(query.shape()) + ", keys " +
                     shape_str(keys.shape()) + ", values " + shape_str(values.shape()));
  }
  if (!key_mask.empty() &&
      std::none_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("multi_head_attention: all key positions are masked");
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  auto q = ops::linear(query, w.wq, w.bq);
  auto k = ops::linear(keys, w.wk, w.bk);
  auto v = ops::linear(values, w.wv, w.bv);
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : ops::slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = heads == 1 ? k : ops::slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = heads == 1 ? v : ops::slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
    auto attn = ops::softmax_rows(scores, key_mask);
    outs.push_back(ops::matmul(attn, vh));
  }
  auto cat = heads == 1 ? outs[0] : ops::concat_cols(outs);
  return ops::linear(cat, w.wo, w.bo);
}

}  // namespace medimp
