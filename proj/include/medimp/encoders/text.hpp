#pragma once

#include "medimp/numerics/attention.hpp"
#include "medimp/promptgen/vocab.hpp"

#include <json.hpp>

#include <set>

namespace medimp {

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t layers = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t max_len = 64;
  std::size_t embed_dim = 64;

  void validate() const {
    if (vocab_size < 4) throw std::invalid_argument("text encoder: vocabulary too small");
    if (layers < 1) throw std::invalid_argument("text encoder needs at least one layer");
    if (!heads || width % heads)
      throw std::invalid_argument("text encoder: width " + std::to_string(width) +
                                  " not divisible by " + std::to_string(heads) + " heads");
    if (max_len < 3 || !ffn || !embed_dim)
      throw std::invalid_argument("text encoder: max_len, ffn and embed_dim must be positive");
  }
};

inline void to_json(nlohmann::json& j, const TextEncoderConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"layers", c.layers}, {"width", c.width},
       {"heads", c.heads},           {"ffn", c.ffn},       {"max_len", c.max_len},
       {"embed_dim", c.embed_dim}};
}
inline void from_json(const nlohmann::json& j, TextEncoderConfig& c) {
  static const std::set<std::string> known{"vocab_size", "layers",  "width",    "heads",
                                           "ffn",        "max_len", "embed_dim"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw std::invalid_argument("text encoder config: unknown key '" + k + "'");
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.layers = j.value("layers", c.layers);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.max_len = j.value("max_len", c.max_len);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
}

inline std::string text_block_name(std::size_t i) { return "text.block" + std::to_string(i + 1); }

template <std::floating_point T>
void add_layer_norm(ParameterStore<T>& s, const std::string& name, std::size_t d) {
  s.add(name + ".gain", Tensor<T>(Shape{d}, T{1}), false);
  s.add(name + ".bias", Tensor<T>(Shape{d}), false);
}

template <std::floating_point T>
Var<T> apply_layer_norm(const Bound<T>& p, const std::string& name, Var<T> x) {
  return ops::layer_norm(x, p[name + ".gain"], p[name + ".bias"]);
}

template <std::floating_point T>
void add_linear(ParameterStore<T>& s, const std::string& name, std::size_t in, std::size_t out,
                Rng& rng) {
  s.add(name + ".weight", random_tensor<T>(Shape{in, out}, rng, 1.0 / std::sqrt(double(in))));
  s.add(name + ".bias", Tensor<T>(Shape{out}), false);
}

template <std::floating_point T>
Var<T> apply_linear(const Bound<T>& p, const std::string& name, Var<T> x) {
  return ops::linear(x, p[name + ".weight"], p[name + ".bias"]);
}

/// Post-LN transformer block: LN(x + MHA(x)), then LN(h + FFN(h)).
template <std::floating_point T>
void add_transformer_block(ParameterStore<T>& s, const std::string& name, std::size_t width,
                           std::size_t ffn, Rng& rng) {
  add_attention_params(s, name + ".attn", width, width, rng);
  add_layer_norm(s, name + ".ln1", width);
  add_linear(s, name + ".ffn1", width, ffn, rng);
  add_linear(s, name + ".ffn2", ffn, width, rng);
  add_layer_norm(s, name + ".ln2", width);
}

template <std::floating_point T>
Var<T> transformer_block(const Bound<T>& p, const std::string& name, Var<T> x, std::size_t heads,
                         const std::vector<bool>& mask) {
  auto a = multi_head_attention(x, x, x, AttentionWeights<T>::bind(p, name + ".attn"), heads, mask);
  auto h = apply_layer_norm(p, name + ".ln1", ops::add(x, a));
  auto f = apply_linear(p, name + ".ffn2", ops::gelu(apply_linear(p, name + ".ffn1", h)));
  return apply_layer_norm(p, name + ".ln2", ops::add(h, f));
}

template <std::floating_point T>
void init_text_encoder(ParameterStore<T>& s, const TextEncoderConfig& c, Rng& rng) {
  c.validate();
  s.add("text.tok_emb", random_tensor<T>(Shape{c.vocab_size, c.width}, rng, 0.02));
  s.add("text.pos_emb", random_tensor<T>(Shape{c.max_len, c.width}, rng, 0.02));
  add_layer_norm(s, "text.embed_ln", c.width);
  for (std::size_t i = 0; i < c.layers; ++i)
    add_transformer_block(s, text_block_name(i), c.width, c.ffn, rng);
  add_linear(s, "text.proj", c.width, c.embed_dim, rng);
}

/// Token + position embeddings, L masked blocks, [CLS] state projected to 1×D.
/// Sequences shorter than max_len are accepted; padding never influences the result.
template <std::floating_point T>
Var<T> text_forward(const Bound<T>& p, const TextEncoderConfig& c, const TokenizedText& t) {
  const std::size_t n = t.ids.size();
  if (n == 0 || n > c.max_len || t.mask.size() != n)
    throw ShapeError("encode_text: sequence length " + std::to_string(n) + " outside [1, " +
                     std::to_string(c.max_len) + "] or mask length mismatch");
  if (std::none_of(t.mask.begin(), t.mask.end(), [](bool b) { return b; }))
    throw std::invalid_argument("encode_text: all positions are padding");
  // Trailing padding is masked everywhere, so dropping it leaves the result unchanged.
  std::size_t used = n;
  while (!t.mask[used - 1]) --used;
  std::vector<std::size_t> ids(t.ids.begin(), t.ids.begin() + static_cast<std::ptrdiff_t>(used));
  const std::vector<bool> mask(t.mask.begin(), t.mask.begin() + static_cast<std::ptrdiff_t>(used));
  for (auto id : ids)
    if (id >= c.vocab_size)
      throw std::invalid_argument("encode_text: token id " + std::to_string(id) +
                                  " outside vocabulary of " + std::to_string(c.vocab_size));
  auto x = ops::add(ops::gather_rows(p["text.tok_emb"], ids),
                    ops::slice_rows(p["text.pos_emb"], 0, used));
  x = apply_layer_norm(p, "text.embed_ln", x);
  for (std::size_t i = 0; i < c.layers; ++i) x = transformer_block(p, text_block_name(i), x, c.heads, mask);
  return apply_linear(p, "text.proj", ops::slice_rows(x, 0, 1));
}

template <std::floating_point T>
Tensor<T> encode_text(const TokenizedText& t, const ParameterStore<T>& store,
                      const TextEncoderConfig& c) {
  Graph<T> g;
  Bound<T> p(g, store, false);
  return text_forward(p, c, t).value().reshaped(Shape{c.embed_dim});
}

}  // namespace medimp
