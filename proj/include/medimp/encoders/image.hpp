#pragma once

#include "medimp/imaging/volume.hpp"
#include "medimp/numerics/attention.hpp"

#include <json.hpp>

#include <set>

namespace medimp {

struct ImageEncoderConfig {
  std::array<std::size_t, 3> extents{32, 32, 16};  // nx, ny, nz
  std::size_t in_channels = 1;
  std::vector<std::size_t> widths{16, 32, 64};
  std::vector<std::size_t> blocks{1, 1, 1};
  std::size_t stem_pool = 2;
  std::size_t embed_dim = 64;
  std::size_t pool_heads = 4;

  /// Spatial extents (z, y, x) after each stage, starting with the stem output.
  [[nodiscard]] std::vector<ops::Triple> stage_extents() const {
    auto down = [](std::size_t n) { return (n - 1) / 2 + 1; };  // k3, stride 2, pad 1
    ops::Triple e{down(extents[2]), down(extents[1]), down(extents[0])};
    for (auto& v : e) {
      if (v % stem_pool)
        throw std::invalid_argument("image encoder: stem pool " + std::to_string(stem_pool) +
                                    " does not tile the stem output");
      v /= stem_pool;
    }
    std::vector<ops::Triple> out{e};
    for (std::size_t s = 1; s < widths.size(); ++s) {
      for (auto& v : e) v = down(v);
      out.push_back(e);
    }
    return out;
  }

  [[nodiscard]] std::size_t pooled_positions() const {
    const auto e = stage_extents().back();
    return e[0] * e[1] * e[2];
  }

  void validate() const {
    if (widths.empty()) throw std::invalid_argument("image encoder needs at least one stage");
    if (blocks.size() != widths.size())
      throw std::invalid_argument("image encoder: blocks and widths differ in length");
    for (auto b : blocks)
      if (b == 0) throw std::invalid_argument("image encoder: every stage needs a block");
    if (!embed_dim || !pool_heads || widths.back() % pool_heads)
      throw std::invalid_argument("image encoder: final width " + std::to_string(widths.back()) +
                                  " not divisible by " + std::to_string(pool_heads) + " heads");
    if (embed_dim % pool_heads)
      throw std::invalid_argument("image encoder: embed dim not divisible by pooling heads");
    for (auto v : extents)
      if (!v) throw std::invalid_argument("image encoder: zero extent");
    (void)stage_extents();
  }
};

inline void to_json(nlohmann::json& j, const ImageEncoderConfig& c) {
  j = {{"extents", c.extents},       {"in_channels", c.in_channels}, {"widths", c.widths},
       {"blocks", c.blocks},         {"stem_pool", c.stem_pool},     {"embed_dim", c.embed_dim},
       {"pool_heads", c.pool_heads}};
}
inline void from_json(const nlohmann::json& j, ImageEncoderConfig& c) {
  static const std::set<std::string> known{"extents",   "in_channels", "widths",    "blocks",
                                           "stem_pool", "embed_dim",   "pool_heads"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw std::invalid_argument("image encoder config: unknown key '" + k + "'");
  c.extents = j.value("extents", c.extents);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.widths = j.value("widths", c.widths);
  c.blocks = j.value("blocks", c.blocks);
  c.stem_pool = j.value("stem_pool", c.stem_pool);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.pool_heads = j.value("pool_heads", c.pool_heads);
  c.validate();
}

namespace detail {

template <std::floating_point T>
void add_conv(ParameterStore<T>& s, const std::string& name, std::size_t cout, std::size_t cin,
              std::size_t k, Rng& rng, double gain = 1.0) {
  const double sd = gain * std::sqrt(2.0 / static_cast<double>(cin * k * k * k));
  s.add(name + ".weight", random_tensor<T>(Shape{cout, cin, k, k, k}, rng, sd));
  s.add(name + ".bias", Tensor<T>(Shape{cout}), false);
}

template <std::floating_point T>
Var<T> conv(const Bound<T>& p, const std::string& name, Var<T> x, std::size_t stride,
            std::size_t pad) {
  auto y = ops::conv3d(x, p[name + ".weight"], {stride, stride, stride}, {pad, pad, pad});
  return ops::add_channel_bias(y, p[name + ".bias"]);
}

inline std::string block_name(std::size_t stage, std::size_t block) {
  return "image.stage" + std::to_string(stage + 1) + ".block" + std::to_string(block + 1);
}

}  // namespace detail

/// Registers the residual 3D tower and its attention pool under "image.".
template <std::floating_point T>
void init_image_encoder(ParameterStore<T>& s, const ImageEncoderConfig& c, Rng& rng) {
  c.validate();
  detail::add_conv(s, "image.stem", c.widths[0], c.in_channels, 3, rng);
  std::size_t cin = c.widths[0];
  for (std::size_t st = 0; st < c.widths.size(); ++st) {
    for (std::size_t b = 0; b < c.blocks[st]; ++b) {
      const auto name = detail::block_name(st, b);
      const std::size_t cout = c.widths[st];
      detail::add_conv(s, name + ".conv1", cout, cin, 3, rng);
      detail::add_conv(s, name + ".conv2", cout, cout, 3, rng, 0.5);
      const bool strided = st > 0 && b == 0;
      if (strided || cin != cout) detail::add_conv(s, name + ".skip", cout, cin, 1, rng);
      cin = cout;
    }
  }
  const std::size_t w = c.widths.back();
  s.add("image.pool.pos", random_tensor<T>(Shape{c.pooled_positions() + 1, w}, rng, 0.02), false);
  add_attention_params(s, "image.pool", w, c.embed_dim, rng);
}

/// Flattens C×Dz×Dy×Dx into a sequence, prepends the mean feature as query, adds
/// positional embeddings and returns the query row of one attention layer (1×d_out).
template <std::floating_point T>
Var<T> attention_pool_3d(Var<T> features, Var<T> pos, const AttentionWeights<T>& w,
                         std::size_t heads) {
  if (features.value().rank() != 4)
    throw ShapeError("attention_pool_3d: expected C×Dz×Dy×Dx features, got " +
                     shape_str(features.shape()));
  const auto& sh = features.value().shape();
  const std::size_t c = sh[0], n = sh[1] * sh[2] * sh[3];
  if (pos.value().rank() != 2 || pos.value().dim(0) != n + 1 || pos.value().dim(1) != c)
    throw ShapeError("attention_pool_3d: positional table " + shape_str(pos.shape()) +
                     " does not match features " + shape_str(sh));
  auto seq = ops::transpose(ops::reshape(features, Shape{c, n}));  // n×c
  auto tokens = ops::add(ops::concat_rows<T>({ops::mean_rows(seq), seq}), pos);
  auto query = ops::slice_rows(tokens, 0, 1);
  return multi_head_attention(query, tokens, tokens, w, heads);
}

/// Image tower on a single volume tensor in×Dz×Dy×Dx; returns 1×D.
template <std::floating_point T>
Var<T> image_forward(const Bound<T>& p, const ImageEncoderConfig& c, Var<T> x) {
  const Shape want{c.in_channels, c.extents[2], c.extents[1], c.extents[0]};
  if (x.value().shape() != want)
    throw ShapeError("encode_image: input " + shape_str(x.shape()) + " does not match configured " +
                     shape_str(want));
  auto h = ops::gelu(detail::conv(p, "image.stem", x, 2, 1));
  if (c.stem_pool > 1) h = ops::avg_pool3d(h, c.stem_pool);
  for (std::size_t st = 0; st < c.widths.size(); ++st) {
    for (std::size_t b = 0; b < c.blocks[st]; ++b) {
      const auto name = detail::block_name(st, b);
      const std::size_t stride = (st > 0 && b == 0) ? 2 : 1;
      auto y = ops::gelu(detail::conv(p, name + ".conv1", h, stride, 1));
      y = detail::conv(p, name + ".conv2", y, 1, 1);
      auto skip = p.vars().count(name + ".skip.weight") ? detail::conv(p, name + ".skip", h, stride, 0)
                                                        : h;
      h = ops::gelu(ops::add(y, skip));
    }
  }
  return attention_pool_3d(h, p["image.pool.pos"], AttentionWeights<T>::bind(p, "image.pool"),
                           c.pool_heads);
}

/// Embedding of one normalized volume as a length-D tensor.
template <std::floating_point T>
Tensor<T> encode_image(const Volume& v, const ParameterStore<T>& store, const ImageEncoderConfig& c) {
  if (!v.normalized) throw std::invalid_argument("encode_image: volume is not normalized");
  if (v.nx != c.extents[0] || v.ny != c.extents[1] || v.nz != c.extents[2])
    throw ShapeError("encode_image: volume extents " + shape_str({v.nx, v.ny, v.nz}) +
                     " do not match configured " +
                     shape_str({c.extents[0], c.extents[1], c.extents[2]}));
  Graph<T> g;
  Bound<T> p(g, store, false);
  auto out = image_forward(p, c, g.constant(v.to_tensor<T>()));
  return out.value().reshaped(Shape{c.embed_dim});
}

}  // namespace medimp
