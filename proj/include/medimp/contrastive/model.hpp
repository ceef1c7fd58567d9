#pragma once

#include "medimp/contrastive/loss.hpp"
#include "medimp/encoders.hpp"

namespace medimp {

inline const std::string kLogitScaleName = "logit_scale";

/// Both towers, the shared vocabulary and the learnable logit scale.
template <std::floating_point T>
struct Model {
  ImageEncoderConfig image;
  TextEncoderConfig text;
  FreezePolicy freeze;
  Vocabulary vocab;
  ParameterStore<T> params;

  [[nodiscard]] T logit_scale() const { return params.at(kLogitScaleName).value[0]; }
  void set_logit_scale(T s) { params.at(kLogitScaleName).value[0] = s; }

  [[nodiscard]] TokenizedText tokenize(const std::string& prompt) const {
    return medimp::tokenize(prompt, vocab, text.max_len);
  }

  /// Rows of image embeddings, B×D.
  [[nodiscard]] Tensor<T> embed_images(const std::vector<const Volume*>& vs) const {
    Tensor<T> out(Shape{vs.size(), image.embed_dim});
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const auto e = encode_image(*vs[i], params, image);
      std::copy(e.data().begin(), e.data().end(), out.data().begin() + i * image.embed_dim);
    }
    return out;
  }

  [[nodiscard]] Tensor<T> embed_texts(const std::vector<std::string>& prompts) const {
    Tensor<T> out(Shape{prompts.size(), text.embed_dim});
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto e = encode_text(tokenize(prompts[i]), params, text);
      std::copy(e.data().begin(), e.data().end(), out.data().begin() + i * text.embed_dim);
    }
    return out;
  }
};

/// Fresh model; each tower draws from its own stream so changing one config
/// leaves the other tower's initialization untouched.
template <std::floating_point T>
Model<T> init_model(const ImageEncoderConfig& image, TextEncoderConfig text, Vocabulary vocab,
                    std::optional<FreezePolicy> freeze, std::uint64_t seed) {
  if (image.embed_dim != text.embed_dim)
    throw std::invalid_argument("image and text embedding dims differ: " +
                                std::to_string(image.embed_dim) + " vs " +
                                std::to_string(text.embed_dim));
  text.vocab_size = vocab.size();
  Model<T> m{image, text, freeze.value_or(FreezePolicy::default_for(text.layers)), std::move(vocab),
             {}};
  Rng ri({seed, 0x696d616765ULL});
  init_image_encoder(m.params, m.image, ri);
  Rng rt({seed, 0x74657874ULL});
  init_text_encoder(m.params, m.text, rt);
  m.params.add(kLogitScaleName, Tensor<T>::scalar(static_cast<T>(kInitLogitScale)), false);
  apply_freeze_policy(m.params, m.freeze, m.text.layers);
  return m;
}

/// Loss of one batch on a graph whose parameters are already bound.
template <std::floating_point T>
Var<T> batch_loss(const Bound<T>& p, const Model<T>& m, const std::vector<const Volume*>& volumes,
                  const std::vector<TokenizedText>& texts, LossParts* parts = nullptr) {
  if (volumes.size() != texts.size() || volumes.empty())
    throw std::invalid_argument("batch_loss: need equally many volumes and texts");
  Graph<T>& g = *p[kLogitScaleName].graph();
  std::vector<Var<T>> fi, ft;
  for (const auto* v : volumes) {
    if (v->nx != m.image.extents[0] || v->ny != m.image.extents[1] || v->nz != m.image.extents[2])
      throw ShapeError("batch_loss: volume extents do not match the image encoder");
    fi.push_back(image_forward(p, m.image, g.constant(v->to_tensor<T>())));
  }
  for (const auto& t : texts) ft.push_back(text_forward(p, m.text, t));
  return contrastive_loss(ops::concat_rows(fi), ops::concat_rows(ft), p[kLogitScaleName], parts);
}

}  // namespace medimp
