#pragma once

#include "medimp/contrastive/model.hpp"
#include "medimp/io/files.hpp"

namespace medimp {

inline constexpr std::string_view kCheckpointMagic = "MEDIMPCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian):
///   magic[8] | u32 version | f32 logit_scale | u32 meta_len | meta JSON |
///   u32 count | count × (u16 name_len | name | u8 dtype=1 (f32) | u8 flags |
///   u8 rank | rank × u64 dims | f32 payload)
/// flags bit 0 = trainable, bit 1 = decay. The logit scale lives in the header only.
inline std::string checkpoint_bytes(const Model<float>& m) {
  std::string out(kCheckpointMagic);
  io::put(out, kCheckpointVersion);
  io::put(out, m.logit_scale());
  const nlohmann::json meta = {{"image", m.image}, {"text", m.text}, {"freeze", to_string(m.freeze)},
                               {"vocab", m.vocab.to_json()}};
  const auto ms = meta.dump();
  io::put(out, static_cast<std::uint32_t>(ms.size()));
  out += ms;
  io::put(out, static_cast<std::uint32_t>(m.params.size() - 1));
  for (const auto& p : m.params.all()) {
    if (p.name == kLogitScaleName) continue;
    io::put(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    io::put(out, std::uint8_t{1});
    io::put(out, static_cast<std::uint8_t>((p.trainable ? 1 : 0) | (p.decay ? 2 : 0)));
    io::put(out, static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) io::put(out, static_cast<std::uint64_t>(d));
    for (float v : p.value.data()) io::put(out, v);
  }
  return out;
}

inline void write_checkpoint(const std::filesystem::path& path, const Model<float>& m) {
  io::write_atomic(path, checkpoint_bytes(m));
}

/// Parses a whole checkpoint before returning, so a failure leaves nothing half-built.
inline Model<float> checkpoint_from_bytes(std::string_view bytes, const std::string& what = "checkpoint") {
  io::Reader r(bytes, what);
  if (r.remaining() < kCheckpointMagic.size() || r.take(kCheckpointMagic.size()) != kCheckpointMagic)
    throw std::runtime_error(what + ": not a medimp checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error(what + ": checkpoint version " + std::to_string(version) +
                             ", this build reads version " + std::to_string(kCheckpointVersion));
  const float scale = r.get<float>();
  const auto meta_len = r.get<std::uint32_t>();
  const auto meta = nlohmann::json::parse(r.take(meta_len));
  Model<float> m{meta.at("image").get<ImageEncoderConfig>(), meta.at("text").get<TextEncoderConfig>(),
                 parse_freeze_policy(meta.at("freeze").get<std::string>()),
                 Vocabulary::from_json(meta.at("vocab")), {}};
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(r.take(name_len));
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != 1) throw std::runtime_error(what + ": parameter '" + name + "' has unknown dtype " + std::to_string(dtype));
    const auto flags = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      n *= shape.back();
    }
    if (n > r.remaining() / 4) throw std::runtime_error(what + ": truncated payload for '" + name + "'");
    std::vector<float> data(n);
    for (auto& v : data) v = r.get<float>();
    auto& p = m.params.add(name, Tensor<float>(shape, std::move(data)), (flags & 2) != 0);
    p.trainable = (flags & 1) != 0;
  }
  if (!r.done()) throw std::runtime_error(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  m.params.add(kLogitScaleName, Tensor<float>::scalar(scale), false);
  return m;
}

inline Model<float> read_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bytes(io::read_file(path), path.string());
}

}  // namespace medimp
