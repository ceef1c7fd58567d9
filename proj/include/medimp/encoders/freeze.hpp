#pragma once

#include "medimp/encoders/text.hpp"

#include <regex>

namespace medimp {

enum class FreezeMode { FirstK, LnOnly, None };

struct FreezePolicy {
  FreezeMode mode = FreezeMode::FirstK;
  std::size_t k = 0;

  static FreezePolicy first_k(std::size_t k) { return {FreezeMode::FirstK, k}; }
  static FreezePolicy ln_only() { return {FreezeMode::LnOnly, 0}; }
  static FreezePolicy none() { return {FreezeMode::None, 0}; }

  /// The usual text-tower default: everything but the last block frozen.
  static FreezePolicy default_for(std::size_t layers) { return first_k(layers - 1); }

  void validate(std::size_t layers) const {
    if (mode == FreezeMode::FirstK && k > layers)
      throw std::invalid_argument("freeze policy first_k=" + std::to_string(k) + " exceeds " +
                                  std::to_string(layers) + " layers");
  }
};

inline FreezePolicy parse_freeze_policy(const std::string& s) {
  if (s == "none") return FreezePolicy::none();
  if (s == "ln_only") return FreezePolicy::ln_only();
  static const std::regex re("first_([0-9]+)");
  std::smatch m;
  if (std::regex_match(s, m, re)) return FreezePolicy::first_k(std::stoul(m[1]));
  throw std::invalid_argument("unknown freeze policy '" + s +
                              "' (expected none, ln_only or first_<k>)");
}

inline std::string to_string(const FreezePolicy& p) {
  switch (p.mode) {
    case FreezeMode::None: return "none";
    case FreezeMode::LnOnly: return "ln_only";
    case FreezeMode::FirstK: return "first_" + std::to_string(p.k);
  }
  return "";
}

/// 1-based block index of a text parameter, 0 for embedding-stage parameters,
/// nullopt for parameters after the blocks (the projection).
inline std::optional<std::size_t> text_stage_of(const std::string& name) {
  static const std::regex block(R"(text\.block([0-9]+)\..*)");
  std::smatch m;
  if (std::regex_match(name, m, block)) return std::stoul(m[1]);
  if (name.rfind("text.proj.", 0) == 0) return std::nullopt;
  return 0;
}

inline bool is_norm_param(const std::string& name) {
  static const std::regex re(R"(.*\.(ln[0-9]*|embed_ln)\.(gain|bias))");
  return std::regex_match(name, re);
}

/// Sets trainable flags on every "text." parameter and returns the trainable names.
/// first_k freezes the embedding stage and blocks 1..k (k = 0 trains everything);
/// ln_only trains only normalization gains/biases and the projection.
template <std::floating_point T>
std::set<std::string> apply_freeze_policy(ParameterStore<T>& store, const FreezePolicy& policy,
                                          std::size_t layers) {
  policy.validate(layers);
  std::set<std::string> trainable;
  for (auto& p : store.all()) {
    if (p.name.rfind("text.", 0) != 0) {
      if (p.trainable) trainable.insert(p.name);
      continue;
    }
    const auto stage = text_stage_of(p.name);
    bool on = true;
    switch (policy.mode) {
      case FreezeMode::None: on = true; break;
      case FreezeMode::FirstK: on = policy.k == 0 || !stage || *stage > policy.k; break;
      case FreezeMode::LnOnly: on = !stage || is_norm_param(p.name); break;
    }
    p.trainable = on;
    if (on) trainable.insert(p.name);
  }
  return trainable;
}

}  // namespace medimp
