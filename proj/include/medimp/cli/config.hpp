#pragma once

#include "medimp/cli/tsne.hpp"
#include "medimp/contrastive/train.hpp"
#include "medimp/downstream/evaluate.hpp"
#include "medimp/synth/cohort.hpp"

#include <cstdlib>
#include <filesystem>

namespace medimp {

namespace fs = std::filesystem;

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

struct CohortSection {
  std::size_t subjects = 105;
  std::array<double, 3> split_weights{72, 5, 28};
  GeneratorConfig generator;

  [[nodiscard]] std::array<double, 3> fractions() const {
    const double t = split_weights[0] + split_weights[1] + split_weights[2];
    if (!(t > 0)) throw std::invalid_argument("cohort.split_weights must have a positive sum");
    return {split_weights[0] / t, split_weights[1] / t, split_weights[2] / t};
  }
};

struct PromptSection {
  fs::path rules = fs::path(MEDIMP_DATA_DIR) / "rules.json";
  fs::path bank = fs::path(MEDIMP_DATA_DIR) / "bank.json";
  PromptMode mode = PromptMode::Augmented;
  VariableSet variables = VariableSet::all();
  std::size_t per_record = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  fs::path out = "run";
  CohortSection cohort;
  PromptSection prompts;
  ImageEncoderConfig image;
  TextEncoderConfig text;
  std::optional<FreezePolicy> freeze;  // empty: all but the last text block frozen
  TrainConfig train;
  DownstreamConfig downstream;
  std::size_t augmented_per_exam = 4;
  TsneConfig tsne;

  /// Stream seed for one pipeline stage, derived from the global seed.
  [[nodiscard]] std::uint64_t stage_seed(std::string_view stage) const {
    Rng r({seed, fnv1a(stage)});
    return r.next();
  }
};

inline void from_json_train(const nlohmann::json& j, TrainConfig& c) {
  reject_unknown_keys(j, {"batch_size", "epochs", "warmup_epochs", "base_lr", "weight_decay", "beta1", "beta2",
                          "augment_images", "prompt_pool"},
                      "train");
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.augment_images = j.value("augment_images", c.augment_images);
  c.prompt_pool = j.value("prompt_pool", c.prompt_pool);
}

/// Strict parse: unknown keys anywhere are errors; relative paths resolve against `base`.
inline RunConfig parse_run_config(const nlohmann::json& j, const fs::path& base = ".") {
  reject_unknown_keys(j, {"seed", "out", "cohort", "prompts", "image_encoder", "text_encoder", "freeze", "train",
                          "downstream", "embed", "tsne"},
                      "config");
  RunConfig c;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  c.seed = j.value("seed", c.seed);
  if (j.contains("out")) c.out = resolve(j.at("out").get<std::string>());
  if (j.contains("cohort")) {
    const auto& s = j.at("cohort");
    reject_unknown_keys(s, {"subjects", "split_weights", "generator"}, "cohort");
    c.cohort.subjects = s.value("subjects", c.cohort.subjects);
    c.cohort.split_weights = s.value("split_weights", c.cohort.split_weights);
    if (s.contains("generator")) c.cohort.generator = s.at("generator").get<GeneratorConfig>();
  }
  if (j.contains("prompts")) {
    const auto& s = j.at("prompts");
    reject_unknown_keys(s, {"rules", "bank", "mode", "variables", "per_record"}, "prompts");
    if (s.contains("rules")) c.prompts.rules = resolve(s.at("rules").get<std::string>());
    if (s.contains("bank")) c.prompts.bank = resolve(s.at("bank").get<std::string>());
    if (s.contains("mode")) c.prompts.mode = parse_prompt_mode(s.at("mode").get<std::string>());
    if (s.contains("variables"))
      c.prompts.variables = VariableSet::from_names(s.at("variables").get<std::vector<std::string>>());
    c.prompts.per_record = s.value("per_record", c.prompts.per_record);
  }
  if (j.contains("image_encoder")) c.image = j.at("image_encoder").get<ImageEncoderConfig>();
  if (j.contains("text_encoder")) c.text = j.at("text_encoder").get<TextEncoderConfig>();
  if (j.contains("freeze")) c.freeze = parse_freeze_policy(j.at("freeze").get<std::string>());
  if (j.contains("train")) from_json_train(j.at("train"), c.train);
  if (j.contains("downstream")) {
    const auto& s = j.at("downstream");
    reject_unknown_keys(s, {"head", "window_days", "threshold", "folds", "shuffles"}, "downstream");
    if (s.contains("head")) c.downstream.head = s.at("head").get<HeadConfig>();
    c.downstream.window_days = s.value("window_days", c.downstream.window_days);
    c.downstream.threshold = s.value("threshold", c.downstream.threshold);
    c.downstream.folds = s.value("folds", c.downstream.folds);
    c.downstream.shuffles = s.value("shuffles", c.downstream.shuffles);
  }
  if (j.contains("embed")) {
    reject_unknown_keys(j.at("embed"), {"augmented_per_exam"}, "embed");
    c.augmented_per_exam = j.at("embed").value("augmented_per_exam", c.augmented_per_exam);
  }
  if (j.contains("tsne")) {
    const auto& s = j.at("tsne");
    reject_unknown_keys(s, {"perplexity", "iterations", "learning_rate", "exaggeration"}, "tsne");
    c.tsne.perplexity = s.value("perplexity", c.tsne.perplexity);
    c.tsne.iterations = s.value("iterations", c.tsne.iterations);
    c.tsne.learning_rate = s.value("learning_rate", c.tsne.learning_rate);
    c.tsne.exaggeration = s.value("exaggeration", c.tsne.exaggeration);
  }
  for (const auto& p : {c.prompts.rules, c.prompts.bank})
    if (!fs::exists(p)) throw std::invalid_argument("config: referenced file '" + p.string() + "' does not exist");
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config '" + path.string() + "': " + e.what());
  }
  return parse_run_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

/// Seed precedence: explicit flag, then MEDIMP_SEED, then the config value.
inline void apply_seed_overrides(RunConfig& c, std::optional<std::uint64_t> flag) {
  if (const char* env = std::getenv("MEDIMP_SEED"); env && *env) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (*end) throw std::invalid_argument(std::string("MEDIMP_SEED is not an integer: '") + env + "'");
    c.seed = v;
  }
  if (flag) c.seed = *flag;
}

}  // namespace medimp
