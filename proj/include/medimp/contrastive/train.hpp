#pragma once

#include "medimp/contrastive/model.hpp"
#include "medimp/contrastive/optim.hpp"
#include "medimp/imaging/augment.hpp"
#include "medimp/promptgen/prompts.hpp"

#include <functional>
#include <ostream>

namespace medimp {

struct PairSample {
  Volume volume;  // normalized
  ClinicalRecord record;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::size_t warmup_epochs = 6;
  double base_lr = 1e-3;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  PromptMode prompt_mode = PromptMode::Augmented;
  VariableSet variables = VariableSet::all();
  bool augment_images = true;
  std::size_t prompt_pool = 0;  // 0: resample every epoch; N: draw from N prompts fixed up front

  void validate() const {
    if (batch_size < 2) throw std::invalid_argument("train: batch size must be at least 2");
    if (epochs == 0) throw std::invalid_argument("train: epochs must be positive");
    if (warmup_epochs >= epochs)
      throw std::invalid_argument("train: warmup_epochs must be smaller than epochs");
    if (!(base_lr > 0)) throw std::invalid_argument("train: base_lr must be positive");
    if (variables.empty()) throw std::invalid_argument("train: empty variable set");
  }

  [[nodiscard]] Schedule schedule() const {
    return {base_lr, double(warmup_epochs), double(epochs)};
  }
  [[nodiscard]] AdamWConfig adamw() const { return {weight_decay, beta1, beta2, 1e-8}; }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss_sum = 0;       // mean over batches of the summed batch loss
  double loss_per_pair = 0;  // loss_sum / B
  double exp_logit_scale = 0;
  double lr = 0;
};

inline void write_metrics_header(std::ostream& out) {
  out << "epoch,split,loss_sum,loss_per_pair,exp_logit_scale,lr\n";
}

inline void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g,%.9g,%.9g\n", m.epoch, m.split.c_str(),
                m.loss_sum, m.loss_per_pair, m.exp_logit_scale, m.lr);
  out << buf;
}

struct StepInfo {
  std::size_t epoch = 0, step = 0;
  double lr = 0, loss = 0, exp_logit_scale = 0;
};

struct FitResult {
  std::vector<EpochMetrics> metrics;
  std::size_t steps = 0;
  double max_exp_logit_scale = 0;
};

struct FitHooks {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

namespace detail {

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  Rng r({seed, epoch, 0x65706f6368ULL});
  return r.next();
}

}  // namespace detail

/// Prompt text for one sample at one epoch under the config's sampling policy.
inline std::string sample_prompt(const PairSample& s, const AugmentationBank& bank, const Rules& rules,
                                 const TrainConfig& cfg, std::uint64_t epoch_key) {
  if (cfg.prompt_pool > 0 && cfg.prompt_mode == PromptMode::Augmented) {
    const auto pool = generate_prompts(s.record, bank, rules, cfg.variables, cfg.prompt_mode,
                                       cfg.seed, cfg.prompt_pool);
    Rng pick({epoch_key, fnv1a(s.record.subject_id), exam_index(s.record.exam)});
    return pool[pick.index(pool.size())].text;
  }
  return generate_prompts(s.record, bank, rules, cfg.variables, cfg.prompt_mode, epoch_key, 1)
      .front()
      .text;
}

/// Mean summed loss over full batches of `data`, un-augmented, with prompts from `seed`.
/// A split smaller than B is scored as one batch.
template <std::floating_point T>
double evaluate_loss(const Model<T>& m, const std::vector<PairSample>& data,
                     const AugmentationBank& bank, const Rules& rules, const TrainConfig& cfg,
                     std::uint64_t seed) {
  if (data.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t b = std::min(cfg.batch_size, data.size());
  double total = 0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start + b <= data.size(); start += b, ++batches) {
    std::vector<const Volume*> vs;
    std::vector<TokenizedText> ts;
    for (std::size_t i = start; i < start + b; ++i) {
      vs.push_back(&data[i].volume);
      ts.push_back(m.tokenize(sample_prompt(data[i], bank, rules, cfg, seed)));
    }
    Graph<T> g;
    Bound<T> p(g, m.params, false);
    total += double(batch_loss(p, m, vs, ts).value().item());
  }
  return total / double(batches);
}

/// Contrastive pretraining. Batches are drawn without replacement each epoch and the
/// last incomplete batch is dropped; the logit scale is clamped after every step.
template <std::floating_point T>
FitResult fit(Model<T>& m, const std::vector<PairSample>& train, const std::vector<PairSample>& val,
              const AugmentationBank& bank, const Rules& rules, const TrainConfig& cfg,
              const FitHooks& hooks = {}) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("fit: empty training set");
  if (cfg.batch_size > train.size())
    throw std::invalid_argument("fit: batch size " + std::to_string(cfg.batch_size) +
                                " exceeds training set of " + std::to_string(train.size()));
  for (const auto& s : train)
    if (!s.volume.normalized) throw std::invalid_argument("fit: training volumes must be normalized");

  const std::size_t steps_per_epoch = train.size() / cfg.batch_size;
  const auto sched = cfg.schedule();
  const auto opt = cfg.adamw();
  AdamMoments<T> moments;
  FitResult result;
  result.max_exp_logit_scale = std::exp(double(m.logit_scale()));
  std::vector<std::size_t> order(train.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto ekey = detail::epoch_seed(cfg.seed, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler({ekey, 0x73687566ULL});
    shuffler.shuffle(order);

    double loss_acc = 0, lr = 0;
    for (std::size_t k = 0; k < steps_per_epoch; ++k) {
      std::vector<Volume> augmented;
      augmented.reserve(cfg.batch_size);
      std::vector<const Volume*> vs;
      std::vector<TokenizedText> ts;
      for (std::size_t j = 0; j < cfg.batch_size; ++j) {
        const std::size_t idx = order[k * cfg.batch_size + j];
        const auto& s = train[idx];
        if (cfg.augment_images) {
          const auto ap = sample_augmentation_params(ekey, idx, s.volume);
          augmented.push_back(apply_augmentation(s.volume, ap));
          vs.push_back(&augmented.back());
        } else {
          vs.push_back(&s.volume);
        }
        ts.push_back(m.tokenize(sample_prompt(s, bank, rules, cfg, ekey)));
      }

      Graph<T> g;
      Bound<T> p(g, m.params, true);
      auto loss = batch_loss(p, m, vs, ts);
      g.backward(loss);
      lr = lr_at(double(epoch) + double(k) / double(steps_per_epoch), sched);
      adamw_step(m.params, p.gradients(g), moments, lr, opt);
      m.set_logit_scale(clamp_logit_scale(m.logit_scale()));

      const double scale = std::exp(double(m.logit_scale()));
      result.max_exp_logit_scale = std::max(result.max_exp_logit_scale, scale);
      ++result.steps;
      loss_acc += double(loss.value().item());
      if (hooks.on_step)
        hooks.on_step({epoch, result.steps, lr, double(loss.value().item()), scale});
    }

    const double scale = std::exp(double(m.logit_scale()));
    EpochMetrics tm{epoch, "train", loss_acc / double(steps_per_epoch), 0, scale, lr};
    tm.loss_per_pair = tm.loss_sum / double(cfg.batch_size);
    result.metrics.push_back(tm);
    if (hooks.on_epoch) hooks.on_epoch(tm);
    if (val.size() >= 2) {
      EpochMetrics vm{epoch, "val", evaluate_loss(m, val, bank, rules, cfg, cfg.seed ^ 0x76616cULL),
                      0, scale, lr};
      vm.loss_per_pair = vm.loss_sum / double(std::min(cfg.batch_size, val.size()));
      result.metrics.push_back(vm);
      if (hooks.on_epoch) hooks.on_epoch(vm);
    }
  }
  return result;
}

/// Mean image→text top-1 accuracy over `batches` random batches of size B drawn
/// (without replacement within a batch) from `data`; volumes are not augmented.
template <std::floating_point T>
double retrieval_accuracy(const Model<T>& m, const std::vector<PairSample>& data,
                          const AugmentationBank& bank, const Rules& rules, const TrainConfig& cfg,
                          std::size_t batch, std::size_t batches, std::uint64_t seed) {
  if (batch > data.size() || batch < 2)
    throw std::invalid_argument("retrieval_accuracy: batch size incompatible with data");
  std::vector<const Volume*> vols;
  for (const auto& s : data) vols.push_back(&s.volume);
  const auto fi_all = m.embed_images(vols);
  const std::size_t d = m.image.embed_dim;
  Rng rng({seed, 0x72657472ULL});
  std::vector<std::size_t> idx(data.size());
  double acc = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    Tensor<T> fi(Shape{batch, d});
    std::vector<std::string> prompts;
    for (std::size_t j = 0; j < batch; ++j) {
      std::copy_n(fi_all.data().begin() + idx[j] * d, d, fi.data().begin() + j * d);
      prompts.push_back(sample_prompt(data[idx[j]], bank, rules, cfg, rng.next()));
    }
    const auto ft = m.embed_texts(prompts);
    Graph<T> g;
    acc += retrieval_top1(cosine_similarity_matrix(g.constant(fi), g.constant(ft)).value());
  }
  return acc / double(batches);
}

}  // namespace medimp
