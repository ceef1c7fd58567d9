#pragma once

#include "medimp/contrastive/optim.hpp"
#include "medimp/encoders/text.hpp"


namespace medimp {

inline constexpr std::size_t kExamSlots = 4;

/// Per-exam embeddings of one subject with a presence mask. Absent slots may hold
/// anything (or nothing); the head never reads them.
struct ExamSequence {
  std::array<std::vector<double>, kExamSlots> slots;
  std::array<bool, kExamSlots> mask{};

  void set(std::size_t slot, std::vector<double> v) {
    slots.at(slot) = std::move(v);
    mask[slot] = true;
  }
  [[nodiscard]] std::size_t present() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  }
  [[nodiscard]] std::size_t dim() const {
    for (std::size_t i = 0; i < kExamSlots; ++i)
      if (mask[i]) return slots[i].size();
    return 0;
  }
};

struct HeadConfig {
  std::size_t heads = 2;
  std::size_t ffn = 0;  // 0: same as the embedding width
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 16;
  double base_lr = 1e-3;
  double weight_decay = 0.02;

  void validate() const {
    if (!heads) throw std::invalid_argument("head: heads must be positive");
    if (!epochs || warmup_epochs >= epochs)
      throw std::invalid_argument("head: need warmup_epochs < epochs");
    if (!batch_size) throw std::invalid_argument("head: batch size must be positive");
    if (!(base_lr > 0)) throw std::invalid_argument("head: base_lr must be positive");
  }
};

inline void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = {{"heads", c.heads},           {"ffn", c.ffn},           {"epochs", c.epochs},
       {"warmup_epochs", c.warmup_epochs}, {"batch_size", c.batch_size}, {"base_lr", c.base_lr},
       {"weight_decay", c.weight_decay}};
}
inline void from_json(const nlohmann::json& j, HeadConfig& c) {
  const nlohmann::json defaults = HeadConfig{};
  for (const auto& [k, _] : j.items())
    if (!defaults.contains(k)) throw std::invalid_argument("head config: unknown key '" + k + "'");
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
}

inline ParameterStore<double> init_sequence_head(std::size_t d, const HeadConfig& c, Rng& rng) {
  c.validate();
  if (d % c.heads)
    throw std::invalid_argument("head: width " + std::to_string(d) + " not divisible by " +
                                std::to_string(c.heads) + " heads");
  ParameterStore<double> s;
  s.add("head.pos", random_tensor<double>(Shape{kExamSlots, d}, rng, 0.02), false);
  s.add("head.cls", random_tensor<double>(Shape{1, d}, rng, 0.02), false);
  add_transformer_block(s, "head.block", d, c.ffn ? c.ffn : d, rng);
  add_linear(s, "head.out", d, 1, rng);
  return s;
}

/// Logit for one subject. Row 0 is a learned classification token; each slot row
/// is its embedding plus a slot position. Absent slots are masked out as keys and
/// only row 0 is read, so their content cannot affect the result.
inline Var<double> sequence_logit(const Bound<double>& p, const HeadConfig& c, const ExamSequence& seq) {
  if (!seq.present()) throw std::invalid_argument("sequence head: no exam present");
  const Tensor<double>& pos = p["head.pos"].value();
  const std::size_t d = pos.dim(1);
  Graph<double>& g = *p["head.pos"].graph();
  Tensor<double> slots(Shape{kExamSlots, d});
  std::vector<bool> mask{true};
  for (std::size_t i = 0; i < kExamSlots; ++i) {
    mask.push_back(seq.mask[i]);
    const auto& v = seq.slots[i];
    if (v.empty() && !seq.mask[i]) continue;
    if (v.size() != d)
      throw ShapeError("sequence head: slot " + std::to_string(i) + " has width " +
                       std::to_string(v.size()) + ", expected " + std::to_string(d));
    std::copy(v.begin(), v.end(), slots.data().begin() + i * d);
  }
  auto rows = ops::add(g.constant(std::move(slots)), p["head.pos"]);
  auto x = ops::concat_rows(std::vector<Var<double>>{p["head.cls"], rows});
  x = transformer_block(p, "head.block", x, c.heads, mask);
  return apply_linear(p, "head.out", ops::slice_rows(x, 0, 1));
}

inline double sequence_forward(const ParameterStore<double>& s, const HeadConfig& c, const ExamSequence& seq) {
  Graph<double> g;
  Bound<double> p(g, s, false);
  return ops::sigmoid(sequence_logit(p, c, seq)).value().item();
}

/// Mean binary cross-entropy, minibatch AdamW with warmup and cosine decay.
inline ParameterStore<double> train_sequence_head(const std::vector<const ExamSequence*>& xs,
                                                  const std::vector<int>& ys, const HeadConfig& c,
                                                  std::uint64_t seed) {
  if (xs.empty() || xs.size() != ys.size())
    throw std::invalid_argument("train_sequence_head: need equally many sequences and labels");
  Rng rng({seed, 0x68656164ULL});
  auto store = init_sequence_head(xs.front()->dim(), c, rng);
  const Schedule sched{c.base_lr, double(c.warmup_epochs), double(c.epochs)};
  const AdamWConfig opt{c.weight_decay, 0.9, 0.999, 1e-8};
  AdamMoments<double> moments;
  const std::size_t b = std::min(c.batch_size, xs.size());
  const std::size_t steps = (xs.size() + b - 1) / b;
  std::vector<std::size_t> order(xs.size());
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t lo = k * b, hi = std::min(lo + b, xs.size());
      Graph<double> g;
      Bound<double> p(g, store, true);
      std::vector<Var<double>> losses;
      for (std::size_t i = lo; i < hi; ++i) {
        auto z = sequence_logit(p, c, *xs[order[i]]);
        // BCE from the logit: softplus(z) − y·z.
        auto l = ops::softplus(z);
        if (ys[order[i]]) l = ops::sub(l, z);
        losses.push_back(l);
      }
      auto loss = ops::scale(ops::sum(ops::concat_rows(losses)), 1.0 / double(hi - lo));
      g.backward(loss);
      adamw_step(store, p.gradients(g), moments,
                 lr_at(double(epoch) + double(k) / double(steps), sched), opt);
    }
  }
  return store;
}

}  // namespace medimp
