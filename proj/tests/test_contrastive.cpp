#include "medimp/contrastive.hpp"
#include "medimp/numerics/gradcheck.hpp"
#include "medimp/synth.hpp"

#include <gtest/gtest.h>

using namespace medimp;
using D = double;

namespace {

// Direct evaluation of both directions from the cosine definition.
double brute_force_loss(const Tensor<D>& fi, const Tensor<D>& ft, double inv_tau) {
  const std::size_t b = fi.dim(0), d = fi.dim(1);
  std::vector<std::vector<double>> c(b, std::vector<double>(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < b; ++k) {
      double dot = 0, ni = 0, nk = 0;
      for (std::size_t j = 0; j < d; ++j) {
        dot += fi(i, j) * ft(k, j);
        ni += fi(i, j) * fi(i, j);
        nk += ft(k, j) * ft(k, j);
      }
      c[i][k] = dot / (std::sqrt(ni) * std::sqrt(nk));
    }
  double it = 0, ti = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0, col = 0;
    for (std::size_t k = 0; k < b; ++k) {
      row += std::exp(c[i][k] * inv_tau);
      col += std::exp(c[k][i] * inv_tau);
    }
    it -= std::log(std::exp(c[i][i] * inv_tau) / row);
    ti -= std::log(std::exp(c[i][i] * inv_tau) / col);
  }
  return (it + ti) / 2;
}

double loss_value(const Tensor<D>& fi, const Tensor<D>& ft, double s, LossParts* parts = nullptr) {
  Graph<D> g;
  return contrastive_loss(g.constant(fi), g.constant(ft), g.constant(Tensor<D>::scalar(s)), parts)
      .value()
      .item();
}

Tensor<D> eye(std::size_t n) {
  Tensor<D> t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1;
  return t;
}

ImageEncoderConfig toy_image() {
  ImageEncoderConfig c;
  c.extents = {8, 8, 4};
  c.widths = {4, 8};
  c.blocks = {1, 1};
  c.embed_dim = 8;
  c.pool_heads = 2;
  return c;
}

TextEncoderConfig toy_text() {
  TextEncoderConfig c;
  c.layers = 2;
  c.width = 16;
  c.heads = 2;
  c.ffn = 16;
  c.max_len = 40;
  c.embed_dim = 8;
  return c;
}

struct ToySetup {
  AugmentationBank bank = AugmentationBank::load(MEDIMP_DATA_DIR "/bank.json");
  Rules rules;
  std::vector<PairSample> train, val;
  Vocabulary vocab;

  ToySetup() {
    GeneratorConfig gc;
    gc.extents = {8, 8, 4};
    const auto cohort = gen_cohort(20, kDefaultSplitFractions, 3, gc);
    train = pair_samples(cohort, Split::Train);
    val = pair_samples(cohort, Split::Val);
    vocab = build_vocab(bank_corpus(bank, rules));
  }

  [[nodiscard]] Model<float> model(std::optional<FreezePolicy> freeze = {}) const {
    return init_model<float>(toy_image(), toy_text(), vocab, freeze, 11);
  }
};

const ToySetup& toy() {
  static const ToySetup s;
  return s;
}

TrainConfig toy_train(std::size_t epochs) {
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = epochs;
  c.warmup_epochs = 1;
  c.base_lr = 3e-3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(CosineSimilarity, OrthonormalRowsGiveIdentity) {
  Graph<D> g;
  const auto s = cosine_similarity_matrix(g.constant(eye(3)), g.constant(eye(3))).value();
  const auto id = eye(3);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(s[i], id[i], 1e-10);
}

TEST(CosineSimilarity, MatchesScalarOracleAndIgnoresScale) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto fi = random_tensor<D>(Shape{3, 4}, rng, 1.0);
    auto ft = random_tensor<D>(Shape{3, 4}, rng, 1.0);
    Graph<D> g;
    const auto s = cosine_similarity_matrix(g.constant(fi), g.constant(ft)).value();
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t k = 0; k < 3; ++k) {
        double dot = 0, nb = 0, nk = 0;
        for (std::size_t j = 0; j < 4; ++j) {
          dot += fi(b, j) * ft(k, j);
          nb += fi(b, j) * fi(b, j);
          nk += ft(k, j) * ft(k, j);
        }
        EXPECT_NEAR(s(b, k), dot / std::sqrt(nb * nk), 1e-10);
        EXPECT_LE(std::abs(s(b, k)), 1.0 + 1e-12);
      }
    auto scaled = fi;
    for (std::size_t j = 0; j < 4; ++j) scaled(1, j) *= 2;
    Graph<D> h;
    const auto s2 = cosine_similarity_matrix(h.constant(scaled), h.constant(ft)).value();
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(s2[i], s[i], 1e-12);
  }
}

TEST(InfoNce, Examples) {
  Graph<D> g;
  const auto one = g.constant(Tensor<D>(Shape{1, 1}, 0.3));
  EXPECT_EQ(info_nce_directional(one, 0.07, Direction::ImageToText).value().item(), 0.0);

  const auto sim = cosine_similarity_matrix(g.constant(eye(2)), g.constant(eye(2)));
  const double expect = 2 * std::log(1 + std::exp(-1.0));
  EXPECT_NEAR(info_nce_directional(sim, 1.0, Direction::ImageToText).value().item(), 0.62652, 1e-5);
  EXPECT_NEAR(info_nce_directional(sim, 1.0, Direction::TextToImage).value().item(), expect, 1e-12);
  EXPECT_THROW(info_nce_directional(sim, 0.0, Direction::ImageToText), std::invalid_argument);
}

TEST(ContrastiveLoss, SingletonBatchIsExactlyZero) {
  Rng rng(4);
  const auto fi = random_tensor<D>(Shape{1, 5}, rng, 1.0), ft = random_tensor<D>(Shape{1, 5}, rng, 1.0);
  EXPECT_EQ(loss_value(fi, ft, kInitLogitScale), 0.0);
}

TEST(ContrastiveLoss, IdenticalEmbeddingsGiveBLogB) {
  const Tensor<D> same(Shape{4, 3}, 0.7);
  EXPECT_NEAR(loss_value(same, same, kInitLogitScale), 4 * std::log(4.0), 1e-6);
  EXPECT_NEAR(loss_value(same, same, 1.0), 5.5452, 1e-4);
}

TEST(ContrastiveLoss, MatchesBruteForceOverFiftySeeds) {
  for (std::size_t b = 1; b <= 4; ++b)
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng({seed, b});
      const auto fi = random_tensor<D>(Shape{b, 5}, rng, 1.0);
      const auto ft = random_tensor<D>(Shape{b, 5}, rng, 1.0);
      const double s = rng.uniform(0.0, std::log(100.0));
      EXPECT_NEAR(loss_value(fi, ft, s), brute_force_loss(fi, ft, std::exp(s)), 1e-8);
    }
}

TEST(ContrastiveLoss, SymmetricInputsGiveEqualDirections) {
  Rng rng(7);
  const auto f = random_tensor<D>(Shape{4, 6}, rng, 1.0);
  LossParts parts;
  const double total = loss_value(f, f, 1.3, &parts);
  EXPECT_NEAR(parts.image_to_text, parts.text_to_image, 1e-12);
  EXPECT_NEAR(total, parts.image_to_text, 1e-12);
}

TEST(ContrastiveLoss, NonNegativeAndInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t b = 2 + rng.index(4);
    const auto fi = random_tensor<D>(Shape{b, 4}, rng, 1.0);
    const auto ft = random_tensor<D>(Shape{b, 4}, rng, 1.0);
    const double base = loss_value(fi, ft, 2.0);
    EXPECT_GE(base, 0.0);

    auto scaled = fi;
    const std::size_t row = rng.index(b);
    const double k = rng.uniform(0.1, 10.0);
    for (std::size_t j = 0; j < 4; ++j) scaled(row, j) *= k;
    EXPECT_NEAR(loss_value(scaled, ft, 2.0), base, 1e-10);

    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    Tensor<D> pi(fi.shape()), pt(ft.shape());
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        pi(i, j) = fi(perm[i], j);
        pt(i, j) = ft(perm[i], j);
      }
    EXPECT_NEAR(loss_value(pi, pt, 2.0), base, 1e-10);
  }
}

TEST(ContrastiveLoss, DominantDiagonalIsMonotoneInScale) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto fi = eye(4), ft = eye(4);
    for (auto& v : fi.data()) v += rng.uniform(0.0, 0.2);
    for (auto& v : ft.data()) v += rng.uniform(0.0, 0.2);
    double prev = std::numeric_limits<double>::infinity();
    for (double s = 0; s <= std::log(100.0); s += 0.1) {
      const double l = loss_value(fi, ft, s);
      EXPECT_LE(l, prev + 1e-12);
      prev = l;
    }
  }
}

TEST(ContrastiveLoss, GradientsIncludingLogitScale) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t b = 2 + rng.index(3), d = 2 + rng.index(4);
    const double err = grad_check(
        [](Graph<D>&, const std::vector<Var<D>>& v) { return contrastive_loss(v[0], v[1], v[2]); },
        {random_tensor<D>(Shape{b, d}, rng, 1.0), random_tensor<D>(Shape{b, d}, rng, 1.0),
         Tensor<D>::scalar(rng.uniform(0.0, 4.0))});
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(LogitScale, InitialValueAndClamp) {
  EXPECT_NEAR(kInitLogitScale, 2.6593, 1e-4);
  EXPECT_NEAR(std::exp(kInitLogitScale), 1 / 0.07, 1e-9);
  EXPECT_NEAR(std::exp(clamp_logit_scale(std::log(150.0))), 100.0, 1e-9);
  EXPECT_LE(std::exp(double(clamp_logit_scale(std::log(150.0f)))), 100.0);
  EXPECT_LE(std::exp(clamp_logit_scale(std::log(150.0))), 100.0);
  EXPECT_EQ(clamp_logit_scale(std::log(50.0)), std::log(50.0));
  // Above the clip the loss no longer depends on s.
  Rng rng(2);
  const auto fi = random_tensor<D>(Shape{3, 4}, rng, 1.0), ft = random_tensor<D>(Shape{3, 4}, rng, 1.0);
  EXPECT_EQ(loss_value(fi, ft, std::log(150.0)), loss_value(fi, ft, std::log(1000.0)));
}

TEST(Schedule, LongAndDeskValues) {
  const Schedule long_run{5e-5, 40, 200};
  EXPECT_EQ(lr_at(0, long_run), 0.0);
  EXPECT_EQ(lr_at(40, long_run), 5e-5);
  EXPECT_NEAR(lr_at(120, long_run), 2.5e-5, 1e-20);
  EXPECT_NEAR(lr_at(200, long_run), 0.0, 1e-20);
  const Schedule desk = TrainConfig{}.schedule();
  EXPECT_EQ(lr_at(0, desk), 0.0);
  EXPECT_EQ(lr_at(6, desk), 1e-3);
  EXPECT_NEAR(lr_at(18, desk), 5e-4, 1e-18);
  EXPECT_NEAR(lr_at(30, desk), 0.0, 1e-18);
  EXPECT_NEAR(lr_at(3, desk), 5e-4, 1e-18);
  EXPECT_THROW(lr_at(31, desk), std::out_of_range);
  EXPECT_THROW(lr_at(-1, desk), std::out_of_range);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  ParameterStore<D> s;
  s.add("w", Tensor<D>(Shape{3}, std::vector<D>{1.0, -2.0, 0.5}));
  AdamMoments<D> m;
  adamw_step(s, {{"w", Tensor<D>(Shape{3})}}, m, 0.1, {0.02, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(s.at("w").value[0], 0.998, 1e-15);
  EXPECT_NEAR(s.at("w").value[1], -1.996, 1e-15);
  EXPECT_NEAR(s.at("w").value[2], 0.499, 1e-15);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  for (double g : {3.0, -0.01, 250.0}) {
    ParameterStore<D> s;
    s.add("w", Tensor<D>::scalar(1.0));
    AdamMoments<D> m;
    adamw_step(s, {{"w", Tensor<D>::scalar(g)}}, m, 0.01, {0.0, 0.9, 0.999, 1e-8});
    EXPECT_NEAR(s.at("w").value[0], 1.0 - 0.01 * (g > 0 ? 1 : -1), 1e-8);
  }
}

TEST(AdamW, FiveStepQuadraticMatchesScalarReference) {
  const std::vector<double> a{1.0, 3.0, 0.5}, c{0.2, -1.0, 4.0};
  const double lr = 0.05, wd = 0.02, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ParameterStore<D> s;
  s.add("w", Tensor<D>(Shape{3}, std::vector<D>{1.0, 1.0, 1.0}));
  AdamMoments<D> state;
  std::vector<double> p{1, 1, 1}, m(3), v(3);
  for (int t = 1; t <= 5; ++t) {
    Tensor<D> grad(Shape{3});
    for (int i = 0; i < 3; ++i) grad[i] = a[i] * (s.at("w").value[i] - c[i]);
    adamw_step(s, {{"w", grad}}, state, lr, {wd, b1, b2, eps});
    for (int i = 0; i < 3; ++i) {
      const double gi = a[i] * (p[i] - c[i]);
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      p[i] = p[i] * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);
    }
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s.at("w").value[i], p[i], 1e-10);
}

TEST(AdamW, FrozenAndNoDecayParameters) {
  ParameterStore<D> s;
  s.add("frozen", Tensor<D>::scalar(2.0)).trainable = false;
  s.add("bias", Tensor<D>::scalar(2.0), false);
  AdamMoments<D> m;
  adamw_step(s, {{"frozen", Tensor<D>::scalar(1.0)}, {"bias", Tensor<D>::scalar(0.0)}}, m, 0.1,
             {0.5, 0.9, 0.999, 1e-8});
  EXPECT_EQ(s.at("frozen").value[0], 2.0);
  EXPECT_EQ(s.at("bias").value[0], 2.0);
  EXPECT_THROW(adamw_step(s, {{"bias", Tensor<D>(Shape{2})}}, m, 0.1, {}), ShapeError);
}

TEST(Model, InitialisesLogitScaleAndDefaultFreeze) {
  const auto m = toy().model();
  EXPECT_NEAR(std::exp(double(m.logit_scale())), 14.286, 1e-3);
  EXPECT_NEAR(std::exp(double(m.logit_scale())), 1 / 0.07, 1e-4);
  EXPECT_FALSE(m.params.at(kLogitScaleName).decay);
  EXPECT_TRUE(m.params.at(kLogitScaleName).trainable);
  EXPECT_FALSE(m.params.at("text.block1.ffn1.weight").trainable);
  EXPECT_TRUE(m.params.at("text.block2.ffn1.weight").trainable);
  auto bad = toy_text();
  bad.embed_dim = 5;
  EXPECT_THROW(init_model<float>(toy_image(), bad, toy().vocab, {}, 1), std::invalid_argument);
}

TEST(Fit, Deterministic) {
  auto a = toy().model(), b = toy().model();
  const auto cfg = toy_train(2);
  fit(a, toy().train, toy().val, toy().bank, toy().rules, cfg);
  fit(b, toy().train, toy().val, toy().bank, toy().rules, cfg);
  for (std::size_t i = 0; i < a.params.size(); ++i)
    EXPECT_EQ(a.params.all()[i].value, b.params.all()[i].value) << a.params.all()[i].name;
}

TEST(Fit, LossDecreasesOnPlantedSignal) {
  auto m = toy().model();
  const auto r = fit(m, toy().train, toy().val, toy().bank, toy().rules, toy_train(30));
  std::vector<double> train_losses;
  for (const auto& e : r.metrics)
    if (e.split == "train") train_losses.push_back(e.loss_sum);
  ASSERT_EQ(train_losses.size(), 30u);
  EXPECT_LT(train_losses.back(), train_losses.front());
  EXPECT_EQ(r.steps, 30 * (toy().train.size() / 8));
}

TEST(Fit, ScaleNeverExceedsClipEvenWhenPushed) {
  auto m = toy().model();
  m.set_logit_scale(static_cast<float>(std::log(99.0)));
  auto cfg = toy_train(5);
  cfg.base_lr = 0.05;
  std::size_t steps = 0;
  FitHooks hooks;
  hooks.on_step = [&](const StepInfo& s) {
    ++steps;
    EXPECT_LE(s.exp_logit_scale, 100.0);
  };
  const auto r = fit(m, toy().train, toy().val, toy().bank, toy().rules, cfg, hooks);
  EXPECT_EQ(steps, r.steps);
  EXPECT_LE(r.max_exp_logit_scale, 100.0);
}

TEST(Fit, FrozenParametersStayBitIdentical) {
  for (const auto& policy : {FreezePolicy{FreezeMode::FirstK, 1}, FreezePolicy{FreezeMode::LnOnly, 0}}) {
    auto m = toy().model(policy);
    const auto before = m.params;
    fit(m, toy().train, toy().val, toy().bank, toy().rules, toy_train(2));
    std::size_t frozen = 0, moved = 0;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      const auto& p = m.params.all()[i];
      if (!p.trainable) {
        ++frozen;
        EXPECT_EQ(p.value, before.all()[i].value) << p.name;
      } else if (p.value != before.all()[i].value) {
        ++moved;
      }
    }
    EXPECT_GT(frozen, 0u);
    EXPECT_GT(moved, 0u);
    if (policy.mode == FreezeMode::LnOnly)
      for (const auto& p : m.params.all())
        if (p.name.rfind("text.", 0) == 0 && p.trainable) {
          EXPECT_TRUE(is_norm_param(p.name) || p.name.rfind("text.proj.", 0) == 0) << p.name;
        }
  }
}

TEST(Fit, Errors) {
  auto m = toy().model();
  auto cfg = toy_train(2);
  cfg.batch_size = toy().train.size() + 1;
  EXPECT_THROW(fit(m, toy().train, toy().val, toy().bank, toy().rules, cfg), std::invalid_argument);
  cfg = toy_train(2);
  cfg.warmup_epochs = 2;
  EXPECT_THROW(fit(m, toy().train, toy().val, toy().bank, toy().rules, cfg), std::invalid_argument);
  auto raw = toy().train;
  raw[0].volume.normalized = false;
  EXPECT_THROW(fit(m, raw, toy().val, toy().bank, toy().rules, toy_train(2)), std::invalid_argument);
}

TEST(Retrieval, TopOneCountsDiagonalWins) {
  Tensor<D> s(Shape{3, 3}, std::vector<D>{0.9, 0.1, 0.0, 0.5, 0.2, 0.1, 0.0, 0.0, 0.3});
  EXPECT_NEAR(retrieval_top1(s), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, CsvRowFormat) {
  std::ostringstream out;
  write_metrics_header(out);
  write_metrics_row(out, {3, "val", 32.0, 2.0, 14.25, 5e-4});
  EXPECT_EQ(out.str(), "epoch,split,loss_sum,loss_per_pair,exp_logit_scale,lr\n3,val,32,2,14.25,0.0005\n");
}
