// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "medimp/cli.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>

using namespace medimp;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "failed: " + what;
    }
  }
  void note(const std::string& s) {
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("medimp_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---- oracles -------------------------------------------------------------

double brute_force_loss(const Tensor<double>& fi, const Tensor<double>& ft, double inv_tau) {
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

double loss_value(const Tensor<double>& fi, const Tensor<double>& ft, double s) {
  Graph<double> g;
  return contrastive_loss(g.constant(fi), g.constant(ft), g.constant(Tensor<double>::scalar(s))).value().item();
}

Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& k) {
  const std::size_t ci = x.dim(0), ny = x.dim(1), nx = x.dim(2);
  const std::size_t co = k.dim(0), ky = k.dim(2), kx = k.dim(3);
  Tensor<double> out(Shape{co, ny - ky + 1, nx - kx + 1});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y + ky <= ny; ++y)
      for (std::size_t xx = 0; xx + kx <= nx; ++xx) {
        double acc = 0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t a = 0; a < ky; ++a)
            for (std::size_t b = 0; b < kx; ++b)
              acc += x[(c * ny + y + a) * nx + xx + b] * k[((o * ci + c) * ky + a) * kx + b];
        out[(o * (ny - ky + 1) + y) * (nx - kx + 1) + xx] = acc;
      }
  return out;
}

// ---- toy setup shared by the short training criteria ----------------------

struct Toy {
  AugmentationBank bank = AugmentationBank::load(MEDIMP_DATA_DIR "/bank.json");
  Rules rules;
  std::vector<PairSample> train, val;
  Vocabulary vocab;

  Toy() {
    GeneratorConfig gc;
    gc.extents = {8, 8, 4};
    const auto cohort = gen_cohort(20, kDefaultSplitFractions, 3, gc);
    train = pair_samples(cohort, Split::Train);
    val = pair_samples(cohort, Split::Val);
    vocab = build_vocab(bank_corpus(bank, rules));
  }

  [[nodiscard]] Model<float> model(std::optional<FreezePolicy> freeze = {}) const {
    ImageEncoderConfig ic;
    ic.extents = {8, 8, 4};
    ic.widths = {4, 8};
    ic.blocks = {1, 1};
    ic.embed_dim = 8;
    ic.pool_heads = 2;
    TextEncoderConfig tc;
    tc.layers = 2;
    tc.width = 16;
    tc.heads = 2;
    tc.ffn = 16;
    tc.max_len = 40;
    tc.embed_dim = 8;
    return init_model<float>(ic, tc, vocab, freeze, 11);
  }

  static TrainConfig train_config(std::size_t epochs) {
    TrainConfig c;
    c.batch_size = 8;
    c.epochs = epochs;
    c.warmup_epochs = 1;
    c.base_lr = 3e-3;
    c.seed = 5;
    return c;
  }
};

// ---- criteria ------------------------------------------------------------

Outcome loss_oracle() {
  Outcome o;
  double worst = 0;
  for (std::size_t b = 1; b <= 4; ++b)
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng({seed, b, 0x6163});
      const auto fi = random_tensor<double>(Shape{b, 6}, rng, 1.0), ft = random_tensor<double>(Shape{b, 6}, rng, 1.0);
      const double s = rng.uniform(0.0, std::log(100.0));
      worst = std::max(worst, std::abs(loss_value(fi, ft, s) - brute_force_loss(fi, ft, std::exp(s))));
      if (b == 1) o.require(loss_value(fi, ft, s) == 0.0, "B=1 loss is exactly 0");
    }
  o.require(worst < 1e-8, "brute-force agreement < 1e-8");
  o.note("max |diff| " + fmt("%.2e", worst));
  for (std::size_t b = 1; b <= 6; ++b) {
    const Tensor<double> same(Shape{b, 4}, 0.3);
    o.require(std::abs(loss_value(same, same, kInitLogitScale) - double(b) * std::log(double(b))) < 1e-6,
              "equal embeddings give B log B (B=" + std::to_string(b) + ")");
  }
  return o;
}

Outcome gradient_suite() {
  Outcome o;
  const auto rows = run_gradient_suite();
  double worst = 0;
  for (const auto& r : rows) {
    o.require(r.pass, r.name + " rel err " + fmt("%.2e", r.max_rel_error));
    o.require(r.configs >= 20, r.name + " has >= 20 configurations");
    worst = std::max(worst, r.max_rel_error);
  }
  o.require(rows.size() > 30, "suite covers every primitive");
  o.note(std::to_string(rows.size()) + " checks, worst rel err " + fmt("%.2e", worst));
  return o;
}

Outcome temperature(const Toy& toy) {
  Outcome o;
  const auto m = toy.model();
  o.require(std::abs(std::exp(double(m.logit_scale())) - 1 / 0.07) < 1e-6, "initial exp(s) = 1/0.07 within 1e-6");
  o.note("init exp(s) " + fmt("%.7f", std::exp(double(m.logit_scale()))));
  // Three starts: the default, next to the clip with a large step, and above the clip.
  for (double start : {0.0, 99.0, 150.0}) {
    auto mm = toy.model();
    auto cfg = Toy::train_config(5);
    if (start > 0) {
      mm.set_logit_scale(static_cast<float>(std::log(start)));
      cfg.base_lr = 0.05;
    }
    std::size_t steps = 0, over = 0;
    double hi = 0;
    FitHooks hooks;
    hooks.on_step = [&](const StepInfo& s) {
      ++steps;
      over += s.exp_logit_scale > 100.0;
      hi = std::max(hi, s.exp_logit_scale);
    };
    fit(mm, toy.train, toy.val, toy.bank, toy.rules, cfg, hooks);
    o.require(steps > 0 && over == 0, "exp(s) <= 100 after every step");
    if (start > 100) o.require(hi > 99.99, "clip reached when started above it");
    o.note((start > 0 ? "start " + fmt("%g", start) : std::string("default")) + " run: " + std::to_string(steps) + " steps, max exp(s) " +
           fmt("%.4f", hi));
  }
  return o;
}

Outcome inflation() {
  Outcome o;
  double worst = 0;
  for (std::size_t k : {1u, 3u})
    for (std::size_t depth : {1u, 2u, 3u})
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng({seed, k, depth, 0x696e66});
        const auto k2 = random_tensor<double>(Shape{2, 3, k, k}, rng, 1.0);
        const auto plane = random_tensor<double>(Shape{3, 6, 7}, rng, 1.0);
        const std::size_t nz = depth + 2;
        Tensor<double> vol(Shape{3, nz, 6, 7});
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t z = 0; z < nz; ++z)
            for (std::size_t i = 0; i < 42; ++i) vol[(c * nz + z) * 42 + i] = plane[c * 42 + i];
        Graph<double> g;
        const auto out = ops::conv3d(g.constant(vol), g.constant(inflate_kernel(k2, depth))).value();
        const auto ref = conv2d_oracle(plane, k2);
        const std::size_t oz = nz - depth + 1, per = ref.numel() / 2;
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t z = 0; z < oz; ++z)
            for (std::size_t i = 0; i < per; ++i)
              worst = std::max(worst, std::abs(out[(c * oz + z) * per + i] - ref[c * per + i]));
      }
  o.require(worst < 1e-6, "inflated conv equals 2D oracle within 1e-6");
  o.note("max |diff| " + fmt("%.2e", worst));
  return o;
}

Outcome prompt_fidelity() {
  Outcome o;
  const auto bank = AugmentationBank::load(MEDIMP_DATA_DIR "/bank.json");
  std::ifstream in(MEDIMP_TEST_DATA_DIR "/reference_variants.txt");
  std::vector<std::string> reference;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) reference.push_back(line);
  o.require(reference.size() == 16 && bank.variants.size() == 17, "16 reference variants plus the template");
  const SlotMap canonical{{"age", "{age}"}, {"gfr", "{gfr}"}, {"date", "{date}"}, {"adj", "{adj}"}};
  std::size_t exact = 0;
  for (std::size_t i = 0; i < reference.size() && i + 1 < bank.variants.size(); ++i)
    exact += bank.variants[i + 1].render(VariableSet::all(), canonical) == reference[i];
  o.require(exact == reference.size(), "every variant byte-exact");

  Rng rng(2024);
  const Rules rules;
  const std::array<VariableSet, 4> subsets{VariableSet::all(), VariableSet{Variable::GFR},
                                           VariableSet{Variable::Creat, Variable::DonorAge},
                                           VariableSet{Variable::Exam, Variable::GFR}};
  std::size_t n = 0, leaks = 0, manual_ok = 0, records = 0;
  for (int i = 0; n < 10000; ++i, ++records) {
    ClinicalRecord r;
    r.subject_id = "A" + std::to_string(i);
    r.exam = kAllExams[rng.index(4)];
    r.gfr_value = rng.uniform(1.0, 120.0);
    if (rng.bernoulli(0.8)) r.creat_prev = rng.uniform(50.0, 300.0);
    r.creat_curr = rng.uniform(50.0, 300.0);
    r.donor_age_value = rng.uniform(18.0, 80.0);
    const auto vars = subsets[std::size_t(i) % subsets.size()];
    for (const auto& p : generate_prompts(r, bank, rules, vars, PromptMode::Augmented, 9, 10)) {
      ++n;
      leaks += leaks_raw_values(p.text, r);
    }
    const auto manual = generate_prompts(r, bank, rules, vars, PromptMode::Manual, std::uint64_t(i), 5);
    manual_ok += manual.size() == 1 && manual[0].template_id == bank.original().template_id;
  }
  o.require(leaks == 0, "no raw numerals in generated prompts");
  o.require(manual_ok == records, "manual mode emits exactly the one template");
  o.note(std::to_string(exact) + "/16 variants exact, " + std::to_string(n) + " prompts, " + std::to_string(leaks) +
         " leaks");
  return o;
}

Outcome schedule() {
  Outcome o;
  for (const Schedule s : {Schedule{5e-5, 40, 200}, TrainConfig{}.schedule()}) {
    const std::string tag = "(" + fmt("%g", s.warmup_epochs) + ", " + fmt("%g", s.epochs) + ", " + fmt("%g", s.base_lr) + ")";
    o.require(lr_at(0, s) == 0.0, tag + " epoch 0 -> 0");
    o.require(lr_at(s.warmup_epochs, s) == s.base_lr, tag + " warmup -> base_lr");
    o.require(lr_at(s.epochs, s) == 0.0, tag + " end -> 0");
    o.require(lr_at((s.warmup_epochs + s.epochs) / 2, s) == s.base_lr / 2, tag + " midpoint -> base_lr/2");
  }
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  std::size_t f1_exact = 0;
  double auc_worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng({seed, 0x6d6574});
    const std::size_t n = 2 + rng.index(40);
    std::vector<int> y(n), p(n);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.45);
      p[i] = rng.bernoulli(0.5);
      s[i] = rng.bernoulli(0.3) ? double(rng.index(4)) / 4 : rng.uniform();
    }
    y[0] = 0;
    y[1] = 1;
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += y[i] && p[i];
      fp += !y[i] && p[i];
      fn += y[i] && !p[i];
    }
    const double f1 = (2 * tp + fp + fn) ? double(2 * tp) / double(2 * tp + fp + fn) : 0.0;
    f1_exact += f1_score(y, p) == f1;
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (y[i] == 1 && y[j] == 0) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    auc_worst = std::max(auc_worst, std::abs(roc_auc(y, s) - wins / pairs));
  }
  o.require(f1_exact == 100, "f1 exact on 100 cases");
  o.require(auc_worst < 1e-12, "auc within 1e-12 on 100 cases");
  o.require(roc_auc({0, 1, 1, 0, 1}, std::vector<double>(5, 0.4)) == 0.5, "all-ties AUC = 0.5");
  o.note("auc max |diff| " + fmt("%.1e", auc_worst));
  return o;
}

struct PretrainedRun {
  RunConfig cfg;
  double retrieval = 0;
  double seconds = 0;
};

PretrainedRun pretrain_default(const std::string& name, double signal) {
  PretrainedRun r;
  r.cfg = parse_run_config(nlohmann::json::object());
  r.cfg.cohort.generator.signal_strength = signal;
  r.cfg.out = scratch(name);
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream log;
  run_synth(r.cfg, log);
  r.retrieval = run_pretrain(r.cfg, log).test_retrieval;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Outcome retrieval(const PretrainedRun& signal, const PretrainedRun& null) {
  Outcome o;
  const double chance = 1.0 / double(signal.cfg.train.batch_size);
  o.require(signal.cfg.train.batch_size == 16, "B = 16");
  o.require(signal.retrieval >= 2 * chance, "planted-signal top-1 >= 2x chance");
  o.require(std::abs(null.retrieval - chance) <= 0.05, "null-signal top-1 within chance +/- 5 points");
  o.require(signal.seconds <= 600, "pretraining within 10 CPU-minutes");
  o.note("top-1 " + fmt("%.4f", signal.retrieval) + " (need >= " + fmt("%.4f", 2 * chance) + "), null " +
         fmt("%.4f", null.retrieval) + ", pretrain " + fmt("%.0f s", signal.seconds));
  return o;
}

Outcome downstream(const PretrainedRun& run) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream log;
  const auto report = run_eval(run.cfg, 10, log);
  const auto model = read_checkpoint(RunPaths{run.cfg.out}.checkpoint());
  const auto cohort = load_cohort(run.cfg);
  const auto seqs = embed_cohort(model.params, model.image, cohort);
  const auto shuffled = mean_std(shuffled_label_aucs(seqs, cohort, effective_downstream_config(run.cfg)));
  const double seconds = run.seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  o.require(report.rows.at(0).horizon == "2y", "first row is the 2-year horizon");
  o.require(report.rows.at(0).auc >= 0.80, "2-year test AUC >= 0.80");
  o.require(shuffled.n == 20, "20 permutations");
  o.require(std::abs(shuffled.mean - 0.5) <= 0.12, "shuffled-label AUC within 0.5 +/- 0.12");
  const auto cv = io::read_file(RunPaths{run.cfg.out}.eval_cv());
  o.require(cv.rfind("horizon,auc_mean,auc_std,f1_mean,f1_std", 0) == 0, "CV csv has mean and std columns");
  o.require(log.str().find("10-fold") != std::string::npos && log.str().find("±") != std::string::npos,
            "CV report printed as mean ± std");
  o.require(seconds <= 900, "total within 15 CPU-minutes");
  o.note("2y AUC " + fmt("%.3f", report.rows[0].auc) + ", shuffled mean " + fmt("%.3f", shuffled.mean) + " (sd " +
         fmt("%.3f", shuffled.std) + "), total " + fmt("%.0f s", seconds));
  return o;
}

Outcome freeze(const Toy& toy) {
  Outcome o;
  for (const auto& policy : {FreezePolicy::first_k(1), FreezePolicy::ln_only()}) {
    auto m = toy.model(policy);
    const auto before = m.params;
    fit(m, toy.train, toy.val, toy.bank, toy.rules, Toy::train_config(2));
    std::size_t frozen = 0, changed_frozen = 0, moved = 0;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      const auto& p = m.params.all()[i];
      const auto& q = before.all()[i];
      const bool same = std::memcmp(p.value.data().data(), q.value.data().data(), p.value.numel() * sizeof(float)) == 0;
      if (!p.trainable) {
        ++frozen;
        changed_frozen += !same;
      } else {
        moved += !same;
      }
    }
    const auto tag = to_string(policy);
    o.require(frozen > 0 && changed_frozen == 0, tag + " frozen parameters bit-identical");
    o.require(moved > 0, tag + " trainable parameters move");
    if (policy.mode == FreezeMode::LnOnly)
      for (const auto& p : m.params.all())
        if (p.name.rfind("text.", 0) == 0 && p.trainable)
          o.require(is_norm_param(p.name) || p.name.rfind("text.proj.", 0) == 0, "ln_only trains " + p.name);
    o.note(tag + ": " + std::to_string(frozen) + " frozen");
  }
  return o;
}

std::vector<std::string> plot_pipeline(const fs::path& out, std::uint64_t seed) {
  auto cfg = parse_run_config(nlohmann::json::parse(R"({
    "cohort": {"subjects": 30, "generator": {"extents": [8, 8, 4]}},
    "image_encoder": {"extents": [8, 8, 4], "widths": [4, 8], "blocks": [1, 1], "embed_dim": 8, "pool_heads": 2},
    "text_encoder": {"layers": 2, "width": 16, "heads": 2, "ffn": 16, "embed_dim": 8},
    "train": {"epochs": 3, "warmup_epochs": 1, "batch_size": 8}, "embed": {"augmented_per_exam": 1}})"));
  cfg.seed = seed;
  cfg.out = out;
  std::ostringstream log;
  run_synth(cfg, log);
  run_prompts(cfg, log);
  run_pretrain(cfg, log);
  run_embed(cfg, log);
  std::vector<std::string> svgs;
  for (const auto& p : run_plot(cfg, log)) svgs.push_back(io::read_file(p));
  return svgs;
}

Outcome tsne_calibration() {
  Outcome o;
  const auto dir_a = scratch("plot_a");
  const auto a = plot_pipeline(dir_a, 5), b = plot_pipeline(scratch("plot_b"), 5);
  o.require(a.size() == 4 && a == b, "synth -> plot SVGs byte-identical under a fixed seed");
  std::ifstream in(RunPaths{dir_a}.embeddings());
  const auto rows = read_embeddings_csv(in);
  std::vector<std::vector<double>> x;
  for (const auto& r : rows) x.push_back(r.values);
  double worst = 0;
  for (double perp : {TsneConfig{}.perplexity, 5.0, 30.0}) {
    const auto aff = tsne_affinities(x, perp);
    for (std::size_t i = 0; i < x.size(); ++i)
      worst = std::max(worst, std::abs(std::exp2(row_entropy_bits(aff.conditional, i)) - perp));
  }
  o.require(worst < 1e-2, "per-row perplexity within 1e-2");
  o.note(std::to_string(x.size()) + " rows, max |2^H - perp| " + fmt("%.1e", worst));
  return o;
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, bool>> results;
  auto run = [&](const std::string& id, const std::string& title, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << " [" << fmt("%.1f s", s) << "] "
              << o.detail << std::endl;
    results.emplace_back(id, o.pass);
  };

  const Toy toy;
  run("AC1", "loss oracle", loss_oracle);
  run("AC2", "gradient suite", gradient_suite);
  run("AC3", "temperature contract", [&] { return temperature(toy); });
  run("AC4", "inflation invariant", inflation);
  run("AC5", "prompt fidelity", prompt_fidelity);
  run("AC6", "schedule", schedule);
  run("AC7", "metric oracles", metric_oracles);

  std::optional<PretrainedRun> signal, null;
  run("AC8", "end-to-end retrieval", [&] {
    signal = pretrain_default("signal", 1.0);
    null = pretrain_default("null", 0.0);
    return retrieval(*signal, *null);
  });
  run("AC9", "end-to-end downstream", [&] {
    if (!signal) throw std::runtime_error("pretraining did not complete");
    return downstream(*signal);
  });
  run("AC10", "freeze policies", [&] { return freeze(toy); });
  run("AC11", "t-SNE calibration and pipeline determinism", tsne_calibration);

  const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.second; });
  std::cout << (results.size() - std::size_t(failed)) << "/" << results.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
