#pragma once

#include "medimp/cli/checkpoint.hpp"
#include "medimp/cli/config.hpp"
#include "medimp/cli/embeddings.hpp"
#include "medimp/cli/svg.hpp"
#include "medimp/cli/tsne.hpp"
#include "medimp/synth/pairs.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

namespace medimp {

struct RunPaths {
  fs::path out;
  [[nodiscard]] fs::path manifest() const { return out / "cohort.json"; }
  [[nodiscard]] fs::path prompts() const { return out / "prompts.jsonl"; }
  [[nodiscard]] fs::path checkpoint() const { return out / "checkpoint.bin"; }
  [[nodiscard]] fs::path metrics() const { return out / "metrics.csv"; }
  [[nodiscard]] fs::path embeddings() const { return out / "embeddings.csv"; }
  [[nodiscard]] fs::path eval() const { return out / "eval.csv"; }
  [[nodiscard]] fs::path eval_cv() const { return out / "eval_cv.csv"; }
  [[nodiscard]] fs::path plot(std::string_view variable) const {
    return out / ("tsne_" + std::string(variable) + ".svg");
  }
};

inline const std::vector<std::string> kPlotVariables{"exam", "gfr", "creat", "donor_age"};

inline Cohort run_synth(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths{cfg.out};
  auto cohort = gen_cohort(cfg.cohort.subjects, cfg.cohort.fractions(), cfg.stage_seed("cohort"),
                           cfg.cohort.generator);
  for (std::size_t i = 0; i < cohort.subjects.size(); ++i)
    for (auto e : cohort.subjects[i].exams()) save_volume(cohort.volume(i, e), paths.out / cohort.volume_stem(i, e));
  io::write_atomic(paths.manifest(), cohort_manifest(cohort).dump(1) + "\n");
  log << "synth: " << cohort.subjects.size() << " subjects, " << cohort.exam_count() << " volumes -> "
      << paths.manifest().string() << "\n";
  return cohort;
}

/// Cohort from the run directory; volumes are read from the files the manifest names.
inline Cohort load_cohort(const RunConfig& cfg) {
  const RunPaths paths{cfg.out};
  if (!fs::exists(paths.manifest()))
    throw std::runtime_error("no cohort manifest at '" + paths.manifest().string() + "' (run `synth` first)");
  auto cohort = cohort_from_manifest(nlohmann::json::parse(io::read_file(paths.manifest())));
  cohort.volume_root = paths.out;
  for (std::size_t i = 0; i < cohort.subjects.size(); ++i)
    for (auto e : cohort.subjects[i].exams()) {
      auto raw = paths.out / cohort.volume_stem(i, e);
      raw += ".raw";
      if (!fs::exists(raw)) throw std::runtime_error("cohort volume missing: '" + raw.string() + "'");
    }
  return cohort;
}

inline std::vector<Prompt> run_prompts(const RunConfig& cfg, std::ostream& log) {
  const auto cohort = load_cohort(cfg);
  const auto rules = Rules::load(cfg.prompts.rules.string());
  const auto bank = AugmentationBank::load(cfg.prompts.bank.string());
  std::vector<Prompt> all;
  for (const auto& s : cohort.subjects)
    for (auto e : s.exams()) {
      auto ps = generate_prompts(record_for(s, e), bank, rules, cfg.prompts.variables, cfg.prompts.mode,
                                 cfg.stage_seed("prompts"), cfg.prompts.per_record);
      all.insert(all.end(), ps.begin(), ps.end());
    }
  std::ostringstream os;
  write_prompts_jsonl(os, all);
  io::write_atomic(RunPaths{cfg.out}.prompts(), os.str());
  log << "prompts: " << all.size() << " prompts -> " << RunPaths{cfg.out}.prompts().string() << "\n";
  return all;
}

struct PretrainResult {
  FitResult fit;
  double test_retrieval = 0;
};

inline TrainConfig effective_train_config(const RunConfig& cfg) {
  auto tc = cfg.train;
  tc.seed = cfg.stage_seed("train");
  tc.prompt_mode = cfg.prompts.mode;
  tc.variables = cfg.prompts.variables;
  return tc;
}

inline PretrainResult run_pretrain(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths{cfg.out};
  const auto cohort = load_cohort(cfg);
  const auto rules = Rules::load(cfg.prompts.rules.string());
  const auto bank = AugmentationBank::load(cfg.prompts.bank.string());
  const auto train = pair_samples(cohort, Split::Train), val = pair_samples(cohort, Split::Val),
             test = pair_samples(cohort, Split::Test);
  auto model = init_model<float>(cfg.image, cfg.text, build_vocab(bank_corpus(bank, rules)), cfg.freeze,
                                 cfg.stage_seed("model"));
  const auto tc = effective_train_config(cfg);
  std::ostringstream metrics;
  write_metrics_header(metrics);
  FitHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m) {
    write_metrics_row(metrics, m);
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3zu %-5s loss/pair %.4f  exp(s) %.3f  lr %.3g\n", m.epoch,
                  m.split.c_str(), m.loss_per_pair, m.exp_logit_scale, m.lr);
    log << buf << std::flush;
  };
  PretrainResult r;
  r.fit = fit(model, train, val, bank, rules, tc, hooks);
  io::write_atomic(paths.metrics(), metrics.str());
  write_checkpoint(paths.checkpoint(), model);
  if (test.size() >= tc.batch_size) {
    r.test_retrieval = retrieval_accuracy(model, test, bank, rules, tc, tc.batch_size, 200, cfg.stage_seed("retrieval"));
    char buf[128];
    std::snprintf(buf, sizeof buf, "test image->text top-1 (B=%zu): %.4f (chance %.4f)\n", tc.batch_size,
                  r.test_retrieval, 1.0 / double(tc.batch_size));
    log << buf;
  }
  log << "pretrain: checkpoint -> " << paths.checkpoint().string() << "\n";
  return r;
}

inline std::vector<EmbeddingRow> run_embed(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths{cfg.out};
  const auto model = read_checkpoint(paths.checkpoint());
  const auto cohort = load_cohort(cfg);
  const auto rows = export_embeddings(model, cohort, Rules::load(cfg.prompts.rules.string()), cfg.augmented_per_exam,
                                      cfg.stage_seed("embed"));
  std::ostringstream os;
  write_embeddings_csv(os, rows);
  io::write_atomic(paths.embeddings(), os.str());
  log << "embed: " << rows.size() << " rows -> " << paths.embeddings().string() << "\n";
  return rows;
}

inline DownstreamConfig effective_downstream_config(const RunConfig& cfg) {
  auto dc = cfg.downstream;
  dc.seed = cfg.stage_seed("downstream");
  return dc;
}

/// Test-split report, plus k-fold cross-validation on the training split when `cv_folds` is set.
inline EvalReport run_eval(const RunConfig& cfg, std::optional<std::size_t> cv_folds, std::ostream& log) {
  const RunPaths paths{cfg.out};
  const auto model = read_checkpoint(paths.checkpoint());
  const auto cohort = load_cohort(cfg);
  const auto seqs = embed_cohort(model.params, model.image, cohort);
  auto dc = effective_downstream_config(cfg);
  const auto report = evaluate_downstream(seqs, cohort, dc);
  std::ostringstream csv;
  write_report_csv(csv, report);
  io::write_atomic(paths.eval(), csv.str());
  print_report(log, report);
  if (cv_folds) {
    dc.folds = *cv_folds;
    const auto cv = cross_validate_downstream(seqs, cohort, dc);
    std::ostringstream cvcsv;
    write_report_csv(cvcsv, cv);
    io::write_atomic(paths.eval_cv(), cvcsv.str());
    print_report(log, cv);
  }
  return report;
}

inline std::vector<std::string> category_order(const std::string& variable, const Rules& rules) {
  std::vector<std::string> out;
  if (variable == "exam") {
    for (auto e : kAllExams) out.emplace_back(exam_name(e));
  } else if (variable == "gfr") {
    for (const auto& b : rules.gfr.bins) out.push_back(b.label);
  } else if (variable == "donor_age") {
    for (const auto& b : rules.donor_age.bins) out.push_back(b.label);
  } else if (variable == "creat") {
    out = {rules.trend.stable, rules.trend.unstable};
  } else {
    throw std::invalid_argument("unknown plot variable '" + variable + "'");
  }
  return out;
}

inline std::string category_of(const EmbeddingRow& r, const std::string& variable) {
  if (variable == "exam") return std::string(exam_name(r.exam));
  if (variable == "gfr") return r.gfr;
  if (variable == "creat") return r.creat;
  if (variable == "donor_age") return r.donor_age;
  throw std::invalid_argument("unknown plot variable '" + variable + "'");
}

inline std::vector<fs::path> run_plot(const RunConfig& cfg, std::ostream& log) {
  const RunPaths paths{cfg.out};
  std::ifstream in(paths.embeddings());
  if (!in) throw std::runtime_error("no embeddings at '" + paths.embeddings().string() + "' (run `embed` first)");
  const auto rows = read_embeddings_csv(in);
  std::vector<std::vector<double>> x;
  for (const auto& r : rows) x.push_back(r.values);
  auto tc = cfg.tsne;
  tc.seed = cfg.stage_seed("tsne");
  const auto y = tsne_2d(x, tc);
  const auto rules = Rules::load(cfg.prompts.rules.string());
  std::vector<fs::path> written;
  for (const auto& var : kPlotVariables) {
    std::vector<ScatterPoint> pts;
    for (std::size_t i = 0; i < rows.size(); ++i) pts.push_back({y[i][0], y[i][1], category_of(rows[i], var), rows[i].augmented});
    io::write_atomic(paths.plot(var), render_scatter_svg(pts, "t-SNE of image embeddings: " + var, category_order(var, rules)));
    written.push_back(paths.plot(var));
  }
  log << "plot: " << written.size() << " SVG files in " << paths.out.string() << "\n";
  return written;
}

}  // namespace medimp
