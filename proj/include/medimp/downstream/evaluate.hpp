#pragma once

#include "medimp/downstream/head.hpp"
#include "medimp/downstream/labels.hpp"
#include "medimp/downstream/metrics.hpp"
#include "medimp/encoders/image.hpp"

#include <ostream>

namespace medimp {

struct DownstreamConfig {
  HeadConfig head;
  std::vector<Horizon> horizons = kDefaultHorizons;
  double window_days = kLabelWindowDays;
  double threshold = kCreatThreshold;
  std::uint64_t seed = 0;
  std::size_t folds = 10;
  std::size_t shuffles = 20;
};

/// Frozen-encoder embeddings of every present exam, unit-normalized, one
/// sequence per subject in cohort order.
template <std::floating_point T>
std::vector<ExamSequence> embed_cohort(const ParameterStore<T>& store, const ImageEncoderConfig& cfg,
                                       const Cohort& cohort) {
  std::vector<ExamSequence> out(cohort.subjects.size());
  for (std::size_t i = 0; i < cohort.subjects.size(); ++i)
    for (auto e : cohort.subjects[i].exams()) {
      const auto emb = encode_image(normalize_volume(cohort.volume(i, e)), store, cfg);
      std::vector<double> v(emb.data().begin(), emb.data().end());
      double n = 0;
      for (double x : v) n += x * x;
      n = std::sqrt(n) + 1e-12;
      for (double& x : v) x /= n;
      out[i].set(exam_index(e), std::move(v));
    }
  return out;
}

struct LabeledSet {
  std::vector<const ExamSequence*> xs;
  std::vector<int> ys;
  std::vector<std::size_t> subjects;
};

inline LabeledSet labeled_subjects(const std::vector<ExamSequence>& seqs, const Cohort& cohort,
                                   const std::vector<std::size_t>& subjects, const Horizon& h,
                                   const DownstreamConfig& cfg) {
  LabeledSet out;
  for (auto i : subjects) {
    const auto y = build_creat_label(cohort.subjects.at(i).creat_series, h.day, cfg.window_days, cfg.threshold);
    if (!y || !seqs.at(i).present()) continue;
    out.xs.push_back(&seqs[i]);
    out.ys.push_back(*y);
    out.subjects.push_back(i);
  }
  return out;
}

struct HorizonScore {
  std::string horizon;
  double auc = 0, f1 = 0;
  std::size_t n_train = 0, n_test = 0;
};

/// One row per horizon, then a "Mean" row.
struct EvalReport {
  std::vector<HorizonScore> rows;
};

struct CvScore {
  std::string horizon;
  MeanStd auc, f1;
};

struct CvReport {
  std::size_t folds = 0;
  std::vector<CvScore> rows;
};

namespace detail {

inline std::uint64_t horizon_seed(const DownstreamConfig& cfg, std::size_t h, std::uint64_t extra = 0) {
  Rng r({cfg.seed, h, extra, 0x686f72ULL});
  return r.next();
}

inline std::vector<double> predict(const ParameterStore<double>& head, const HeadConfig& c,
                                   const std::vector<const ExamSequence*>& xs) {
  std::vector<double> p;
  for (const auto* x : xs) p.push_back(sequence_forward(head, c, *x));
  return p;
}

inline std::vector<int> threshold(const std::vector<double>& p) {
  std::vector<int> out;
  for (double v : p) out.push_back(v >= 0.5 ? 1 : 0);
  return out;
}

inline void require_both_classes(const std::vector<int>& ys, const std::string& what) {
  const auto pos = std::count(ys.begin(), ys.end(), 1);
  const auto neg = std::count(ys.begin(), ys.end(), 0);
  if (pos < 2 || neg < 2)
    throw std::invalid_argument(what + ": need at least 2 subjects per class, got " +
                                std::to_string(pos) + " positive and " + std::to_string(neg) + " negative");
}

}  // namespace detail

/// Trains one head per horizon on the training split and scores the test split.
inline EvalReport evaluate_downstream(const std::vector<ExamSequence>& seqs, const Cohort& cohort,
                                      const DownstreamConfig& cfg) {
  if (seqs.size() != cohort.subjects.size())
    throw std::invalid_argument("evaluate_downstream: embeddings do not match the cohort");
  EvalReport r;
  double auc_sum = 0, f1_sum = 0;
  for (std::size_t h = 0; h < cfg.horizons.size(); ++h) {
    const auto tr = labeled_subjects(seqs, cohort, cohort.indices(Split::Train), cfg.horizons[h], cfg);
    const auto te = labeled_subjects(seqs, cohort, cohort.indices(Split::Test), cfg.horizons[h], cfg);
    detail::require_both_classes(te.ys, "evaluate_downstream " + cfg.horizons[h].name + " test split");
    if (tr.xs.empty()) throw std::invalid_argument("evaluate_downstream: no labeled training subjects");
    const auto head = train_sequence_head(tr.xs, tr.ys, cfg.head, detail::horizon_seed(cfg, h));
    const auto p = detail::predict(head, cfg.head, te.xs);
    HorizonScore s{cfg.horizons[h].name, roc_auc(te.ys, p), f1_score(te.ys, detail::threshold(p)),
                   tr.xs.size(), te.xs.size()};
    auc_sum += s.auc;
    f1_sum += s.f1;
    r.rows.push_back(s);
  }
  const double n = double(cfg.horizons.size());
  r.rows.push_back({"Mean", auc_sum / n, f1_sum / n, 0, 0});
  return r;
}

/// Test AUC at one horizon after training on permuted training labels, once per shuffle.
inline std::vector<double> shuffled_label_aucs(const std::vector<ExamSequence>& seqs, const Cohort& cohort,
                                               const DownstreamConfig& cfg, std::size_t horizon = 0) {
  const auto& hz = cfg.horizons.at(horizon);
  const auto tr = labeled_subjects(seqs, cohort, cohort.indices(Split::Train), hz, cfg);
  const auto te = labeled_subjects(seqs, cohort, cohort.indices(Split::Test), hz, cfg);
  detail::require_both_classes(te.ys, "shuffled_label_aucs test split");
  std::vector<double> out;
  for (std::size_t k = 0; k < cfg.shuffles; ++k) {
    auto ys = tr.ys;
    Rng rng({cfg.seed, k, 0x73687566666c65ULL});
    rng.shuffle(ys);
    const auto head = train_sequence_head(tr.xs, ys, cfg.head, detail::horizon_seed(cfg, horizon, k + 1));
    out.push_back(roc_auc(te.ys, detail::predict(head, cfg.head, te.xs)));
  }
  return out;
}

/// k-fold cross-validation over training subjects. A fold whose held-out part has a
/// single class contributes F1 but no AUC; the Mean row averages each fold's horizons.
inline CvReport cross_validate_downstream(const std::vector<ExamSequence>& seqs, const Cohort& cohort,
                                          const DownstreamConfig& cfg) {
  if (seqs.size() != cohort.subjects.size())
    throw std::invalid_argument("cross_validate_downstream: embeddings do not match the cohort");
  const auto train = cohort.indices(Split::Train);
  const auto folds = kfold_split(train.size(), cfg.folds, cfg.seed);
  std::vector<std::vector<double>> aucs(cfg.horizons.size()), f1s(cfg.horizons.size());
  std::vector<double> mean_auc, mean_f1;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> fit_ids, held_ids;
    std::vector<bool> held(train.size(), false);
    for (auto i : folds[f]) held[i] = true;
    for (std::size_t i = 0; i < train.size(); ++i) (held[i] ? held_ids : fit_ids).push_back(train[i]);
    double fa = 0, ff = 0;
    std::size_t na = 0;
    for (std::size_t h = 0; h < cfg.horizons.size(); ++h) {
      const auto tr = labeled_subjects(seqs, cohort, fit_ids, cfg.horizons[h], cfg);
      const auto te = labeled_subjects(seqs, cohort, held_ids, cfg.horizons[h], cfg);
      if (tr.xs.empty() || te.xs.empty()) continue;
      const auto head = train_sequence_head(tr.xs, tr.ys, cfg.head, detail::horizon_seed(cfg, h, 1000 + f));
      const auto p = detail::predict(head, cfg.head, te.xs);
      const double f1 = f1_score(te.ys, detail::threshold(p));
      f1s[h].push_back(f1);
      ff += f1;
      const auto pos = std::count(te.ys.begin(), te.ys.end(), 1);
      if (pos > 0 && pos < std::ptrdiff_t(te.ys.size())) {
        const double a = roc_auc(te.ys, p);
        aucs[h].push_back(a);
        fa += a;
        ++na;
      }
    }
    if (na) mean_auc.push_back(fa / double(na));
    mean_f1.push_back(ff / double(cfg.horizons.size()));
  }
  CvReport r{folds.size(), {}};
  for (std::size_t h = 0; h < cfg.horizons.size(); ++h)
    r.rows.push_back({cfg.horizons[h].name, mean_std(aucs[h]), mean_std(f1s[h])});
  r.rows.push_back({"Mean", mean_std(mean_auc), mean_std(mean_f1)});
  return r;
}

inline void write_report_csv(std::ostream& out, const EvalReport& r) {
  out << "horizon,auc,f1,n_train,n_test\n";
  char buf[160];
  for (const auto& s : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%zu,%zu\n", s.horizon.c_str(), s.auc, s.f1, s.n_train, s.n_test);
    out << buf;
  }
}

inline void write_report_csv(std::ostream& out, const CvReport& r) {
  out << "horizon,auc_mean,auc_std,f1_mean,f1_std,folds_with_auc\n";
  char buf[200];
  for (const auto& s : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%zu\n", s.horizon.c_str(), s.auc.mean, s.auc.std,
                  s.f1.mean, s.f1.std, s.auc.n);
    out << buf;
  }
}

/// Columns per horizon (AUC, F1) then Mean, as in a results table.
inline void print_report(std::ostream& out, const EvalReport& r) {
  char buf[64];
  out << "       ";
  for (const auto& s : r.rows) {
    std::snprintf(buf, sizeof buf, "| %-13s", s.horizon.c_str());
    out << buf;
  }
  out << "|\n       ";
  for (std::size_t i = 0; i < r.rows.size(); ++i) out << "| AUC    F1    ";
  out << "|\nscore  ";
  for (const auto& s : r.rows) {
    std::snprintf(buf, sizeof buf, "| %.3f  %.3f ", s.auc, s.f1);
    out << buf;
  }
  out << "|\n";
}

inline void print_report(std::ostream& out, const CvReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu-fold cross-validation (mean ± std)\n", r.folds);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-8s %-18s %-18s\n", "horizon", "AUC", "F1");
  out << buf;
  for (const auto& s : r.rows) {
    std::snprintf(buf, sizeof buf, "%-8s %.3f ± %.3f      %.3f ± %.3f\n", s.horizon.c_str(), s.auc.mean,
                  s.auc.std, s.f1.mean, s.f1.std);
    out << buf;
  }
}

}  // namespace medimp
