#pragma once

#include "medimp/numerics/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace medimp {

/// 2·TP / (2·TP + FP + FN), 0 when nothing is positive in either list.
inline double f1_score(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size())
    throw std::invalid_argument("f1_score: " + std::to_string(y_true.size()) + " labels vs " +
                                std::to_string(y_pred.size()) + " predictions");
  if (y_true.empty()) throw std::invalid_argument("f1_score: empty input");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    tp += y_true[i] && y_pred[i];
    fp += !y_true[i] && y_pred[i];
    fn += y_true[i] && !y_pred[i];
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom ? 2.0 * double(tp) / double(denom) : 0.0;
}

/// Mann–Whitney statistic from average ranks; tied pairs count one half.
inline double roc_auc(const std::vector<int>& y_true, const std::vector<double>& scores) {
  if (y_true.size() != scores.size())
    throw std::invalid_argument("roc_auc: " + std::to_string(y_true.size()) + " labels vs " +
                                std::to_string(scores.size()) + " scores");
  const auto n = y_true.size();
  const auto n_pos = static_cast<std::size_t>(std::count_if(y_true.begin(), y_true.end(), [](int y) { return y != 0; }));
  const std::size_t n_neg = n - n_pos;
  if (!n_pos || !n_neg) throw std::invalid_argument("roc_auc: both classes must be present");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (y_true[order[k]]) rank_sum += avg;
    i = j;
  }
  const double np = double(n_pos), nn = double(n_neg);
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

/// Shuffled partition of 0..n-1 into k folds whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be at least 2");
  if (k > n)
    throw std::invalid_argument("kfold_split: " + std::to_string(k) + " folds for " +
                                std::to_string(n) + " subjects");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng({seed, 0x6b666f6c64ULL});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + std::ptrdiff_t(pos), order.begin() + std::ptrdiff_t(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

struct MeanStd {
  double mean = 0, std = 0;
  std::size_t n = 0;
};

/// Sample standard deviation (n − 1); zero for a single value.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), 0};
  for (double x : v) r.mean += x / double(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / double(v.size() - 1));
  }
  return r;
}

}  // namespace medimp
