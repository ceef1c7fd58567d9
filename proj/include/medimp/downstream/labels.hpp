#pragma once

#include "medimp/synth/cohort.hpp"

#include <optional>

namespace medimp {

inline constexpr double kLabelWindowDays = 90;
inline constexpr double kCreatThreshold = 110;

/// 1 when the mean creatinine within ±window days of the date reaches the threshold,
/// empty when no sample falls in the window.
inline std::optional<int> build_creat_label(const std::vector<CreatSample>& series, double pred_day,
                                            double window = kLabelWindowDays,
                                            double threshold = kCreatThreshold) {
  if (!(window > 0)) throw std::invalid_argument("build_creat_label: window must be positive");
  double sum = 0;
  std::size_t n = 0;
  for (const auto& s : series)
    if (std::abs(s.day - pred_day) <= window) {
      sum += s.value;
      ++n;
    }
  if (!n) return std::nullopt;
  return sum / double(n) >= threshold ? 1 : 0;
}

struct Horizon {
  std::string name;
  double day = 0;
};

inline const std::vector<Horizon> kDefaultHorizons{{"2y", 730}, {"3y", 1095}, {"4y", 1460}};

}  // namespace medimp
