#pragma once

#include "medimp/contrastive/train.hpp"
#include "medimp/synth/cohort.hpp"

namespace medimp {

/// Normalized (volume, record) pairs for every present exam of one split,
/// subject order then exam order.
inline std::vector<PairSample> pair_samples(const Cohort& c, Split s) {
  std::vector<PairSample> out;
  for (auto i : c.indices(s))
    for (auto e : c.subjects[i].exams())
      out.push_back({normalize_volume(c.volume(i, e)), record_for(c.subjects[i], e)});
  return out;
}

}  // namespace medimp
