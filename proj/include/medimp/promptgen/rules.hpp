#pragma once

#include "medimp/promptgen/record.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace medimp {

struct Bin {
  double lo = 0;
  double hi = std::numeric_limits<double>::infinity();
  std::string label;
};

/// Ordered half-open bins [lo, hi) mapping a continuous variable to a label.
struct CategorizationRule {
  std::string variable;
  std::vector<Bin> bins;

  void validate() const {
    if (bins.empty()) throw std::invalid_argument("rule '" + variable + "' has no bins");
    for (std::size_t i = 0; i < bins.size(); ++i) {
      if (bins[i].label.empty())
        throw std::invalid_argument("rule '" + variable + "' has an empty label");
      if (!(bins[i].lo < bins[i].hi))
        throw std::invalid_argument("rule '" + variable + "' has an empty bin");
      if (i && bins[i].lo != bins[i - 1].hi)
        throw std::invalid_argument("rule '" + variable + "' bins are not contiguous");
    }
  }

  [[nodiscard]] double lower_edge(std::string_view label) const {
    for (const auto& b : bins)
      if (b.label == label) return b.lo;
    throw std::invalid_argument("rule '" + variable + "' has no label '" + std::string(label) + "'");
  }
};

inline const std::string& categorize(double value, const CategorizationRule& rule) {
  for (const auto& b : rule.bins)
    if (value >= b.lo && value < b.hi) return b.label;
  std::ostringstream os;
  os << "value " << value << " of variable '" << rule.variable << "' is outside the rule coverage";
  throw std::out_of_range(os.str());
}

struct TrendLabels {
  std::string stable = "stable";
  std::string unstable = "unstable";
};

/// "unstable" iff a previous value exists and the relative change exceeds the threshold.
inline const std::string& creat_trend(std::optional<double> prev, double curr, double rel_threshold,
                                      const TrendLabels& labels = {}) {
  if (!prev) return labels.stable;
  return std::abs(curr - *prev) / *prev > rel_threshold ? labels.unstable : labels.stable;
}

/// Categorization rules for every prompt variable. Defaults mirror data/rules.json.
struct Rules {
  CategorizationRule gfr{"GFR",
                         {{0, 15, "very low"}, {15, 30, "low"}, {30, 60, "medium"},
                          {60, std::numeric_limits<double>::infinity(), "high"}}};
  CategorizationRule donor_age{"D.A.",
                               {{0, 40, "low"}, {40, 60, "medium"},
                                {60, std::numeric_limits<double>::infinity(), "high"}}};
  double creat_rel_threshold = 0.15;
  TrendLabels trend;
  std::map<Exam, std::string> exam_phrases{{Exam::D15, "two weeks"},
                                           {Exam::D30, "one month"},
                                           {Exam::M3, "three months"},
                                           {Exam::M12, "one year"}};

  void validate() const {
    gfr.validate();
    donor_age.validate();
    if (!(creat_rel_threshold > 0))
      throw std::invalid_argument("creatinine trend threshold must be positive");
    for (auto e : kAllExams)
      if (!exam_phrases.count(e) || exam_phrases.at(e).empty())
        throw std::invalid_argument("missing exam phrase for " + std::string(exam_name(e)));
  }

  static Rules from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{"gfr", "donor_age", "creat_trend", "exam_phrases"};
    for (const auto& [k, _] : j.items())
      if (std::find(known.begin(), known.end(), k) == known.end())
        throw std::invalid_argument("rules: unknown key '" + k + "'");
    Rules r;
    auto read_rule = [](const nlohmann::json& jr, const std::string& var) {
      CategorizationRule rule{var, {}};
      for (const auto& b : jr.at("bins")) {
        Bin bin;
        bin.lo = b.at("lo").get<double>();
        bin.hi = b.at("hi").is_null() ? std::numeric_limits<double>::infinity()
                                      : b.at("hi").get<double>();
        bin.label = b.at("label").get<std::string>();
        rule.bins.push_back(bin);
      }
      return rule;
    };
    if (j.contains("gfr")) r.gfr = read_rule(j.at("gfr"), "GFR");
    if (j.contains("donor_age")) r.donor_age = read_rule(j.at("donor_age"), "D.A.");
    if (j.contains("creat_trend")) {
      const auto& t = j.at("creat_trend");
      r.creat_rel_threshold = t.value("rel_threshold", r.creat_rel_threshold);
      r.trend.stable = t.value("stable", r.trend.stable);
      r.trend.unstable = t.value("unstable", r.trend.unstable);
    }
    if (j.contains("exam_phrases"))
      for (const auto& [k, v] : j.at("exam_phrases").items())
        r.exam_phrases[parse_exam(k)] = v.get<std::string>();
    r.validate();
    return r;
  }

  static Rules load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open rules file '" + path + "'");
    return from_json(nlohmann::json::parse(in));
  }
};

/// Categorical labels of one record, one per slot.
struct Labels {
  std::string gfr, creat, donor_age, date;

  bool operator==(const Labels&) const = default;
};

inline Labels categorize_record(const ClinicalRecord& r, const Rules& rules) {
  return {categorize(r.gfr_value, rules.gfr),
          creat_trend(r.creat_prev, r.creat_curr, rules.creat_rel_threshold, rules.trend),
          categorize(r.donor_age_value, rules.donor_age), rules.exam_phrases.at(r.exam)};
}

}  // namespace medimp
