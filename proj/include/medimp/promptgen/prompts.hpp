#pragma once

#include "medimp/numerics/random.hpp"
#include "medimp/promptgen/rules.hpp"

#include <json.hpp>

#include <cctype>
#include <fstream>
#include <map>
#include <string>

namespace medimp {

using SlotMap = std::map<std::string, std::string>;

/// Substitutes every {name} placeholder. Throws naming the first unfilled placeholder.
inline std::string render(std::string_view text, const SlotMap& slots) {
  std::string out;
  out.reserve(text.size() + 32);
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const auto close = text.find('}', i + 1);
      if (close == std::string_view::npos)
        throw std::invalid_argument("unterminated placeholder in template: " + std::string(text));
      const std::string name(text.substr(i + 1, close - i - 1));
      auto it = slots.find(name);
      if (it == slots.end())
        throw std::invalid_argument("no value for placeholder {" + name + "}");
      out += it->second;
      i = close + 1;
    } else {
      out += text[i++];
    }
  }
  return out;
}

/// Placeholder names appearing in a template text, in order.
inline std::vector<std::string> placeholders(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = text.find('{'); i != std::string_view::npos; i = text.find('{', i + 1)) {
    const auto close = text.find('}', i + 1);
    if (close == std::string_view::npos) break;
    out.emplace_back(text.substr(i + 1, close - i - 1));
  }
  return out;
}

/// Slot name carrying each variable's label.
inline constexpr std::string_view slot_for(Variable v) {
  switch (v) {
    case Variable::GFR: return "gfr";
    case Variable::Exam: return "date";
    case Variable::Creat: return "adj";
    case Variable::DonorAge: return "age";
  }
  return "";
}

struct Clause {
  VariableSet tags;
  std::string text;
};

/// One template variant decomposed into variable-tagged clauses.
struct ClauseTemplate {
  std::string template_id;
  std::vector<Clause> clauses;

  [[nodiscard]] VariableSet covered() const {
    VariableSet s;
    for (const auto& c : clauses) s |= c.tags;
    return s;
  }

  /// Clauses expressing exactly `vars`: in order, a clause is taken when its tags
  /// lie inside `vars` and none of them is already expressed. nullopt when some
  /// variable cannot be expressed by this variant.
  [[nodiscard]] std::optional<std::vector<const Clause*>> select(VariableSet vars) const {
    std::vector<const Clause*> picked;
    VariableSet done;
    for (const auto& c : clauses) {
      if (c.tags.subset_of(vars) && !c.tags.intersects(done)) {
        picked.push_back(&c);
        done |= c.tags;
      }
    }
    if (!(done == vars)) return std::nullopt;
    return picked;
  }

  [[nodiscard]] std::string render(VariableSet vars, const SlotMap& slots) const {
    auto picked = select(vars);
    if (!picked)
      throw std::invalid_argument("template '" + template_id + "' cannot express variables {" +
                                  [&] {
                                    std::string s;
                                    for (auto& n : vars.names()) s += (s.empty() ? "" : ",") + n;
                                    return s;
                                  }() + "}");
    std::string out;
    for (const auto* c : *picked) {
      if (!out.empty()) out += ' ';
      out += medimp::render(c->text, slots);
    }
    return out;
  }

  void validate() const {
    for (const auto& c : clauses) {
      VariableSet from_text;
      for (const auto& p : placeholders(c.text)) {
        bool known = false;
        for (auto v : kAllVariables)
          if (slot_for(v) == p) {
            from_text.insert(v);
            known = true;
          }
        if (!known)
          throw std::invalid_argument("template '" + template_id + "' uses unknown placeholder {" +
                                      p + "}");
      }
      if (!(from_text == c.tags))
        throw std::invalid_argument("template '" + template_id +
                                    "' clause placeholders do not match its tags: " + c.text);
    }
  }
};

/// The original template (first entry) followed by its augmentation variants.
struct AugmentationBank {
  std::vector<ClauseTemplate> variants;

  [[nodiscard]] const ClauseTemplate& original() const { return variants.at(0); }

  void validate() const {
    if (variants.empty()) throw std::invalid_argument("augmentation bank is empty");
    const auto full = original().covered();
    for (const auto& v : variants) {
      v.validate();
      if (!v.covered().subset_of(full))
        throw std::invalid_argument("variant '" + v.template_id +
                                    "' covers variables the original does not");
    }
  }

  static AugmentationBank from_json(const nlohmann::json& j) {
    AugmentationBank bank;
    for (const auto& jv : j.at("variants")) {
      ClauseTemplate t;
      t.template_id = jv.at("id").get<std::string>();
      for (const auto& jc : jv.at("clauses")) {
        Clause c;
        c.tags = VariableSet::from_names(jc.at("tags").get<std::vector<std::string>>());
        c.text = jc.at("text").get<std::string>();
        t.clauses.push_back(std::move(c));
      }
      bank.variants.push_back(std::move(t));
    }
    bank.validate();
    return bank;
  }

  static AugmentationBank load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open augmentation bank '" + path + "'");
    return from_json(nlohmann::json::parse(in));
  }
};

inline SlotMap slots_from(const Labels& l) {
  return {{"gfr", l.gfr}, {"adj", l.creat}, {"age", l.donor_age}, {"date", l.date}};
}

struct Prompt {
  std::string subject_id;
  Exam exam = Exam::D15;
  VariableSet variables_used;
  std::string template_id;
  std::string text;
  Labels labels;
};

enum class PromptMode { Augmented, Manual };

inline PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "augmented") return PromptMode::Augmented;
  if (s == "manual") return PromptMode::Manual;
  throw std::invalid_argument("unknown prompt mode '" + std::string(s) + "'");
}

/// 64-bit FNV-1a, used to key random streams by subject id.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Prompts for one record. Manual mode yields the original template once;
/// augmented mode draws `count` variants uniformly among those able to express
/// `variables`, keyed by (seed, subject, exam).
inline std::vector<Prompt> generate_prompts(const ClinicalRecord& record,
                                            const AugmentationBank& bank, const Rules& rules,
                                            VariableSet variables, PromptMode mode,
                                            std::uint64_t seed, std::size_t count = 1) {
  if (variables.empty()) throw std::invalid_argument("generate_prompts: empty variable set");
  const Labels labels = categorize_record(record, rules);
  const SlotMap slots = slots_from(labels);
  auto make = [&](const ClauseTemplate& t) {
    return Prompt{record.subject_id, record.exam, variables, t.template_id,
                  t.render(variables, slots), labels};
  };
  if (mode == PromptMode::Manual) return {make(bank.original())};

  std::vector<const ClauseTemplate*> usable;
  for (const auto& v : bank.variants)
    if (v.select(variables)) usable.push_back(&v);
  if (usable.empty())
    throw std::invalid_argument("no bank variant can express the requested variables");
  Rng rng({seed, fnv1a(record.subject_id), exam_index(record.exam), 0x70726f6d7074ULL});
  std::vector<Prompt> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make(*usable[rng.index(usable.size())]));
  return out;
}

/// Every clause of the bank rendered with every label the rules can produce;
/// a vocabulary built from it covers any generated prompt.
inline std::vector<std::string> bank_corpus(const AugmentationBank& bank, const Rules& rules) {
  std::vector<std::string> out;
  for (const auto& v : bank.variants)
    for (const auto& cl : v.clauses)
      for (const auto& g : rules.gfr.bins)
        for (const auto& a : rules.donor_age.bins)
          for (const auto& [e, phrase] : rules.exam_phrases)
            for (const auto* adj : {&rules.trend.stable, &rules.trend.unstable})
              out.push_back(render(cl.text, {{"gfr", g.label}, {"age", a.label}, {"date", phrase},
                                             {"adj", *adj}}));
  return out;
}

/// True when any raw numeric value of the record appears in the text. Values
/// are checked in integer and one-decimal renderings, and any digit counts.
inline bool leaks_raw_values(std::string_view text, const ClinicalRecord& r) {
  if (std::any_of(text.begin(), text.end(), [](unsigned char c) { return std::isdigit(c); }))
    return true;
  std::vector<double> values{r.gfr_value, r.creat_curr, r.donor_age_value};
  if (r.creat_prev) values.push_back(*r.creat_prev);
  for (double v : values) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    if (text.find(buf) != std::string_view::npos) return true;
    std::snprintf(buf, sizeof buf, "%.1f", v);
    if (text.find(buf) != std::string_view::npos) return true;
  }
  return false;
}

inline nlohmann::json to_json(const Prompt& p) {
  return {{"subject_id", p.subject_id},
          {"exam", std::string(exam_name(p.exam))},
          {"variables_used", p.variables_used.names()},
          {"template_id", p.template_id},
          {"text", p.text},
          {"labels",
           {{"gfr", p.labels.gfr},
            {"creat", p.labels.creat},
            {"donor_age", p.labels.donor_age},
            {"date", p.labels.date}}}};
}

inline Prompt prompt_from_json(const nlohmann::json& j) {
  Prompt p;
  p.subject_id = j.at("subject_id").get<std::string>();
  p.exam = parse_exam(j.at("exam").get<std::string>());
  p.variables_used = VariableSet::from_names(j.at("variables_used").get<std::vector<std::string>>());
  p.template_id = j.at("template_id").get<std::string>();
  p.text = j.at("text").get<std::string>();
  const auto& l = j.at("labels");
  p.labels = {l.at("gfr").get<std::string>(), l.at("creat").get<std::string>(),
              l.at("donor_age").get<std::string>(), l.at("date").get<std::string>()};
  return p;
}

inline void write_prompts_jsonl(std::ostream& out, const std::vector<Prompt>& prompts) {
  for (const auto& p : prompts) out << to_json(p).dump() << '\n';
}

inline std::vector<Prompt> read_prompts_jsonl(std::istream& in) {
  std::vector<Prompt> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(prompt_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("prompt JSONL line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace medimp
