#include "medimp/promptgen.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

using namespace medimp;

namespace {

const AugmentationBank& bank() {
  static const AugmentationBank b = AugmentationBank::load(MEDIMP_DATA_DIR "/bank.json");
  return b;
}

ClinicalRecord record(double gfr = 72.4, std::optional<double> prev = 101.0, double curr = 104.2,
                      double age = 33.0, Exam exam = Exam::D30) {
  return {"S001", exam, gfr, prev, curr, age};
}

CategorizationRule three_bins() {
  return {"x",
          {{0, 30, "low"}, {30, 60, "medium"}, {60, std::numeric_limits<double>::infinity(), "high"}}};
}

ClinicalRecord random_record(Rng& rng, int i) {
  ClinicalRecord r;
  r.subject_id = "R" + std::to_string(i);
  r.exam = kAllExams[rng.index(4)];
  r.gfr_value = rng.uniform(1.0, 120.0);
  if (rng.bernoulli(0.8)) r.creat_prev = rng.uniform(50.0, 300.0);
  r.creat_curr = rng.uniform(50.0, 300.0);
  r.donor_age_value = rng.uniform(18.0, 80.0);
  return r;
}

}  // namespace

TEST(Categorize, ExamplesAndBoundary) {
  const auto rule = three_bins();
  EXPECT_EQ(categorize(70, rule), "high");
  EXPECT_EQ(categorize(60, rule), "high");
  EXPECT_EQ(categorize(59.999, rule), "medium");
  EXPECT_EQ(categorize(0, rule), "low");
  EXPECT_EQ(categorize(10, Rules{}.gfr), "very low");
}

TEST(Categorize, OutOfRangeNamesVariableAndValue) {
  try {
    categorize(-3.5, Rules{}.gfr);
    FAIL() << "expected out_of_range";
  } catch (const std::out_of_range& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("GFR"), std::string::npos) << msg;
    EXPECT_NE(msg.find("-3.5"), std::string::npos) << msg;
  }
}

TEST(Categorize, RuleValidation) {
  CategorizationRule gap{"x", {{0, 10, "a"}, {11, 20, "b"}}};
  EXPECT_THROW(gap.validate(), std::invalid_argument);
  CategorizationRule unlabeled{"x", {{0, 10, ""}}};
  EXPECT_THROW(unlabeled.validate(), std::invalid_argument);
  EXPECT_NO_THROW(three_bins().validate());
}

TEST(CreatTrend, Examples) {
  EXPECT_EQ(creat_trend(100.0, 105.0, 0.15), "stable");
  EXPECT_EQ(creat_trend(100.0, 130.0, 0.15), "unstable");
  EXPECT_EQ(creat_trend(std::nullopt, 120.0, 0.15), "stable");
  EXPECT_EQ(creat_trend(100.0, 80.0, 0.15), "unstable");
}

TEST(Rules, ShippedFileMatchesDefaults) {
  const Rules file = Rules::load(MEDIMP_DATA_DIR "/rules.json");
  const Rules def;
  ASSERT_EQ(file.gfr.bins.size(), def.gfr.bins.size());
  for (std::size_t i = 0; i < def.gfr.bins.size(); ++i) {
    EXPECT_EQ(file.gfr.bins[i].lo, def.gfr.bins[i].lo);
    EXPECT_EQ(file.gfr.bins[i].hi, def.gfr.bins[i].hi);
    EXPECT_EQ(file.gfr.bins[i].label, def.gfr.bins[i].label);
  }
  EXPECT_EQ(file.donor_age.bins.size(), def.donor_age.bins.size());
  EXPECT_EQ(file.creat_rel_threshold, def.creat_rel_threshold);
  EXPECT_EQ(file.exam_phrases, def.exam_phrases);
}

TEST(Rules, UnknownKeyRejected) {
  EXPECT_THROW(Rules::from_json(nlohmann::json{{"gfrr", {}}}), std::invalid_argument);
}

TEST(Render, Examples) {
  EXPECT_EQ(render("The age of the donor is {age}.", {{"age", "low"}}),
            "The age of the donor is low.");
  const auto& gfr_exam = bank().original().clauses[1].text;
  const auto text = render(gfr_exam, {{"gfr", "high"}, {"date", "one month"}});
  EXPECT_NE(text.find("at one month follow-up exam"), std::string::npos) << text;
}

TEST(Render, MissingSlotNamesPlaceholder) {
  try {
    render("GFR is {gfr}.", {{"age", "low"}});
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("{gfr}"), std::string::npos) << e.what();
  }
}

TEST(Bank, ShapeAndValidation) {
  const auto& b = bank();
  ASSERT_EQ(b.variants.size(), 17u);
  EXPECT_EQ(b.original().template_id, "template");
  std::set<std::string> ids;
  for (const auto& v : b.variants) {
    ids.insert(v.template_id);
    EXPECT_EQ(v.covered(), VariableSet::all()) << v.template_id;
  }
  EXPECT_EQ(ids.size(), b.variants.size());
}

TEST(Bank, RejectsPlaceholderTagMismatch) {
  auto j = nlohmann::json::parse(R"({"variants":[{"id":"t","clauses":[
      {"tags":["GFR"],"text":"GFR is {gfr} at {date}."}]}]})");
  EXPECT_THROW(AugmentationBank::from_json(j), std::invalid_argument);
  j = nlohmann::json::parse(R"({"variants":[{"id":"t","clauses":[
      {"tags":["GFR"],"text":"GFR is {egfr}."}]}]})");
  EXPECT_THROW(AugmentationBank::from_json(j), std::invalid_argument);
}

TEST(Bank, ReproducesReferenceVariantsByteExact) {
  std::ifstream in(MEDIMP_TEST_DATA_DIR "/reference_variants.txt");
  ASSERT_TRUE(in);
  std::vector<std::string> reference;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) reference.push_back(line);
  ASSERT_EQ(reference.size(), 16u);
  const SlotMap canonical{{"age", "{age}"}, {"gfr", "{gfr}"}, {"date", "{date}"}, {"adj", "{adj}"}};
  for (std::size_t i = 0; i < reference.size(); ++i)
    EXPECT_EQ(bank().variants[i + 1].render(VariableSet::all(), canonical), reference[i])
        << bank().variants[i + 1].template_id;
}

TEST(GeneratePrompts, ManualMatchesReferenceSentence) {
  auto r = record(72.4, 101.0, 104.2, 33.0, Exam::D30);
  const auto ps = generate_prompts(r, bank(), Rules{}, VariableSet::all(), PromptMode::Manual, 7);
  ASSERT_EQ(ps.size(), 1u);
  EXPECT_EQ(ps[0].template_id, "template");
  EXPECT_EQ(ps[0].text,
            "The age of the donor is low. The glomerular filtration rate (GFR) of the patient is "
            "high at one month follow-up exam. And the creatinine levels variation were stable.");
  EXPECT_EQ(ps[0].text.find('{'), std::string::npos);
}

TEST(GeneratePrompts, ManualIndependentOfSeed) {
  const auto r = record();
  for (VariableSet vars : {VariableSet::all(), VariableSet{Variable::GFR},
                           VariableSet{Variable::Creat, Variable::DonorAge}}) {
    const auto a = generate_prompts(r, bank(), Rules{}, vars, PromptMode::Manual, 1);
    const auto b = generate_prompts(r, bank(), Rules{}, vars, PromptMode::Manual, 999);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].text, b[0].text);
  }
}

TEST(GeneratePrompts, SingleVariableRestriction) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto r = random_record(rng, i);
    for (const auto& p : generate_prompts(r, bank(), Rules{}, {Variable::GFR},
                                          PromptMode::Augmented, 3, 4)) {
      std::string lower = p.text;
      std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
      EXPECT_EQ(lower.find("donor"), std::string::npos) << p.text;
      EXPECT_EQ(lower.find("creatinine"), std::string::npos) << p.text;
      EXPECT_EQ(lower.find("follow-up"), std::string::npos) << p.text;
      EXPECT_NE(p.text.find(p.labels.gfr), std::string::npos) << p.text;
    }
  }
}

TEST(GeneratePrompts, AugmentedDeterministicPerSeed) {
  const auto r = record();
  const auto a = generate_prompts(r, bank(), Rules{}, VariableSet::all(), PromptMode::Augmented, 5, 20);
  const auto b = generate_prompts(r, bank(), Rules{}, VariableSet::all(), PromptMode::Augmented, 5, 20);
  const auto c = generate_prompts(r, bank(), Rules{}, VariableSet::all(), PromptMode::Augmented, 6, 20);
  ASSERT_EQ(a.size(), 20u);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].text, b[i].text);
    EXPECT_EQ(a[i].template_id, b[i].template_id);
    differs |= a[i].template_id != c[i].template_id;
  }
  EXPECT_TRUE(differs);
}

TEST(GeneratePrompts, AugmentedSamplesAcrossVariants) {
  std::map<std::string, int> hits;
  const auto r = record();
  for (const auto& p :
       generate_prompts(r, bank(), Rules{}, VariableSet::all(), PromptMode::Augmented, 1, 17000))
    ++hits[p.template_id];
  ASSERT_EQ(hits.size(), 17u);
  for (const auto& [id, n] : hits) EXPECT_NEAR(n, 1000, 150) << id;
}

TEST(GeneratePrompts, EmptyVariableSetRejected) {
  EXPECT_THROW(generate_prompts(record(), bank(), Rules{}, VariableSet{}, PromptMode::Manual, 0),
               std::invalid_argument);
}

TEST(GeneratePrompts, LeakageGuardOverTenThousandPrompts) {
  Rng rng(2024);
  const std::array<VariableSet, 5> subsets{
      VariableSet::all(), VariableSet{Variable::GFR}, VariableSet{Variable::GFR, Variable::Exam},
      VariableSet{Variable::Creat}, VariableSet{Variable::DonorAge, Variable::Creat}};
  std::size_t n = 0, leaks = 0;
  for (int i = 0; n < 10000; ++i) {
    const auto r = random_record(rng, i);
    for (const auto& p : generate_prompts(r, bank(), Rules{}, subsets[i % subsets.size()],
                                          PromptMode::Augmented, 9, 10)) {
      ++n;
      leaks += leaks_raw_values(p.text, r);
      EXPECT_EQ(p.text.find('{'), std::string::npos);
    }
  }
  EXPECT_EQ(leaks, 0u);
}

TEST(GeneratePrompts, LeakDetectorFlagsNumerals) {
  const auto r = record(72.4);
  EXPECT_TRUE(leaks_raw_values("GFR is 72.4 today", r));
  EXPECT_TRUE(leaks_raw_values("GFR is 72", r));
  EXPECT_FALSE(leaks_raw_values("GFR is high", r));
}

TEST(GeneratePrompts, ScanningRecoversSlotLabels) {
  // Distinct marker labels make each slot's contents identifiable in the text.
  const SlotMap slots{{"age", "AGEMARK"}, {"gfr", "GFRMARK"}, {"date", "DATEMARK"}, {"adj", "ADJMARK"}};
  const std::regex marker("[A-Z]+MARK");
  for (const auto& v : bank().variants) {
    for (VariableSet vars : {VariableSet::all(), VariableSet{Variable::GFR, Variable::Exam},
                             VariableSet{Variable::DonorAge}}) {
      const auto text = v.render(vars, slots);
      std::multiset<std::string> found;
      for (auto it = std::sregex_iterator(text.begin(), text.end(), marker);
           it != std::sregex_iterator(); ++it)
        found.insert(it->str());
      std::multiset<std::string> expected;
      for (auto var : vars.members()) expected.insert(slots.at(std::string(slot_for(var))));
      EXPECT_EQ(found, expected) << v.template_id << ": " << text;
    }
  }
}

TEST(PromptsJsonl, RoundTrip) {
  const auto ps =
      generate_prompts(record(), bank(), Rules{}, VariableSet::all(), PromptMode::Augmented, 3, 5);
  std::stringstream ss;
  write_prompts_jsonl(ss, ps);
  const auto back = read_prompts_jsonl(ss);
  ASSERT_EQ(back.size(), ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    EXPECT_EQ(back[i].text, ps[i].text);
    EXPECT_EQ(back[i].labels, ps[i].labels);
    EXPECT_EQ(back[i].variables_used, ps[i].variables_used);
    EXPECT_EQ(back[i].exam, ps[i].exam);
  }
}

TEST(Vocab, SpecialsAndMembership) {
  const auto v = build_vocab(std::vector<std::string>{"GFR is low."});
  EXPECT_EQ(v.id("[PAD]"), 0);
  EXPECT_EQ(v.id("[UNK]"), 1);
  EXPECT_EQ(v.id("[CLS]"), 2);
  EXPECT_EQ(v.id("[SEP]"), 3);
  for (const char* t : {"gfr", "is", "low", "."}) EXPECT_TRUE(v.contains(t)) << t;
  EXPECT_EQ(v.size(), 8u);
}

TEST(Vocab, DeterministicUnderReordering) {
  const auto a = build_vocab(std::vector<std::string>{"b a a", "c b ."});
  const auto b = build_vocab(std::vector<std::string>{"a . b", "c a b"});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.token(4), "a");
  EXPECT_EQ(a.token(5), "b");
  EXPECT_EQ(a.token(6), ".");
  EXPECT_EQ(a.token(7), "c");
}

TEST(Vocab, JsonRoundTrip) {
  const auto v = build_vocab(std::vector<std::string>{"the gfr, it is high"});
  EXPECT_EQ(Vocabulary::from_json(v.to_json()), v);
  EXPECT_THROW(Vocabulary::from_json(nlohmann::json{"a", "b"}), std::invalid_argument);
}

TEST(Tokenize, Examples) {
  const auto v = build_vocab(std::vector<std::string>{"gfr is low"});
  const auto t = tokenize("gfr is low", v, 8);
  const std::vector<std::int32_t> ids{kClsId, v.id("gfr"), v.id("is"), v.id("low"), kSepId,
                                      kPadId, kPadId, kPadId};
  EXPECT_EQ(t.ids, ids);
  EXPECT_EQ(t.mask, (std::vector<bool>{1, 1, 1, 1, 1, 0, 0, 0}));

  EXPECT_EQ(tokenize("gfr is unknownword", v, 8).ids[3], kUnkId);

  const auto cut = tokenize("gfr is low low low low low", v, 5);
  EXPECT_EQ(cut.ids.size(), 5u);
  EXPECT_EQ(cut.ids.front(), kClsId);
  EXPECT_EQ(cut.ids.back(), kSepId);
  EXPECT_EQ(cut.content_length(), 5u);
  EXPECT_THROW(tokenize("x", v, 2), std::invalid_argument);
}

TEST(Tokenize, DetokenizeRoundTripOnBankPrompts) {
  Rng rng(3);
  std::vector<Prompt> corpus;
  for (int i = 0; i < 50; ++i) {
    auto ps = generate_prompts(random_record(rng, i), bank(), Rules{}, VariableSet::all(),
                               PromptMode::Augmented, 1, 3);
    corpus.insert(corpus.end(), ps.begin(), ps.end());
  }
  const auto vocab = build_vocab(corpus);
  std::size_t longest = 0;
  for (const auto& p : corpus) {
    const auto words = word_tokens(p.text);
    longest = std::max(longest, words.size());
    const auto t = tokenize(p.text, vocab, 64);
    EXPECT_EQ(detokenize(t, vocab), words);
    for (std::size_t i = 0; i < t.ids.size(); ++i) EXPECT_EQ(t.mask[i], t.ids[i] != kPadId);
  }
  EXPECT_LE(longest + 2, 64u);
}
