#pragma once

#include "medimp/promptgen/prompts.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace medimp {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;

/// Lowercased word tokens; whitespace separates, each punctuation character is its own token.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  Vocabulary() : tokens_{"[PAD]", "[UNK]", "[CLS]", "[SEP]"} { reindex(); }

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    static const std::array<std::string_view, 4> specials{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    if (tokens_.size() < 4 || !std::equal(specials.begin(), specials.end(), tokens_.begin()))
      throw std::invalid_argument("vocabulary must start with [PAD] [UNK] [CLS] [SEP]");
    reindex();
    if (index_.size() != tokens_.size())
      throw std::invalid_argument("vocabulary has duplicate tokens");
  }

  [[nodiscard]] std::size_t size() const { return tokens_.size(); }
  [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }
  [[nodiscard]] bool contains(const std::string& tok) const { return index_.count(tok) > 0; }

  [[nodiscard]] std::int32_t id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnkId : it->second;
  }

  [[nodiscard]] const std::string& token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(tokens_.size()));
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

  [[nodiscard]] nlohmann::json to_json() const { return tokens_; }
  static Vocabulary from_json(const nlohmann::json& j) {
    return Vocabulary(j.get<std::vector<std::string>>());
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      index_.emplace(tokens_[i], static_cast<std::int32_t>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Specials first, then tokens by descending frequency, ties broken lexicographically.
inline Vocabulary build_vocab(const std::vector<std::string>& texts) {
  if (texts.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& w : word_tokens(t)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  for (auto& [w, _] : sorted)
    if (std::find(tokens.begin(), tokens.begin() + 4, w) == tokens.begin() + 4)
      tokens.push_back(w);
  return Vocabulary(std::move(tokens));
}

inline Vocabulary build_vocab(const std::vector<Prompt>& corpus) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& p : corpus) texts.push_back(p.text);
  return build_vocab(texts);
}

struct TokenizedText {
  std::vector<std::int32_t> ids;
  std::vector<bool> mask;

  [[nodiscard]] std::size_t length() const { return ids.size(); }
  [[nodiscard]] std::size_t content_length() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  }
  bool operator==(const TokenizedText&) const = default;
};

inline TokenizedText tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("tokenize: max_len must be at least 3");
  const auto words = word_tokens(text);
  const std::size_t keep = std::min(words.size(), max_len - 2);
  TokenizedText t;
  t.ids.reserve(max_len);
  t.ids.push_back(kClsId);
  for (std::size_t i = 0; i < keep; ++i) t.ids.push_back(vocab.id(words[i]));
  t.ids.push_back(kSepId);
  t.mask.assign(t.ids.size(), true);
  t.ids.resize(max_len, kPadId);
  t.mask.resize(max_len, false);
  return t;
}

/// Content tokens between [CLS] and [SEP], padding dropped.
inline std::vector<std::string> detokenize(const TokenizedText& t, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    if (!t.mask[i]) continue;
    const auto id = t.ids[i];
    if (id == kClsId || id == kSepId || id == kPadId) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace medimp
