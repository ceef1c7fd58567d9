#pragma once

#include "medimp/contrastive/model.hpp"
#include "medimp/imaging/augment.hpp"
#include "medimp/synth/cohort.hpp"

#include <fstream>
#include <ostream>

namespace medimp {

struct EmbeddingRow {
  std::string subject_id;
  Exam exam = Exam::D15;
  bool augmented = false;
  std::string gfr, creat, donor_age;  // category labels; the exam column doubles as the date label
  std::vector<double> values;
  bool operator==(const EmbeddingRow&) const = default;
};

inline constexpr std::size_t kEmbeddingMetaColumns = 6;

/// One row per present exam (cohort order), each followed by `augmented_per_exam`
/// augmented copies. Augmentations are keyed by (seed, exam counter, copy).
inline std::vector<EmbeddingRow> export_embeddings(const Model<float>& m, const Cohort& cohort,
                                                   const Rules& rules, std::size_t augmented_per_exam,
                                                   std::uint64_t seed) {
  std::vector<EmbeddingRow> rows;
  std::size_t counter = 0;
  auto embed = [&](const Volume& v) {
    const auto e = encode_image(v, m.params, m.image);
    return std::vector<double>(e.data().begin(), e.data().end());
  };
  for (std::size_t i = 0; i < cohort.subjects.size(); ++i)
    for (auto e : cohort.subjects[i].exams()) {
      const auto labels = categorize_record(record_for(cohort.subjects[i], e), rules);
      const auto vol = normalize_volume(cohort.volume(i, e));
      EmbeddingRow base{cohort.subjects[i].subject_id, e, false, labels.gfr, labels.creat, labels.donor_age, embed(vol)};
      rows.push_back(base);
      for (std::size_t k = 0; k < augmented_per_exam; ++k) {
        Rng key({seed, counter, k, 0x656d6264ULL});
        auto row = base;
        row.augmented = true;
        row.values = embed(apply_augmentation(vol, sample_augmentation_params(key.next(), counter, vol)));
        rows.push_back(std::move(row));
      }
      ++counter;
    }
  return rows;
}

inline std::string embeddings_header(std::size_t d) {
  std::string h = "subject_id,exam,is_augmented,gfr,creat,donor_age";
  for (std::size_t k = 0; k < d; ++k) h += ",e" + std::to_string(k);
  return h;
}

inline void write_embeddings_csv(std::ostream& out, const std::vector<EmbeddingRow>& rows) {
  const std::size_t d = rows.empty() ? 0 : rows.front().values.size();
  out << embeddings_header(d) << "\n";
  char buf[32];
  for (const auto& r : rows) {
    if (r.values.size() != d) throw std::invalid_argument("write_embeddings_csv: ragged embedding rows");
    out << r.subject_id << ',' << exam_name(r.exam) << ',' << (r.augmented ? "true" : "false") << ','
        << r.gfr << ',' << r.creat << ',' << r.donor_age;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out << buf;
    }
    out << "\n";
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<EmbeddingRow> read_embeddings_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("embeddings CSV: empty file");
  const auto header = split_csv_line(line);
  if (header.size() < kEmbeddingMetaColumns ||
      embeddings_header(header.size() - kEmbeddingMetaColumns) != line)
    throw std::runtime_error("embeddings CSV: unexpected header");
  std::vector<EmbeddingRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("embeddings CSV line " + std::to_string(lineno) + ": " + std::to_string(f.size()) +
                               " columns, expected " + std::to_string(header.size()));
    EmbeddingRow r{f[0], parse_exam(f[1]), f[2] == "true", f[3], f[4], f[5], {}};
    if (f[2] != "true" && f[2] != "false")
      throw std::runtime_error("embeddings CSV line " + std::to_string(lineno) + ": bad is_augmented '" + f[2] + "'");
    for (std::size_t k = kEmbeddingMetaColumns; k < f.size(); ++k) r.values.push_back(std::stof(f[k]));  // values are float32 embeddings
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace medimp
