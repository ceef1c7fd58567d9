#pragma once

#include "medimp/imaging/volume.hpp"
#include "medimp/numerics/random.hpp"
#include "medimp/promptgen/prompts.hpp"

#include <json.hpp>

#include <numbers>
#include <set>

namespace medimp {

struct CreatSample {
  double day = 0;
  double value = 0;  // µmol/L
  bool operator==(const CreatSample&) const = default;
};

struct SubjectProfile {
  std::string subject_id;
  double h = 0;  // latent health in [0, 1]
  double donor_age = 0;
  std::array<bool, 4> present{true, true, true, true};
  std::array<double, 4> gfr{};  // per exam, mL/min
  std::vector<CreatSample> creat_series;

  [[nodiscard]] bool has(Exam e) const { return present[exam_index(e)]; }
  [[nodiscard]] std::vector<Exam> exams() const {
    std::vector<Exam> out;
    for (auto e : kAllExams)
      if (has(e)) out.push_back(e);
    return out;
  }
  bool operator==(const SubjectProfile&) const = default;
};

/// Generator knobs. GFR = intercept + slope·h + noise with the noise clipped to
/// ±3σ, so h = 1 always lands at or above intercept + slope − 3σ.
struct GeneratorConfig {
  double gfr_intercept = 10, gfr_slope = 70, gfr_noise = 3;
  double creat_base = 170, creat_h_slope = 120, creat_drift_per_year = 10;
  double creat_subject_sd = 8, creat_noise = 5;
  double creat_spike_max = 80, creat_spike_days = 20;
  double creat_interval_days = 30, creat_jitter_days = 5, creat_years = 5;
  double donor_age_min = 20, donor_age_max = 75;
  double missing_rate = 0.1;
  std::array<std::size_t, 3> extents{32, 32, 16};
  double background = 0.2, noise_amplitude = 0.05;
  double texture_amplitude = 0.15;
  double ellipsoid_base_intensity = 0.35, ellipsoid_intensity_slope = 0.5;
  double ellipsoid_base_radius = 0.22, ellipsoid_radius_slope = 0.16;  // fractions of extent
  double signal_strength = 1.0;  // 0 removes the h dependence and the exam texture

  void validate() const {
    if (!(missing_rate >= 0 && missing_rate < 1))
      throw std::invalid_argument("generator: missing_rate must lie in [0, 1)");
    if (!(signal_strength >= 0 && signal_strength <= 1))
      throw std::invalid_argument("generator: signal_strength must lie in [0, 1]");
    if (gfr_intercept - 3 * gfr_noise <= 0)
      throw std::invalid_argument("generator: GFR could become non-positive");
    if (creat_base - creat_h_slope - 3 * creat_subject_sd - 3 * creat_noise <= 0)
      throw std::invalid_argument("generator: creatinine could become non-positive");
    if (!(creat_jitter_days * 2 < creat_interval_days))
      throw std::invalid_argument("generator: creatinine jitter must be under half the interval");
    for (auto e : extents)
      if (!e) throw std::invalid_argument("generator: zero volume extent");
  }
};

inline std::string subject_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%03zu", i + 1);
  return buf;
}

/// Optionally forces h (tests use h = 0 or 1 to pin the extremes).
inline SubjectProfile gen_record(std::uint64_t seed, const std::string& subject_id,
                                 const GeneratorConfig& c, std::optional<double> forced_h = {}) {
  c.validate();
  Rng rng({seed, fnv1a(subject_id), 0x7265636f7264ULL});
  SubjectProfile p;
  p.subject_id = subject_id;
  p.h = rng.uniform();
  if (forced_h) p.h = std::clamp(*forced_h, 0.0, 1.0);
  p.donor_age = rng.uniform(c.donor_age_min, c.donor_age_max);
  for (auto& present : p.present) present = !rng.bernoulli(c.missing_rate);
  if (std::none_of(p.present.begin(), p.present.end(), [](bool b) { return b; }))
    p.present[rng.index(4)] = true;
  for (auto& g : p.gfr)
    g = c.gfr_intercept + c.gfr_slope * p.h +
        std::clamp(rng.normal(0, c.gfr_noise), -3 * c.gfr_noise, 3 * c.gfr_noise);
  for (std::size_t i = 0; i < 4; ++i)
    if (!p.present[i]) p.gfr[i] = 0;

  const double offset = std::clamp(rng.normal(0, c.creat_subject_sd), -3 * c.creat_subject_sd,
                                   3 * c.creat_subject_sd);
  const double spike = rng.uniform(0, c.creat_spike_max);
  const double drift = c.creat_drift_per_year * (1 - p.h);
  const double last = 365.0 * c.creat_years;
  for (double day = 5; day <= last; day += c.creat_interval_days) {
    const double d = day + rng.uniform(-c.creat_jitter_days, c.creat_jitter_days);
    const double noise = std::clamp(rng.normal(0, c.creat_noise), -3 * c.creat_noise, 3 * c.creat_noise);
    const double v = c.creat_base - c.creat_h_slope * p.h + offset + drift * d / 365.0 +
                     spike * std::exp(-d / c.creat_spike_days) + noise;
    p.creat_series.push_back({d, v});
  }
  return p;
}

/// Creatinine sample nearest to a given day.
inline double creat_near(const SubjectProfile& p, double day) {
  if (p.creat_series.empty()) throw std::invalid_argument(p.subject_id + ": empty creatinine series");
  const auto best = std::min_element(p.creat_series.begin(), p.creat_series.end(),
                                     [day](const CreatSample& a, const CreatSample& b) {
                                       return std::abs(a.day - day) < std::abs(b.day - day);
                                     });
  return best->value;
}

/// Tabular record of one present exam; the previous creatinine is taken at the
/// previous present exam.
inline ClinicalRecord record_for(const SubjectProfile& p, Exam e) {
  if (!p.has(e)) throw std::invalid_argument(p.subject_id + " has no exam " + std::string(exam_name(e)));
  ClinicalRecord r;
  r.subject_id = p.subject_id;
  r.exam = e;
  r.gfr_value = p.gfr[exam_index(e)];
  r.creat_curr = creat_near(p, exam_day(e));
  for (std::size_t i = exam_index(e); i-- > 0;)
    if (p.present[i]) {
      r.creat_prev = creat_near(p, exam_day(kAllExams[i]));
      break;
    }
  r.donor_age_value = p.donor_age;
  r.validate();
  return r;
}

struct PhantomGeometry {
  std::array<double, 3> centre{}, radii{};  // voxels, (x, y, z)
  double intensity = 0;
};

inline PhantomGeometry phantom_geometry(const SubjectProfile& p, Exam e, std::uint64_t seed,
                                        const GeneratorConfig& c) {
  Rng rng({seed, fnv1a(p.subject_id), exam_index(e), 0x67656f6dULL});
  const double h = 0.5 + c.signal_strength * (p.h - 0.5);
  PhantomGeometry g;
  g.intensity = c.ellipsoid_base_intensity + c.ellipsoid_intensity_slope * h;
  for (int a = 0; a < 3; ++a) {
    const double ext = double(c.extents[a]);
    g.centre[a] = (ext - 1) / 2 + rng.uniform(-1.0, 1.0);
    g.radii[a] = (c.ellipsoid_base_radius + c.ellipsoid_radius_slope * h) * ext;
  }
  return g;
}

inline bool inside(const PhantomGeometry& g, double x, double y, double z) {
  const double dx = (x - g.centre[0]) / g.radii[0], dy = (y - g.centre[1]) / g.radii[1],
               dz = (z - g.centre[2]) / g.radii[2];
  return dx * dx + dy * dy + dz * dz <= 1.0;
}

/// Raw (unnormalized) phantom: noisy background, an exam-dependent sinusoid along x
/// with exam_index + 1 periods, and a centred ellipsoid whose size and brightness grow with h.
inline Volume gen_volume(const SubjectProfile& p, Exam e, std::uint64_t seed,
                         const GeneratorConfig& c) {
  if (!p.has(e))
    throw std::invalid_argument(p.subject_id + ": exam " + std::string(exam_name(e)) + " is absent");
  const auto geo = phantom_geometry(p, e, seed, c);
  Rng noise({seed, fnv1a(p.subject_id), exam_index(e), 0x6e6f697365ULL});
  Volume v(c.extents[0], c.extents[1], c.extents[2]);
  const double periods = double(exam_index(e) + 1);
  const double tex = c.texture_amplitude * c.signal_strength;
  for (std::size_t z = 0; z < v.nz; ++z)
    for (std::size_t y = 0; y < v.ny; ++y)
      for (std::size_t x = 0; x < v.nx; ++x) {
        double val = c.background +
                     tex * std::sin(2 * std::numbers::pi * periods * double(x) / double(v.nx));
        if (inside(geo, double(x), double(y), double(z))) val += geo.intensity;
        if (c.noise_amplitude > 0) val += c.noise_amplitude * noise.normal();
        v.at(x, y, z) = static_cast<float>(val);
      }
  return v;
}

/// Mean voxel value inside the phantom's ellipsoid.
inline double ellipsoid_mean(const Volume& v, const PhantomGeometry& g) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t z = 0; z < v.nz; ++z)
    for (std::size_t y = 0; y < v.ny; ++y)
      for (std::size_t x = 0; x < v.nx; ++x)
        if (inside(g, double(x), double(y), double(z))) {
          s += v.at(x, y, z);
          ++n;
        }
  return n ? s / double(n) : 0.0;
}

enum class Split { Train, Val, Test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

struct Cohort {
  std::uint64_t seed = 0;
  GeneratorConfig config;
  std::vector<SubjectProfile> subjects;
  std::vector<Split> split;  // parallel to subjects
  std::optional<std::filesystem::path> volume_root;  // set: read volumes from disk instead of regenerating

  [[nodiscard]] std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < subjects.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  [[nodiscard]] std::string volume_stem(std::size_t subject, Exam e) const {
    return "volumes/" + subjects.at(subject).subject_id + "_" + std::string(exam_name(e));
  }

  [[nodiscard]] Volume volume(std::size_t subject, Exam e) const {
    if (volume_root) {
      if (!subjects.at(subject).has(e))
        throw std::invalid_argument(subjects[subject].subject_id + ": exam " + std::string(exam_name(e)) + " is absent");
      return load_volume(*volume_root / volume_stem(subject, e));
    }
    return gen_volume(subjects.at(subject), e, seed, config);
  }

  [[nodiscard]] std::size_t exam_count() const {
    std::size_t n = 0;
    for (const auto& s : subjects) n += s.exams().size();
    return n;
  }
};

/// Split sizes from fractions by largest remainder, so they always sum to n.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || *std::min_element(fractions.begin(), fractions.end()) < 0)
    throw std::invalid_argument("split fractions must be nonnegative and sum to 1");
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fractions[i] * double(n);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - double(out[i]);
    used += out[i];
  }
  while (used < n) {
    const auto i = std::max_element(rem.begin(), rem.end()) - rem.begin();
    ++out[i];
    rem[i] = -1;
    ++used;
  }
  return out;
}

inline Cohort gen_cohort(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed,
                         const GeneratorConfig& c) {
  if (n < 3) throw std::invalid_argument("gen_cohort: need at least one subject per split, got " +
                                         std::to_string(n));
  c.validate();
  Cohort cohort;
  cohort.seed = seed;
  cohort.config = c;
  for (std::size_t i = 0; i < n; ++i) cohort.subjects.push_back(gen_record(seed, subject_name(i), c));
  const auto sizes = split_sizes(n, fractions);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng({seed, 0x73706c6974ULL});
  rng.shuffle(order);
  cohort.split.assign(n, Split::Train);
  for (std::size_t k = 0; k < n; ++k)
    cohort.split[order[k]] = k < sizes[0] ? Split::Train : k < sizes[0] + sizes[1] ? Split::Val : Split::Test;
  return cohort;
}

inline const std::array<double, 3> kDefaultSplitFractions{72.0 / 105, 5.0 / 105, 28.0 / 105};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"gfr_intercept", c.gfr_intercept},
       {"gfr_slope", c.gfr_slope},
       {"gfr_noise", c.gfr_noise},
       {"creat_base", c.creat_base},
       {"creat_h_slope", c.creat_h_slope},
       {"creat_drift_per_year", c.creat_drift_per_year},
       {"creat_subject_sd", c.creat_subject_sd},
       {"creat_noise", c.creat_noise},
       {"creat_spike_max", c.creat_spike_max},
       {"creat_spike_days", c.creat_spike_days},
       {"creat_interval_days", c.creat_interval_days},
       {"creat_jitter_days", c.creat_jitter_days},
       {"creat_years", c.creat_years},
       {"donor_age_min", c.donor_age_min},
       {"donor_age_max", c.donor_age_max},
       {"missing_rate", c.missing_rate},
       {"extents", c.extents},
       {"background", c.background},
       {"noise_amplitude", c.noise_amplitude},
       {"texture_amplitude", c.texture_amplitude},
       {"ellipsoid_base_intensity", c.ellipsoid_base_intensity},
       {"ellipsoid_intensity_slope", c.ellipsoid_intensity_slope},
       {"ellipsoid_base_radius", c.ellipsoid_base_radius},
       {"ellipsoid_radius_slope", c.ellipsoid_radius_slope},
       {"signal_strength", c.signal_strength}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  const nlohmann::json defaults = GeneratorConfig{};
  for (const auto& [k, _] : j.items())
    if (!defaults.contains(k)) throw std::invalid_argument("generator config: unknown key '" + k + "'");
  nlohmann::json merged = defaults;
  merged.update(j);
  c.gfr_intercept = merged["gfr_intercept"];
  c.gfr_slope = merged["gfr_slope"];
  c.gfr_noise = merged["gfr_noise"];
  c.creat_base = merged["creat_base"];
  c.creat_h_slope = merged["creat_h_slope"];
  c.creat_drift_per_year = merged["creat_drift_per_year"];
  c.creat_subject_sd = merged["creat_subject_sd"];
  c.creat_noise = merged["creat_noise"];
  c.creat_spike_max = merged["creat_spike_max"];
  c.creat_spike_days = merged["creat_spike_days"];
  c.creat_interval_days = merged["creat_interval_days"];
  c.creat_jitter_days = merged["creat_jitter_days"];
  c.creat_years = merged["creat_years"];
  c.donor_age_min = merged["donor_age_min"];
  c.donor_age_max = merged["donor_age_max"];
  c.missing_rate = merged["missing_rate"];
  c.extents = merged["extents"].get<std::array<std::size_t, 3>>();
  c.background = merged["background"];
  c.noise_amplitude = merged["noise_amplitude"];
  c.texture_amplitude = merged["texture_amplitude"];
  c.ellipsoid_base_intensity = merged["ellipsoid_base_intensity"];
  c.ellipsoid_intensity_slope = merged["ellipsoid_intensity_slope"];
  c.ellipsoid_base_radius = merged["ellipsoid_base_radius"];
  c.ellipsoid_radius_slope = merged["ellipsoid_radius_slope"];
  c.signal_strength = merged["signal_strength"];
  c.validate();
}

/// Manifest with subjects, exams, splits and relative volume paths (`volumes/<id>_<exam>`).
inline nlohmann::json cohort_manifest(const Cohort& c) {
  nlohmann::json subjects = nlohmann::json::array();
  for (std::size_t i = 0; i < c.subjects.size(); ++i) {
    const auto& s = c.subjects[i];
    nlohmann::json exams = nlohmann::json::array();
    for (auto e : s.exams()) {
      const auto r = record_for(s, e);
      exams.push_back({{"exam", std::string(exam_name(e))},
                       {"gfr", r.gfr_value},
                       {"creat_prev", r.creat_prev ? nlohmann::json(*r.creat_prev) : nlohmann::json()},
                       {"creat_curr", r.creat_curr},
                       {"volume", c.volume_stem(i, e)}});
    }
    nlohmann::json series = nlohmann::json::array();
    for (const auto& cs : s.creat_series) series.push_back({cs.day, cs.value});
    subjects.push_back({{"subject_id", s.subject_id},
                        {"split", std::string(split_name(c.split[i]))},
                        {"h", s.h},
                        {"donor_age", s.donor_age},
                        {"exams", exams},
                        {"creat_series", series}});
  }
  return {{"version", 1}, {"seed", c.seed}, {"generator", c.config}, {"subjects", subjects}};
}

inline Cohort cohort_from_manifest(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1)
    throw std::invalid_argument("cohort manifest: unsupported version " + j.at("version").dump());
  Cohort c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.config = j.at("generator").get<GeneratorConfig>();
  for (const auto& js : j.at("subjects")) {
    SubjectProfile s;
    s.subject_id = js.at("subject_id").get<std::string>();
    s.h = js.at("h").get<double>();
    s.donor_age = js.at("donor_age").get<double>();
    s.present = {false, false, false, false};
    for (const auto& je : js.at("exams")) {
      const auto e = parse_exam(je.at("exam").get<std::string>());
      s.present[exam_index(e)] = true;
      s.gfr[exam_index(e)] = je.at("gfr").get<double>();
    }
    for (const auto& cs : js.at("creat_series"))
      s.creat_series.push_back({cs.at(0).get<double>(), cs.at(1).get<double>()});
    c.subjects.push_back(std::move(s));
    c.split.push_back(parse_split(js.at("split").get<std::string>()));
  }
  return c;
}

}  // namespace medimp
