#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace medimp {

/// Follow-up imaging timepoints, in chronological order.
enum class Exam : std::uint8_t { D15 = 0, D30 = 1, M3 = 2, M12 = 3 };

inline constexpr std::array<Exam, 4> kAllExams{Exam::D15, Exam::D30, Exam::M3, Exam::M12};

inline constexpr std::string_view exam_name(Exam e) {
  constexpr std::array<std::string_view, 4> names{"D15", "D30", "M3", "M12"};
  return names[static_cast<std::size_t>(e)];
}

/// Approximate day offset from transplantation.
inline constexpr int exam_day(Exam e) {
  constexpr std::array<int, 4> days{15, 30, 90, 365};
  return days[static_cast<std::size_t>(e)];
}

inline constexpr std::size_t exam_index(Exam e) { return static_cast<std::size_t>(e); }

inline Exam parse_exam(std::string_view s) {
  for (auto e : kAllExams)
    if (exam_name(e) == s) return e;
  throw std::invalid_argument("unknown exam '" + std::string(s) + "' (expected D15, D30, M3, M12)");
}

/// Clinicobiological variables that can appear in a prompt.
enum class Variable : std::uint8_t { GFR = 0, Exam = 1, Creat = 2, DonorAge = 3 };

inline constexpr std::array<Variable, 4> kAllVariables{Variable::GFR, Variable::Exam,
                                                       Variable::Creat, Variable::DonorAge};

inline constexpr std::string_view variable_name(Variable v) {
  constexpr std::array<std::string_view, 4> names{"GFR", "Exam", "Creat", "D.A."};
  return names[static_cast<std::size_t>(v)];
}

inline Variable parse_variable(std::string_view s) {
  for (auto v : kAllVariables)
    if (variable_name(v) == s) return v;
  throw std::invalid_argument("unknown variable '" + std::string(s) +
                              "' (expected GFR, Exam, Creat, D.A.)");
}

/// Small bit set over Variable.
class VariableSet {
 public:
  constexpr VariableSet() = default;
  constexpr VariableSet(std::initializer_list<Variable> vs) {
    for (auto v : vs) insert(v);
  }
  static constexpr VariableSet all() {
    return {Variable::GFR, Variable::Exam, Variable::Creat, Variable::DonorAge};
  }

  constexpr void insert(Variable v) { bits_ |= bit(v); }
  constexpr void erase(Variable v) { bits_ &= static_cast<std::uint8_t>(~bit(v)); }
  [[nodiscard]] constexpr bool contains(Variable v) const { return bits_ & bit(v); }
  [[nodiscard]] constexpr bool empty() const { return bits_ == 0; }
  [[nodiscard]] constexpr bool subset_of(VariableSet o) const { return (bits_ & ~o.bits_) == 0; }
  [[nodiscard]] constexpr bool intersects(VariableSet o) const { return (bits_ & o.bits_) != 0; }
  constexpr VariableSet& operator|=(VariableSet o) {
    bits_ |= o.bits_;
    return *this;
  }
  constexpr bool operator==(const VariableSet&) const = default;

  [[nodiscard]] std::vector<Variable> members() const {
    std::vector<Variable> out;
    for (auto v : kAllVariables)
      if (contains(v)) out.push_back(v);
    return out;
  }

  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (auto v : members()) out.emplace_back(variable_name(v));
    return out;
  }

  static VariableSet from_names(const std::vector<std::string>& names) {
    VariableSet s;
    for (const auto& n : names) s.insert(parse_variable(n));
    return s;
  }

 private:
  static constexpr std::uint8_t bit(Variable v) {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(v));
  }
  std::uint8_t bits_ = 0;
};

/// One subject-exam's tabular variables.
struct ClinicalRecord {
  std::string subject_id;
  Exam exam = Exam::D15;
  double gfr_value = 0;                 // mL/min
  std::optional<double> creat_prev;     // µmol/L, absent at the first exam
  double creat_curr = 0;                // µmol/L
  double donor_age_value = 0;           // years

  void validate() const {
    if (!(gfr_value > 0))
      throw std::invalid_argument(subject_id + ": GFR must be positive, got " +
                                  std::to_string(gfr_value));
    if (!(donor_age_value >= 0 && donor_age_value <= 120))
      throw std::invalid_argument(subject_id + ": donor age outside [0,120], got " +
                                  std::to_string(donor_age_value));
    if (!(creat_curr > 0))
      throw std::invalid_argument(subject_id + ": creatinine must be positive");
  }
};

}  // namespace medimp
