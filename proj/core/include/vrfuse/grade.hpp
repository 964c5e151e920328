#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace vrfuse {

/// Diabetic-retinopathy severity grade.
///
/// Enumerators follow the model label order, which is the alphabetical order
/// of the canonical directory names. Class index `i` in every probability row,
/// confusion matrix and checkpoint refers to `Grade(i)`.
enum class Grade : std::uint8_t {
  Mild = 0,
  Moderate = 1,
  NoDR = 2,
  Proliferative = 3,
  Severe = 4,
};

inline constexpr std::size_t kNumGrades = 5;

inline constexpr std::array<Grade, kNumGrades> kAllGrades = {
    Grade::Mild, Grade::Moderate, Grade::NoDR, Grade::Proliferative, Grade::Severe};

inline constexpr std::size_t index_of(Grade g) { return static_cast<std::size_t>(g); }

/// Canonical directory / manifest name: No_DR, Mild, Moderate, Severe, Proliferative_DR.
std::string_view canonical_name(Grade g);

/// Accepts canonical names plus a few common spellings ("0".."4" clinical
/// stage numbers, "NoDR", "PDR", case-insensitive).
std::optional<Grade> parse_grade(std::string_view text);

/// Per-class image counts; always carries all five grades.
class ClassDistribution {
 public:
  ClassDistribution() { counts_.fill(0); }
  explicit ClassDistribution(const std::array<std::int64_t, kNumGrades>& counts) : counts_(counts) {}

  std::int64_t operator[](Grade g) const { return counts_[index_of(g)]; }
  std::int64_t& operator[](Grade g) { return counts_[index_of(g)]; }

  std::int64_t total() const;
  const std::array<std::int64_t, kNumGrades>& counts() const { return counts_; }

  ClassDistribution& operator+=(const ClassDistribution& other);
  friend ClassDistribution operator+(ClassDistribution a, const ClassDistribution& b) { return a += b; }
  bool operator==(const ClassDistribution&) const = default;

 private:
  std::array<std::int64_t, kNumGrades> counts_;
};

/// "Mild=3 Moderate=4 ..." in label order.
std::string to_string(const ClassDistribution& dist);

}  // namespace vrfuse
