#include "vrfuse/grade.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace vrfuse {

std::string_view canonical_name(Grade g) {
  switch (g) {
    case Grade::Mild: return "Mild";
    case Grade::Moderate: return "Moderate";
    case Grade::NoDR: return "No_DR";
    case Grade::Proliferative: return "Proliferative_DR";
    case Grade::Severe: return "Severe";
  }
  return "?";
}

std::optional<Grade> parse_grade(std::string_view text) {
  std::string key;
  for (char c : text) {
    if (c == '_' || c == '-' || c == ' ') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  static const std::map<std::string, Grade> table = {
      {"mild", Grade::Mild},           {"1", Grade::Mild},
      {"moderate", Grade::Moderate},   {"2", Grade::Moderate},
      {"nodr", Grade::NoDR},           {"0", Grade::NoDR},
      {"normal", Grade::NoDR},         {"proliferativedr", Grade::Proliferative},
      {"proliferative", Grade::Proliferative}, {"pdr", Grade::Proliferative},
      {"4", Grade::Proliferative},     {"severe", Grade::Severe},
      {"3", Grade::Severe},
  };
  auto it = table.find(key);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::int64_t ClassDistribution::total() const {
  std::int64_t sum = 0;
  for (auto c : counts_) sum += c;
  return sum;
}

ClassDistribution& ClassDistribution::operator+=(const ClassDistribution& other) {
  for (std::size_t i = 0; i < kNumGrades; ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::string to_string(const ClassDistribution& dist) {
  std::ostringstream os;
  for (Grade g : kAllGrades) {
    if (g != Grade::Mild) os << ' ';
    os << canonical_name(g) << '=' << dist[g];
  }
  return os.str();
}

}  // namespace vrfuse
