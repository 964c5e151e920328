#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vrfuse/grade.hpp"

namespace vrfuse::dataset {

enum class Corpus : std::uint8_t { Aptos2019, DDR, IDRiD, Messidor2, Retino, EyePACS, Synthetic };

enum class Split : std::uint8_t { Unassigned, Train, Val, Test };

std::string_view corpus_name(Corpus c);
std::optional<Corpus> parse_corpus(std::string_view name);
std::string_view split_name(Split s);
std::optional<Split> parse_split(std::string_view name);

struct ImageRecord {
  std::filesystem::path path;
  Grade label = Grade::NoDR;
  Corpus source = Corpus::Synthetic;
  Split split = Split::Unassigned;

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::string provenance;
  std::uint64_t seed = 0;

  ClassDistribution distribution() const;
  ClassDistribution distribution(Split s) const;
  std::vector<ImageRecord> with_split(Split s) const;
  /// Sub-manifest of records carrying `source`, same seed and provenance.
  DatasetManifest from_source(Corpus source) const;
  std::set<Corpus> sources() const;
};

/// Directory names accepted for each grade, plus files to skip.
struct CorpusLayout {
  std::map<Grade, std::vector<std::string>> aliases;
  /// File names (not paths) excluded at scan time, e.g. unlabeled images.
  std::set<std::string> excluded;

  static CorpusLayout canonical();
};

struct ScanIssue {
  std::filesystem::path path;
  std::string message;
};

struct ScanResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
  std::vector<ScanIssue> errors;
};

/// Builds a manifest from a directory-per-grade tree. Missing grade
/// directories produce a warning; unreadable image files are recorded in
/// `errors` and skipped. Records are ordered by grade then path.
ScanResult scan_corpus(const std::filesystem::path& root, Corpus source,
                       const CorpusLayout& layout = CorpusLayout::canonical());

/// Union of records in input order. Throws ValidationError naming both
/// sources when a path appears twice.
DatasetManifest merge(std::span<const DatasetManifest> manifests);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

SplitRatios parse_ratios(std::string_view text);

/// Per-class stratified split. Each class is shuffled with a stream keyed by
/// (seed, class); val and test take round(ratio * n) records (at least one
/// each for a three-way split), train takes the rest.
DatasetManifest split(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

/// Line-oriented text: a '#' header block with seed and provenance, a column
/// line, then one tab-separated record per line.
void write_manifest(const DatasetManifest& manifest, std::ostream& os);
DatasetManifest read_manifest(std::istream& is);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

/// True for .png/.jpg/.jpeg (case-insensitive).
bool has_image_extension(const std::filesystem::path& p);

}  // namespace vrfuse::dataset
