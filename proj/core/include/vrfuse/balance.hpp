#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "vrfuse/dataset.hpp"
#include "vrfuse/grade.hpp"

namespace vrfuse::balance {

enum class IntensityUnit : std::uint8_t {
  Unit,  // [0, 1]
  Byte,  // [0, 255]
};

struct FeatureVector {
  std::vector<double> values;
  IntensityUnit unit = IntensityUnit::Byte;
  /// Index of the record the vector was extracted from, if any.
  std::optional<std::size_t> source_record;
};

/// Oversampling target policy: the floor of the five-class mean, or an
/// explicit per-grade map.
struct TargetPolicy {
  enum class Kind { Mean, Explicit };
  Kind kind = Kind::Mean;
  std::map<Grade, std::int64_t> targets;

  static TargetPolicy mean() { return {}; }
  static TargetPolicy explicit_targets(std::map<Grade, std::int64_t> t) {
    return {Kind::Explicit, std::move(t)};
  }
};

/// Reads a "Grade count" / "Grade=count" text map; '#' starts a comment.
TargetPolicy load_target_policy(const std::filesystem::path& file);
TargetPolicy parse_target_policy(const std::string& text);

using Targets = std::map<Grade, std::int64_t>;

/// Mean policy: max(count, floor(mean of the five counts)). Explicit
/// policy: the given map (grades missing from it keep their count). Throws
/// ValidationError if an explicit target is below the current count.
Targets compute_targets(const ClassDistribution& dist, const TargetPolicy& policy);

/// Indices of the k pool vectors closest to `query` by Euclidean distance,
/// ascending, ties broken by lower index. `exclude` removes one pool entry
/// (the query's own position when it is a pool member).
std::vector<std::size_t> knn(std::span<const double> query, std::span<const FeatureVector> pool,
                             std::size_t k, std::optional<std::size_t> exclude = std::nullopt);

/// x_i + delta * (x_zi - x_i), clamped to the unit's intensity range.
FeatureVector smote_sample(const FeatureVector& x_i, const FeatureVector& x_zi, double delta);

struct SmoteConfig {
  std::size_t k = 5;
  TargetPolicy policy;
  std::uint64_t seed = 0;
  double delta_min = 0.0;
  double delta_max = 1.0;
};

/// A synthetic vector plus the interpolation that produced it.
struct SyntheticSample {
  FeatureVector vector;
  std::size_t base = 0;
  std::size_t neighbor = 0;
  double delta = 0.0;
};

/// Generates `target - members.size()` synthetic vectors. Base points are
/// cycled round-robin over the members; each draws one of its k neighbors
/// and a fresh uniform delta from the stream derived from (seed, stream).
std::vector<SyntheticSample> balance_class(std::span<const FeatureVector> members, std::int64_t target,
                                           const SmoteConfig& cfg, std::uint64_t stream = 0);

struct ImageShape {
  int height = 128;
  int width = 128;
  int channels = 3;
};

/// Row-major interleaved (BGR) pixels of an 8-bit image.
FeatureVector flatten(const cv::Mat& image, IntensityUnit unit = IntensityUnit::Byte);

/// Inverse of flatten, rounding to the nearest 8-bit level.
cv::Mat to_image(const FeatureVector& v, const ImageShape& shape);

/// Writes the synthetic image and returns its record (source = synthetic).
dataset::ImageRecord materialize(const FeatureVector& v, const ImageShape& shape,
                                 const std::filesystem::path& file, Grade label);

/// Feature space used for balancing. The default is the flattened resized
/// image; an embedding can be swapped in when it comes with a decoder.
struct FeatureSpace {
  std::function<FeatureVector(const cv::Mat&)> embed;
  std::function<cv::Mat(const FeatureVector&)> reconstruct;

  static FeatureSpace pixels(const ImageShape& shape);
};

struct CorpusBalance {
  dataset::Corpus corpus;
  ClassDistribution before;
  ClassDistribution after;
};

struct BalanceResult {
  dataset::DatasetManifest manifest;
  std::vector<CorpusBalance> per_corpus;
};

/// Balances every source corpus of `manifest` independently. Synthetic images
/// are written under out_dir/<corpus>/<grade>/ and appended to the manifest.
/// `policies` overrides cfg.policy per corpus.
BalanceResult balance_manifest(const dataset::DatasetManifest& manifest, const SmoteConfig& cfg,
                               const std::map<dataset::Corpus, TargetPolicy>& policies,
                               const std::filesystem::path& out_dir, const ImageShape& shape = {});

}  // namespace vrfuse::balance
