#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vrfuse/balance.hpp"
#include "vrfuse/dataset.hpp"
#include "vrfuse/enhance.hpp"
#include "vrfuse/models.hpp"
#include "vrfuse/train.hpp"
#include "vrfuse/xai.hpp"

namespace vrfuse::config {

struct CorpusConfig {
  dataset::Corpus corpus = dataset::Corpus::Synthetic;
  std::filesystem::path root;
  /// Extra directory-name aliases per grade, added to the canonical ones.
  std::map<Grade, std::vector<std::string>> aliases;
  std::vector<std::string> exclude;
  /// When set, the corpus is generated into the run directory instead of read from `root`.
  std::optional<ClassDistribution> generate;
  int generate_size = 128;
};

struct SmoteSection {
  bool enabled = true;
  std::size_t k = 5;
  /// "mean", or a path to a grade->count file applied to every corpus.
  std::string policy = "mean";
  std::map<dataset::Corpus, std::filesystem::path> overrides;
  int image_size = 128;
};

struct ClaheSection {
  bool enabled = true;
  enhance::TileGrid grid;
  enhance::ClipSpec clip;
};

struct XaiSection {
  std::vector<xai::Method> methods{std::begin(xai::kAllMethods), std::end(xai::kAllMethods)};
  std::string layer;
  std::optional<int> target_class;  // nullopt = argmax
  int faster_channels = 10;
  int images = 2;
  double opacity = 0.5;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output = "run";
  std::vector<CorpusConfig> corpora;
  SmoteSection smote;
  ClaheSection clahe;
  dataset::SplitRatios split;
  models::ModelSpec model;
  train::TrainConfig train;
  XaiSection xai;

  /// Checks ranges and that every referenced path exists. Throws ValidationError.
  void validate() const;
};

/// Reads a YAML pipeline config. Relative paths resolve against the file's directory.
PipelineConfig load(const std::filesystem::path& file);
PipelineConfig parse(const std::string& yaml_text, const std::filesystem::path& base_dir = {});

/// Canonical YAML rendering with every knob spelled out.
std::string to_yaml(const PipelineConfig& cfg);

/// FNV-1a over the canonical rendering, as 16 hex digits.
std::string config_hash(const PipelineConfig& cfg);

}  // namespace vrfuse::config
