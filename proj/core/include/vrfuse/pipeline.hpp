#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vrfuse/config.hpp"
#include "vrfuse/dataset.hpp"
#include "vrfuse/render.hpp"

namespace vrfuse::pipeline {

enum class Stage { Prepare, Merge, Balance, Enhance, Split, Train, Evaluate, Explain };

inline constexpr Stage kAllStages[] = {Stage::Prepare, Stage::Merge,    Stage::Balance,  Stage::Enhance,
                                       Stage::Split,   Stage::Train,    Stage::Evaluate, Stage::Explain};

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

/// Fixed run-directory layout.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config"; }
  std::filesystem::path manifests() const { return root / "manifests"; }
  std::filesystem::path images() const { return root / "images"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path xai() const { return root / "xai"; }

  std::filesystem::path manifest(std::string_view name) const;
  std::filesystem::path stamp(Stage s) const;
  std::filesystem::path record() const { return root / "run_record.txt"; }
  void create() const;
};

struct StageTiming {
  Stage stage;
  double seconds = 0;
  bool resumed = false;
};

struct RunRecord {
  std::string tool_version;
  std::string config_hash;
  std::string config_yaml;
  std::vector<StageTiming> timings;
  std::map<std::string, std::string> artifacts;
  bool ok = true;
  std::optional<Stage> failed_stage;
  std::string error;
};

void write_run_record(const RunRecord& record, const std::filesystem::path& file);
RunRecord read_run_record(const std::filesystem::path& file);

using Logger = std::function<void(const std::string&)>;

struct RunOptions {
  /// Run only up to and including this stage.
  std::optional<Stage> stop_after;
  /// Ignore stage stamps and recompute everything.
  bool force = false;
  Logger log;
};

/// Validates the config, then runs every stage in order. Stages whose stamp
/// matches the config hash are skipped. A throwing stage ends the run with
/// ok = false; artifacts written so far are kept. Validation problems found
/// before any stage runs are thrown as ValidationError.
RunRecord run_pipeline(const config::PipelineConfig& cfg, const RunOptions& opts = {});

// Stage building blocks, also used by the individual CLI verbs.

struct ContrastRow {
  std::filesystem::path source;
  std::filesystem::path enhanced;
  double before = 0;
  double after = 0;
};

struct EnhanceResult {
  dataset::DatasetManifest manifest;
  std::vector<ContrastRow> contrast;
};

/// CLAHE (when enabled) followed by a resize to `size`, written as PNG under
/// out_dir/<corpus>/<grade>/.
EnhanceResult enhance_manifest(const dataset::DatasetManifest& manifest, const config::ClaheSection& clahe,
                               const std::filesystem::path& out_dir, int size);
void write_contrast_report(const std::vector<ContrastRow>& rows, const std::filesystem::path& file);

/// Per-corpus target policies from the smote section.
std::map<dataset::Corpus, balance::TargetPolicy> smote_policies(const config::SmoteSection& smote,
                                                                const std::set<dataset::Corpus>& corpora);
balance::TargetPolicy default_policy(const config::SmoteSection& smote);

/// Published hybrid-dataset class totals (Mild, Moderate, No_DR, Proliferative_DR, Severe).
ClassDistribution published_hybrid_totals();

/// Comparison of merged post-balancing totals with the published hybrid
/// table. Only meaningful when the five public corpora were merged.
std::vector<std::string> hybrid_notes(const ClassDistribution& merged);

void write_balance_report(const balance::BalanceResult& result, const std::filesystem::path& file);

/// Explains one image with every method: writes heatmap_<method>.txt,
/// overlay_<method>.png, grid.png and manifest.txt into out_dir.
render::Grid explain_image(models::Model& model, const std::filesystem::path& image,
                           const std::vector<xai::Method>& methods, const xai::CamOptions& opts,
                           const std::filesystem::path& out_dir, double opacity = 0.5);

/// Human-readable summary of a run directory.
std::string report(const std::filesystem::path& run_dir);

}  // namespace vrfuse::pipeline
