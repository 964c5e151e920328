#pragma once

#include <cstdint>
#include <filesystem>

#include <opencv2/core.hpp>

#include "vrfuse/dataset.hpp"
#include "vrfuse/grade.hpp"

namespace vrfuse::synth {

/// Draws one fundus-like image of the given grade. Every grade adds its own
/// lesion signature to a shared background of disc, optic nerve head and vessels:
///   No_DR            nothing
///   Mild             small dark-red dots
///   Moderate         yellow exudate patches
///   Severe           large dark blotches
///   Proliferative_DR bright tortuous new vessels
cv::Mat draw_fundus(Grade grade, std::uint64_t seed, int size = 128);

/// Writes root/<grade>/synth_<seed>_<n>.png for counts[grade] images of each
/// grade and returns the manifest of what was written.
dataset::DatasetManifest generate_synthetic_corpus(const std::filesystem::path& root, const ClassDistribution& counts,
                                                   std::uint64_t seed, int size = 128);

}  // namespace vrfuse::synth
