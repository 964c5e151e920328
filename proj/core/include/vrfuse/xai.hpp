#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vrfuse/models.hpp"
#include "vrfuse/tensor.hpp"

namespace vrfuse::xai {

enum class Method { GradCam, GradCamPP, LayerCam, ScoreCam, FasterScoreCam };

inline constexpr Method kAllMethods[] = {Method::GradCam, Method::GradCamPP, Method::LayerCam, Method::ScoreCam,
                                         Method::FasterScoreCam};

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

enum class WeightSource { GradientPooled, HigherOrder, LocationGated, ScoreBased, VarianceBased };

struct ChannelWeights {
  std::vector<double> alpha;
  WeightSource source = WeightSource::GradientPooled;
  /// Channels that contributed (all of them except for Faster Score-CAM).
  std::vector<int> selected;
};

/// Row-major single-channel map.
struct Map {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double max() const;
};

struct Heatmap {
  Map map;               // upsampled to the input size
  Map layer_resolution;  // post-ReLU map at the layer's resolution, before normalization
  bool normalized = false;
  Method method = Method::GradCam;
  int target_class = 0;
  std::string layer;
  ChannelWeights weights;
  /// Forward passes used to score masked inputs (Score-CAM family only).
  std::size_t scoring_passes = 0;
  std::vector<std::string> warnings;
};

// Kernels over one sample: activations and gradients are 1 x K x h x w (or K x h x w).

ChannelWeights gradcam_weights(const nn::Tensor& gradients);

/// alpha_ij = g^2 / (2 g^2 + sum_ab A_ab * g^3) per channel and location, with
/// denominators below `eps` treated as zero weight; channel weight is
/// sum_ij alpha_ij * ReLU(g_ij).
ChannelWeights gradcampp_weights(const nn::Tensor& activations, const nn::Tensor& gradients, double eps = 1e-8);

/// ReLU(sum_k alpha_k A^k), no normalization.
Map weighted_sum(const nn::Tensor& activations, const std::vector<double>& alpha);

/// Sum_k alpha_k A^k before the ReLU.
Map weighted_sum_linear(const nn::Tensor& activations, const std::vector<double>& alpha);

/// ReLU(sum_k ReLU(g^k_ij) A^k_ij).
Map layercam_map(const nn::Tensor& activations, const nn::Tensor& gradients);

/// Spatial variance per channel; the top `n` (ties by lower index) are kept and
/// weighted by Var_k / sum of selected variances. Unselected channels get 0.
ChannelWeights faster_scorecam_weights(const nn::Tensor& activations, int n);

/// Numerically stable softmax of a weight vector.
std::vector<double> softmax(const std::vector<double>& v);

/// (x - min) / (max - min + 1e-8); a constant map becomes all zeros.
Map scale_unit(const Map& m);

/// Min-max normalization to [0, 1] for maps with positive range; an all-zero
/// map stays zero.
Map normalize(const Map& m);

Map upsample(const Map& m, int height, int width);

Map channel(const nn::Tensor& activations, int k);

// Model wrappers. `image` is a 1 x 3 x H x W batch.

struct CamOptions {
  /// Grade index, or nullopt for the argmax prediction.
  std::optional<int> target_class;
  /// Empty for the model's default layer.
  std::string layer;
  int faster_channels = 10;
  /// Score-CAM: masked inputs scored per forward call.
  int score_batch = 16;
};

struct Capture {
  nn::Tensor activations;
  nn::Tensor gradients;  // empty when not requested
  nn::Tensor logits;
  int target_class = 0;
};

/// One forward (and optionally one backward of the pre-softmax target score)
/// with activations captured at `layer`. Throws when the layer is unknown or
/// not spatial.
Capture capture(models::Model& model, const nn::Tensor& image, const std::string& layer,
                std::optional<int> target_class, bool with_gradients);

Heatmap grad_cam(models::Model& model, const nn::Tensor& image, const CamOptions& opts = {});
Heatmap grad_cam_pp(models::Model& model, const nn::Tensor& image, const CamOptions& opts = {});
std::vector<Heatmap> layer_cam(models::Model& model, const nn::Tensor& image, const std::vector<std::string>& layers,
                               std::optional<int> target_class = std::nullopt);

/// Score-CAM with an all-zero baseline and post-softmax target confidence.
/// Uses one activation pass plus K + 1 scoring passes (K masked inputs and the
/// baseline); `scoring_passes` reports the latter.
Heatmap score_cam(models::Model& model, const nn::Tensor& image, const CamOptions& opts = {});
Heatmap faster_score_cam(models::Model& model, const nn::Tensor& image, const CamOptions& opts = {});

Heatmap explain(models::Model& model, const nn::Tensor& image, Method method, const CamOptions& opts = {});

/// Writes a heatmap as a whitespace-separated text grid with a one-line header.
void write_heatmap(const Map& map, const std::filesystem::path& file);
Map read_heatmap(const std::filesystem::path& file);

}  // namespace vrfuse::xai
