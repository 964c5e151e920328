#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vrfuse/enhance.hpp"
#include "vrfuse/grade.hpp"
#include "vrfuse/nn/layers.hpp"
#include "vrfuse/tensor.hpp"

namespace vrfuse::models {

enum class BackboneName { VGG16, VGG19, ResNet50V2, MobileNetV2, Xception };

std::string_view backbone_name(BackboneName b);
BackboneName parse_backbone(std::string_view name);

struct BackboneSpec {
  BackboneName name = BackboneName::VGG19;
  /// Initialize from a weights file instead of random init.
  bool pretrained = false;
  std::filesystem::path weights;
  /// Fine-tune the backbone (false freezes its parameters).
  bool trainable = true;
};

inline BackboneSpec backbone_spec(BackboneName name) {
  BackboneSpec b;
  b.name = name;
  return b;
}

struct TransferHeadSpec {
  std::vector<int> dense_widths = {1024, 512};
  std::vector<double> dropout_rates = {0.5, 0.5};
  int classes = static_cast<int>(kNumGrades);
};

struct FusionModelSpec {
  BackboneSpec backbone_a = backbone_spec(BackboneName::VGG19);
  BackboneSpec backbone_b = backbone_spec(BackboneName::ResNet50V2);
  int refine_channels = 512;
  std::vector<int> head_widths = {256, 64};
  double dropout = 0.5;
  int classes = static_cast<int>(kNumGrades);
};

enum class Architecture {
  Transfer,   // one backbone + flatten/1024/512 head
  VRFuseNet,  // VGG19 + ResNet50V2 fusion
  SmallCnn,   // three conv stages + GAP head, for desk-scale experiments
};

struct ModelSpec {
  Architecture architecture = Architecture::VRFuseNet;
  BackboneSpec backbone;
  TransferHeadSpec head;
  FusionModelSpec fusion;
  /// Channel width multiplier applied to every convolutional stage.
  double width = 1.0;
  int input_size = 128;
  std::uint64_t seed = 0;
  /// Free-form identifier of the configuration the model was built from.
  std::string config_id;

  /// "vrfusenet", "smallcnn" or the backbone name.
  std::string name() const;
};

/// Parses a model choice: vrfusenet | smallcnn | vgg16 | vgg19 | resnet50v2 | mobilenetv2 | xception.
ModelSpec spec_for(std::string_view model_name);

/// Grade order of the output rows (alphabetical canonical names).
std::vector<std::string> label_order();

/// Converts enhanced images to an N x 3 x H x W batch.
nn::Tensor to_batch(std::span<const enhance::EnhancedTensor> images);

/// Concatenates two feature maps along channels (a first) after shifting
/// each sample's map by its own scalar mean.
nn::Tensor fuse(const nn::Tensor& map_a, const nn::Tensor& map_b);

/// Sample cross-covariance of column-centered n x r and n x s matrices:
/// F = (1/(n-1)) m1c^T m2c. Diagnostic only.
nn::Tensor cross_covariance(const nn::Tensor& m1, const nn::Tensor& m2);

/// Spatially averaged feature maps: N x C x H x W -> N x C.
nn::Tensor pool_features(const nn::Tensor& maps);

/// A network plus its spec. Layer caches make a Model single-owner; use
/// clone() for concurrent inference.
class Model {
 public:
  explicit Model(ModelSpec spec);
  /// Wraps a hand-built network. Layers outside "head" count as spatial.
  Model(ModelSpec spec, std::unique_ptr<nn::Layer> net, std::string cam_layer);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelSpec& spec() const { return spec_; }
  nn::Layer& network() { return *net_; }

  /// Pre-softmax class scores.
  nn::Tensor logits(const nn::Tensor& batch, nn::Mode mode = nn::Mode::Eval);
  /// Softmax probabilities, evaluated in chunks of `chunk` samples.
  nn::Tensor predict(const nn::Tensor& batch, int chunk = 32);
  /// Back-propagates d(loss)/d(logits) through the last logits() call.
  nn::Tensor backward(const nn::Tensor& grad_logits);

  /// Final convolutional-stage activations of the backbone(s), pre-head. For
  /// VR-FuseNet this is the fused map; `branch` selects one backbone.
  nn::Tensor extract_features(const nn::Tensor& batch, std::string_view branch = {});

  std::vector<nn::Parameter*> parameters(bool trainable_only = false);
  std::vector<std::pair<std::string, nn::Parameter*>> named_parameters();
  std::vector<std::pair<std::string, nn::Tensor*>> named_buffers();
  std::size_t parameter_count();

  nn::Layer* find_layer(std::string_view path);
  /// Throws ValidationError naming the available 4-d layers.
  nn::Layer& layer(std::string_view path);
  const std::string& default_cam_layer() const { return cam_layer_; }
  /// Paths of layers producing spatial maps (candidates for CAM).
  std::vector<std::string> spatial_layers() const { return spatial_layers_; }

  /// Per-sample forward passes run since construction (or the last reset);
  /// a batch of n samples counts n.
  std::size_t forward_count() const { return forwards_; }
  void reset_forward_count() { forwards_ = 0; }

  Model clone();

 private:
  ModelSpec spec_;
  std::unique_ptr<nn::Layer> net_;
  std::string cam_layer_;
  std::vector<std::string> spatial_layers_;
  std::size_t forwards_ = 0;
  bool custom_ = false;
};

/// Shape-only helpers for tests and docs.
struct BackboneInfo {
  int channels;
  std::string cam_layer;
};
BackboneInfo backbone_info(BackboneName name, double width = 1.0);

// Checkpoint directory: model.txt (spec, label order, config id) + weights.bin.
void save_checkpoint(Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);
ModelSpec read_model_spec(const std::filesystem::path& file);

/// Copies matching parameters/buffers from a weights file; returns how many
/// tensors were loaded. Entries under `prefix` only, when non-empty.
std::size_t load_weights(Model& model, const std::filesystem::path& file, std::string_view prefix = {});
void save_weights(Model& model, const std::filesystem::path& file);

}  // namespace vrfuse::models
