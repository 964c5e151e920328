#pragma once

#include <memory>
#include <string>

#include "vrfuse/nn/layers.hpp"

namespace vrfuse::nn {

/// y = main(x) + shortcut(x). The shortcut defaults to identity.
class Residual final : public Layer {
 public:
  Residual(std::string name, LayerPtr main, LayerPtr shortcut = nullptr);
  std::string_view kind() const override { return "residual"; }
  void visit_children(const std::function<void(Layer&)>& fn) override;

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  LayerPtr main_;
  LayerPtr shortcut_;
};

/// Pre-activation bottleneck block: BN-ReLU feeds both the 1x1/3x3/1x1
/// branch and, when `conv_shortcut` is set, a 1x1 projection shortcut.
/// Otherwise the shortcut is the raw input (strided by a 1x1 max-pool).
class PreactBottleneck final : public Layer {
 public:
  PreactBottleneck(std::string name, int in_channels, int filters, int stride, bool conv_shortcut, Rng& rng);
  std::string_view kind() const override { return "preact_bottleneck"; }
  void visit_children(const std::function<void(Layer&)>& fn) override;
  int out_channels() const { return 4 * filters_; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  int filters_;
  bool conv_shortcut_;
  std::unique_ptr<Sequential> preact_;
  LayerPtr shortcut_;
  std::unique_ptr<Sequential> main_;
};

/// Depthwise 3x3 followed by a pointwise 1x1, both without bias.
class SeparableConv2d final : public Layer {
 public:
  SeparableConv2d(std::string name, int in_channels, int out_channels, Rng& rng, int kernel = 3);
  std::string_view kind() const override { return "separable_conv2d"; }
  void visit_children(const std::function<void(Layer&)>& fn) override;

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  std::unique_ptr<Conv2d> depthwise_;
  std::unique_ptr<Conv2d> pointwise_;
};

}  // namespace vrfuse::nn
