#include "vrfuse/nn/blocks.hpp"

#include "vrfuse/error.hpp"

namespace vrfuse::nn {

Residual::Residual(std::string name, LayerPtr main, LayerPtr shortcut)
    : Layer(std::move(name)), main_(std::move(main)), shortcut_(std::move(shortcut)) {
  if (!shortcut_) shortcut_ = std::make_unique<Identity>("shortcut");
}

void Residual::visit_children(const std::function<void(Layer&)>& fn) {
  fn(*main_);
  fn(*shortcut_);
}

Tensor Residual::do_forward(const Tensor& x, Mode mode) {
  Tensor y = main_->forward(x, mode);
  const Tensor s = shortcut_->forward(x, mode);
  if (y.shape() != s.shape()) {
    throw Error("residual " + name() + ": branch shapes " + y.shape_string() + " and " + s.shape_string() + " differ");
  }
  y += s;
  return y;
}

Tensor Residual::do_backward(const Tensor& grad_out) {
  Tensor dx = main_->backward(grad_out);
  dx += shortcut_->backward(grad_out);
  return dx;
}

PreactBottleneck::PreactBottleneck(std::string name, int in_channels, int filters, int stride, bool conv_shortcut,
                                   Rng& rng)
    : Layer(std::move(name)), filters_(filters), conv_shortcut_(conv_shortcut) {
  preact_ = std::make_unique<Sequential>("preact");
  preact_->add<BatchNorm2d>("preact_bn", in_channels);
  preact_->add<ActivationLayer>("preact_relu", Activation::ReLU);

  if (conv_shortcut) {
    shortcut_ = std::make_unique<Conv2d>(
        "0_conv", Conv2d::Options{in_channels, 4 * filters, 1, stride, 0, 1, true, Activation::None}, rng);
  } else if (stride > 1) {
    if (in_channels != 4 * filters) throw Error("preact block " + this->name() + ": identity shortcut width mismatch");
    shortcut_ = std::make_unique<MaxPool2d>("0_pool", 1, stride, 0);
  } else {
    if (in_channels != 4 * filters) throw Error("preact block " + this->name() + ": identity shortcut width mismatch");
    shortcut_ = std::make_unique<Identity>("0_identity");
  }

  main_ = std::make_unique<Sequential>("main");
  main_->add<Conv2d>("1_conv", Conv2d::Options{in_channels, filters, 1, 1, 0, 1, false, Activation::None}, rng);
  main_->add<BatchNorm2d>("1_bn", filters);
  main_->add<ActivationLayer>("1_relu", Activation::ReLU);
  main_->add<Conv2d>("2_conv", Conv2d::Options{filters, filters, 3, stride, 1, 1, false, Activation::None}, rng);
  main_->add<BatchNorm2d>("2_bn", filters);
  main_->add<ActivationLayer>("2_relu", Activation::ReLU);
  main_->add<Conv2d>("3_conv", Conv2d::Options{filters, 4 * filters, 1, 1, 0, 1, true, Activation::None}, rng);
}

void PreactBottleneck::visit_children(const std::function<void(Layer&)>& fn) {
  fn(*preact_);
  fn(*shortcut_);
  fn(*main_);
}

Tensor PreactBottleneck::do_forward(const Tensor& x, Mode mode) {
  const Tensor pre = preact_->forward(x, mode);
  Tensor y = main_->forward(pre, mode);
  y += shortcut_->forward(conv_shortcut_ ? pre : x, mode);
  return y;
}

Tensor PreactBottleneck::do_backward(const Tensor& grad_out) {
  Tensor d_pre = main_->backward(grad_out);
  Tensor d_short = shortcut_->backward(grad_out);
  if (conv_shortcut_) {
    d_pre += d_short;
    return preact_->backward(d_pre);
  }
  Tensor dx = preact_->backward(d_pre);
  dx += d_short;
  return dx;
}

SeparableConv2d::SeparableConv2d(std::string name, int in_channels, int out_channels, Rng& rng, int kernel)
    : Layer(std::move(name)) {
  depthwise_ = std::make_unique<Conv2d>(
      "depthwise",
      Conv2d::Options{in_channels, in_channels, kernel, 1, kernel / 2, in_channels, false, Activation::None}, rng);
  pointwise_ = std::make_unique<Conv2d>(
      "pointwise", Conv2d::Options{in_channels, out_channels, 1, 1, 0, 1, false, Activation::None}, rng);
}

void SeparableConv2d::visit_children(const std::function<void(Layer&)>& fn) {
  fn(*depthwise_);
  fn(*pointwise_);
}

Tensor SeparableConv2d::do_forward(const Tensor& x, Mode mode) {
  return pointwise_->forward(depthwise_->forward(x, mode), mode);
}

Tensor SeparableConv2d::do_backward(const Tensor& grad_out) {
  return depthwise_->backward(pointwise_->backward(grad_out));
}

}  // namespace vrfuse::nn
