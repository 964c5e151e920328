#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vrfuse/random.hpp"
#include "vrfuse/tensor.hpp"

namespace vrfuse::nn {

enum class Mode { Train, Eval };

enum class Activation { None, ReLU, ReLU6 };

struct Parameter {
  Tensor value;
  Tensor grad;
  // Adam moments, allocated by the optimizer on first use.
  Tensor m;
  Tensor v;
  bool trainable = true;
};

using ParameterVisitor = std::function<void(const std::string& path, Parameter&)>;
using BufferVisitor = std::function<void(const std::string& path, Tensor&)>;

/// A differentiable graph node. forward() caches what backward() needs, so a
/// layer instance serves one forward/backward pair at a time.
///
/// Any layer can capture its latest output and the gradient flowing into that
/// output; CAM methods read both through captured_output()/captured_gradient().
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& grad_out);

  const std::string& name() const { return name_; }
  virtual std::string_view kind() const = 0;

  virtual void visit_parameters(const ParameterVisitor& fn, const std::string& prefix);
  virtual void visit_buffers(const BufferVisitor& fn, const std::string& prefix);
  virtual void visit_children(const std::function<void(Layer&)>& fn);

  /// Resolves a '/'-separated path of child names below this layer.
  Layer* find(std::string_view path);

  void set_capture(bool on) { capture_ = on; }
  const Tensor& captured_output() const { return captured_output_; }
  const Tensor& captured_gradient() const { return captured_gradient_; }

 protected:
  virtual Tensor do_forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor do_backward(const Tensor& grad_out) = 0;
  virtual std::vector<std::pair<std::string, Parameter*>> own_parameters() { return {}; }
  virtual std::vector<std::pair<std::string, Tensor*>> own_buffers() { return {}; }

 private:
  std::string name_;
  bool capture_ = false;
  Tensor captured_output_;
  Tensor captured_gradient_;
};

using LayerPtr = std::unique_ptr<Layer>;

/// Walks every layer below `root` (pre-order) with its path relative to root.
void for_each_layer(Layer& root, const std::function<void(const std::string& path, Layer&)>& fn);

class Conv2d final : public Layer {
 public:
  struct Options {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 0;
    /// 1 for a dense convolution; equal to in/out channels for depthwise.
    int groups = 1;
    bool bias = true;
    Activation activation = Activation::None;
  };

  Conv2d(std::string name, const Options& opts, Rng& rng);
  std::string_view kind() const override { return "conv2d"; }
  const Options& options() const { return opts_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;
  std::vector<std::pair<std::string, Parameter*>> own_parameters() override;

 private:
  Tensor dense_forward(const Tensor& x);
  Tensor depthwise_forward(const Tensor& x);
  Tensor dense_backward(const Tensor& g);
  Tensor depthwise_backward(const Tensor& g);

  Options opts_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
  Tensor output_;
};

class Dense final : public Layer {
 public:
  Dense(std::string name, int in_features, int out_features, Rng& rng, bool glorot = false);
  std::string_view kind() const override { return "dense"; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;
  std::vector<std::pair<std::string, Parameter*>> own_parameters() override;

 private:
  int in_;
  int out_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, double momentum = 0.9, double eps = 1e-5);
  std::string_view kind() const override { return "batchnorm"; }

  /// Restarts the running statistics as a plain average over the Train-mode
  /// batches seen until finish_recalibration().
  void begin_recalibration();
  void finish_recalibration() { recalibrating_ = -1; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;
  std::vector<std::pair<std::string, Parameter*>> own_parameters() override;
  std::vector<std::pair<std::string, Tensor*>> own_buffers() override;

 private:
  int channels_;
  double momentum_;
  double eps_;
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
  Mode last_mode_ = Mode::Eval;
  long recalibrating_ = -1;
  Tensor xhat_;
  std::vector<Real> inv_std_;
};

class ActivationLayer final : public Layer {
 public:
  ActivationLayer(std::string name, Activation act) : Layer(std::move(name)), act_(act) {}
  std::string_view kind() const override { return act_ == Activation::ReLU6 ? "relu6" : "relu"; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  Activation act_;
  Tensor output_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::string name, int kernel, int stride, int padding = 0)
      : Layer(std::move(name)), kernel_(kernel), stride_(stride), padding_(padding) {}
  std::string_view kind() const override { return "maxpool"; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  int kernel_;
  int stride_;
  int padding_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

class GlobalAvgPool final : public Layer {
 public:
  explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}
  std::string_view kind() const override { return "gap"; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  Shape in_shape_;
};

class Flatten final : public Layer {
 public:
  explicit Flatten(std::string name) : Layer(std::move(name)) {}
  std::string_view kind() const override { return "flatten"; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  Shape in_shape_;
};

class Dropout final : public Layer {
 public:
  Dropout(std::string name, double rate, std::uint64_t seed)
      : Layer(std::move(name)), rate_(rate), rng_(seed) {}
  std::string_view kind() const override { return "dropout"; }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  double rate_;
  Rng rng_;
  std::vector<Real> mask_;
};

class Identity final : public Layer {
 public:
  explicit Identity(std::string name) : Layer(std::move(name)) {}
  std::string_view kind() const override { return "identity"; }

 protected:
  Tensor do_forward(const Tensor& x, Mode) override { return x; }
  Tensor do_backward(const Tensor& g) override { return g; }
};

class Sequential : public Layer {
 public:
  explicit Sequential(std::string name) : Layer(std::move(name)) {}
  std::string_view kind() const override { return "sequential"; }

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void append(LayerPtr layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i); }

  void visit_children(const std::function<void(Layer&)>& fn) override;

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override;
  Tensor do_backward(const Tensor& grad_out) override;

 private:
  std::vector<LayerPtr> layers_;
};

/// Row-wise softmax cross-entropy averaged over the batch. Writes the
/// gradient w.r.t. the logits into `grad` when non-null.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad);

}  // namespace vrfuse::nn
