#pragma once

#include <string>
#include <vector>

#include "vrfuse/nn/layers.hpp"

namespace vrfuse::nn {

/// Adaptive-moment optimizer (Adam) or plain SGD over a parameter list.
class Optimizer {
 public:
  enum class Kind { Adam, Sgd };

  Optimizer(Kind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-7);

  static Kind parse_kind(const std::string& name);

  void step(const std::vector<Parameter*>& params);
  static void zero_grad(const std::vector<Parameter*>& params);

  double learning_rate() const { return lr_; }

 private:
  Kind kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

}  // namespace vrfuse::nn
