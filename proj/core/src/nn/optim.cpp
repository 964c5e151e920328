#include "vrfuse/nn/optim.hpp"

#include <cmath>

#include "vrfuse/error.hpp"

namespace vrfuse::nn {

Optimizer::Optimizer(Kind kind, double learning_rate, double beta1, double beta2, double eps)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(learning_rate > 0)) throw ValidationError("learning rate must be positive");
}

Optimizer::Kind Optimizer::parse_kind(const std::string& name) {
  if (name == "adam") return Kind::Adam;
  if (name == "sgd") return Kind::Sgd;
  throw ValidationError("unknown optimizer '" + name + "' (adam|sgd)");
}

void Optimizer::step(const std::vector<Parameter*>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto value = p->value.values();
    auto grad = p->grad.values();
    if (kind_ == Kind::Sgd) {
      for (std::size_t i = 0; i < value.size(); ++i) value[i] -= lr_ * grad[i];
      continue;
    }
    if (p->m.size() != value.size()) {
      p->m = Tensor(p->value.shape());
      p->v = Tensor(p->value.shape());
    }
    auto m = p->m.values();
    auto v = p->v.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * grad[i] * grad[i];
      value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Optimizer::zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->grad.fill(0);
}

}  // namespace vrfuse::nn
