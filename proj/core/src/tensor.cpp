#include "vrfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vrfuse/error.hpp"

namespace vrfuse::nn {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) throw Error("tensor value count does not match shape");
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != data_.size()) {
    throw Error("cannot reshape " + shape_string() + " to " + Tensor(shape).shape_string());
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::sample(int n) const {
  Shape s = shape_;
  const std::size_t per = data_.size() / static_cast<std::size_t>(s[0]);
  s[0] = 1;
  return Tensor(s, std::vector<Real>(data_.begin() + static_cast<std::ptrdiff_t>(per * n),
                                     data_.begin() + static_cast<std::ptrdiff_t>(per * (n + 1))));
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.data_.size() != data_.size()) throw Error("tensor size mismatch in +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(Real s) {
  for (auto& v : data_) v *= s;
  return *this;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ')';
  return os.str();
}

Tensor stack(std::span<const Tensor> samples) {
  if (samples.empty()) throw Error("stack: no samples");
  Shape s = samples.front().shape();
  if (!s.empty() && s[0] == 1) s.erase(s.begin());
  Shape out_shape = s;
  out_shape.insert(out_shape.begin(), static_cast<int>(samples.size()));
  Tensor out(out_shape);
  const std::size_t per = element_count(s);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != per) throw Error("stack: sample size mismatch");
    std::copy(samples[i].data(), samples[i].data() + per, out.data() + i * per);
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw Error("softmax expects an N x C tensor");
  Tensor out(logits.shape());
  const int n = logits.dim(0);
  const int c = logits.dim(1);
  for (int i = 0; i < n; ++i) {
    const Real* row = logits.data() + static_cast<std::size_t>(i) * c;
    Real* dst = out.data() + static_cast<std::size_t>(i) * c;
    const Real mx = *std::max_element(row, row + c);
    Real sum = 0;
    for (int j = 0; j < c; ++j) sum += dst[j] = std::exp(row[j] - mx);
    for (int j = 0; j < c; ++j) dst[j] /= sum;
  }
  return out;
}

}  // namespace vrfuse::nn
