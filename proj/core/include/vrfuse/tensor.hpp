#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vrfuse::nn {

using Real = double;
using Shape = std::vector<int>;

/// Dense row-major tensor. Image batches are NCHW; dense activations N x F.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0);
  Tensor(Shape shape, std::vector<Real> values);

  const Shape& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Real at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  /// Same values, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  /// Sample `n` of a batch, keeping a leading dimension of 1.
  Tensor sample(int n) const;

  void fill(Real v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(Real s);

  std::string shape_string() const;

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<Real> data_;
};

std::size_t element_count(const Shape& shape);

/// Stacks single samples (leading dim 1 or none) into a batch.
Tensor stack(std::span<const Tensor> samples);

/// Row-wise softmax of an N x C matrix.
Tensor softmax(const Tensor& logits);

}  // namespace vrfuse::nn
