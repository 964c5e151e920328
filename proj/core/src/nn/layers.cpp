#include "vrfuse/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "vrfuse/error.hpp"

namespace vrfuse::nn {

namespace {

using MatRM = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

// Upper bound on im2col buffer elements per chunk (~128 MB of doubles).
constexpr std::size_t kColBudget = std::size_t{16} << 20;

void he_normal(Tensor& t, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / std::max(fan_in, 1));
  for (auto& v : t.values()) v = rng.normal() * std;
}

void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / std::max(fan_in + fan_out, 1));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
}

Parameter make_param(Shape shape, Real fill = 0) {
  Parameter p;
  p.value = Tensor(shape, fill);
  p.grad = Tensor(std::move(shape), 0);
  return p;
}

void apply_activation(Tensor& t, Activation act) {
  if (act == Activation::ReLU) {
    for (auto& v : t.values()) v = v > 0 ? v : 0;
  } else if (act == Activation::ReLU6) {
    for (auto& v : t.values()) v = std::clamp<Real>(v, 0, 6);
  }
}

void activation_backward(Tensor& g, const Tensor& out, Activation act) {
  if (act == Activation::None) return;
  const Real hi = act == Activation::ReLU6 ? 6 : std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(out[i] > 0 && out[i] < hi)) g[i] = 0;
  }
}

int out_extent(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

}  // namespace

// ---------------------------------------------------------------- Layer

Tensor Layer::forward(const Tensor& x, Mode mode) {
  Tensor y = do_forward(x, mode);
  if (capture_) captured_output_ = y;
  return y;
}

Tensor Layer::backward(const Tensor& grad_out) {
  if (capture_) captured_gradient_ = grad_out;
  return do_backward(grad_out);
}

void Layer::visit_parameters(const ParameterVisitor& fn, const std::string& prefix) {
  const std::string base = prefix + name_;
  for (auto& [n, p] : own_parameters()) fn(base + "/" + n, *p);
  visit_children([&](Layer& child) { child.visit_parameters(fn, base + "/"); });
}

void Layer::visit_buffers(const BufferVisitor& fn, const std::string& prefix) {
  const std::string base = prefix + name_;
  for (auto& [n, b] : own_buffers()) fn(base + "/" + n, *b);
  visit_children([&](Layer& child) { child.visit_buffers(fn, base + "/"); });
}

void Layer::visit_children(const std::function<void(Layer&)>&) {}

Layer* Layer::find(std::string_view path) {
  if (path.empty()) return this;
  const auto slash = path.find('/');
  const std::string_view head = path.substr(0, slash);
  const std::string_view rest = slash == std::string_view::npos ? std::string_view{} : path.substr(slash + 1);
  Layer* found = nullptr;
  visit_children([&](Layer& child) {
    if (!found && child.name() == head) found = child.find(rest);
  });
  return found;
}

void for_each_layer(Layer& root, const std::function<void(const std::string&, Layer&)>& fn) {
  std::function<void(Layer&, const std::string&)> walk = [&](Layer& l, const std::string& prefix) {
    l.visit_children([&](Layer& child) {
      const std::string path = prefix.empty() ? child.name() : prefix + "/" + child.name();
      fn(path, child);
      walk(child, path);
    });
  };
  walk(root, "");
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, const Options& opts, Rng& rng) : Layer(std::move(name)), opts_(opts) {
  if (opts.in_channels <= 0 || opts.out_channels <= 0 || opts.kernel <= 0 || opts.stride <= 0) {
    throw Error("conv2d " + this->name() + ": invalid options");
  }
  if (opts.groups != 1 && !(opts.groups == opts.in_channels && opts.groups == opts.out_channels)) {
    throw Error("conv2d " + this->name() + ": only dense or depthwise convolutions are supported");
  }
  const int in_per_group = opts.in_channels / opts.groups;
  weight_ = make_param({opts.out_channels, in_per_group, opts.kernel, opts.kernel});
  he_normal(weight_.value, in_per_group * opts.kernel * opts.kernel, rng);
  if (opts.bias) bias_ = make_param({opts.out_channels});
}

std::vector<std::pair<std::string, Parameter*>> Conv2d::own_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out{{"weight", &weight_}};
  if (opts_.bias) out.emplace_back("bias", &bias_);
  return out;
}

Tensor Conv2d::do_forward(const Tensor& x, Mode) {
  if (x.rank() != 4 || x.dim(1) != opts_.in_channels) {
    throw Error("conv2d " + name() + ": expected N x " + std::to_string(opts_.in_channels) + " x H x W input, got " +
                x.shape_string());
  }
  input_ = x;
  output_ = opts_.groups == 1 ? dense_forward(x) : depthwise_forward(x);
  apply_activation(output_, opts_.activation);
  return output_;
}

Tensor Conv2d::do_backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  activation_backward(g, output_, opts_.activation);
  return opts_.groups == 1 ? dense_backward(g) : depthwise_backward(g);
}

namespace {

struct ConvGeometry {
  int n, c, h, w, k, s, p, ho, wo;
  std::size_t plane() const { return static_cast<std::size_t>(ho) * wo; }
  std::size_t col_rows() const { return static_cast<std::size_t>(c) * k * k; }
};

// col is col_rows x (count * plane), column index = sample * plane + pixel.
void im2col(const Tensor& x, const ConvGeometry& g, int first, int count, Real* col) {
  const std::size_t cols = static_cast<std::size_t>(count) * g.plane();
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        Real* row = col + (static_cast<std::size_t>(ci * g.k + ki) * g.k + kj) * cols;
        for (int s = 0; s < count; ++s) {
          const Real* src = x.data() + (static_cast<std::size_t>(first + s) * g.c + ci) * g.h * g.w;
          Real* dst = row + static_cast<std::size_t>(s) * g.plane();
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.s - g.p + ki;
            Real* d = dst + static_cast<std::size_t>(oy) * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(d, d + g.wo, Real{0});
              continue;
            }
            const Real* srow = src + static_cast<std::size_t>(iy) * g.w;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.s - g.p + kj;
              d[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : Real{0};
            }
          }
        }
      }
    }
  }
}

void col2im(const Real* col, const ConvGeometry& g, int first, int count, Tensor& dx) {
  const std::size_t cols = static_cast<std::size_t>(count) * g.plane();
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj) {
        const Real* row = col + (static_cast<std::size_t>(ci * g.k + ki) * g.k + kj) * cols;
        for (int s = 0; s < count; ++s) {
          Real* dst = dx.data() + (static_cast<std::size_t>(first + s) * g.c + ci) * g.h * g.w;
          const Real* src = row + static_cast<std::size_t>(s) * g.plane();
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.s - g.p + ki;
            if (iy < 0 || iy >= g.h) continue;
            Real* drow = dst + static_cast<std::size_t>(iy) * g.w;
            const Real* srow = src + static_cast<std::size_t>(oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.s - g.p + kj;
              if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

int chunk_size(const ConvGeometry& g) {
  const std::size_t per_sample = g.col_rows() * g.plane();
  return static_cast<int>(std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(per_sample, 1), 1,
                                                  static_cast<std::size_t>(g.n)));
}

}  // namespace

Tensor Conv2d::dense_forward(const Tensor& x) {
  const ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), opts_.kernel, opts_.stride, opts_.padding,
                       out_extent(x.dim(2), opts_.kernel, opts_.stride, opts_.padding),
                       out_extent(x.dim(3), opts_.kernel, opts_.stride, opts_.padding)};
  if (g.ho <= 0 || g.wo <= 0) throw Error("conv2d " + name() + ": input " + x.shape_string() + " too small");
  const int cout = opts_.out_channels;
  Tensor y({g.n, cout, g.ho, g.wo});
  const int chunk = chunk_size(g);
  const CMapRM wm(weight_.value.data(), cout, static_cast<Eigen::Index>(g.col_rows()));
  std::vector<Real> col;
  MatRM out;
  for (int first = 0; first < g.n; first += chunk) {
    const int count = std::min(chunk, g.n - first);
    const std::size_t cols = static_cast<std::size_t>(count) * g.plane();
    col.resize(g.col_rows() * cols);
    im2col(x, g, first, count, col.data());
    out.noalias() = wm * CMapRM(col.data(), static_cast<Eigen::Index>(g.col_rows()), static_cast<Eigen::Index>(cols));
    for (int s = 0; s < count; ++s) {
      for (int co = 0; co < cout; ++co) {
        const Real b = opts_.bias ? bias_.value[co] : Real{0};
        Real* dst = y.data() + (static_cast<std::size_t>(first + s) * cout + co) * g.plane();
        const Real* src = out.data() + static_cast<std::size_t>(co) * cols + static_cast<std::size_t>(s) * g.plane();
        for (std::size_t p = 0; p < g.plane(); ++p) dst[p] = src[p] + b;
      }
    }
  }
  return y;
}

Tensor Conv2d::dense_backward(const Tensor& grad) {
  const Tensor& x = input_;
  const ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), opts_.kernel, opts_.stride, opts_.padding,
                       grad.dim(2), grad.dim(3)};
  const int cout = opts_.out_channels;
  Tensor dx(x.shape());
  const int chunk = chunk_size(g);
  const auto rows = static_cast<Eigen::Index>(g.col_rows());
  const CMapRM wm(weight_.value.data(), cout, rows);
  MapRM dw(weight_.grad.data(), cout, rows);
  std::vector<Real> col;
  MatRM gm;
  MatRM dcol;
  for (int first = 0; first < g.n; first += chunk) {
    const int count = std::min(chunk, g.n - first);
    const std::size_t cols = static_cast<std::size_t>(count) * g.plane();
    gm.resize(cout, static_cast<Eigen::Index>(cols));
    for (int s = 0; s < count; ++s) {
      for (int co = 0; co < cout; ++co) {
        const Real* src = grad.data() + (static_cast<std::size_t>(first + s) * cout + co) * g.plane();
        std::copy(src, src + g.plane(), gm.data() + static_cast<std::size_t>(co) * cols + s * g.plane());
      }
    }
    col.resize(g.col_rows() * cols);
    im2col(x, g, first, count, col.data());
    const CMapRM colm(col.data(), rows, static_cast<Eigen::Index>(cols));
    dw.noalias() += gm * colm.transpose();
    if (opts_.bias) {
      for (int co = 0; co < cout; ++co) bias_.grad[co] += gm.row(co).sum();
    }
    dcol.noalias() = wm.transpose() * gm;
    col2im(dcol.data(), g, first, count, dx);
  }
  return dx;
}

Tensor Conv2d::depthwise_forward(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int k = opts_.kernel, s = opts_.stride, p = opts_.padding;
  const int ho = out_extent(h, k, s, p), wo = out_extent(w, k, s, p);
  if (ho <= 0 || wo <= 0) throw Error("conv2d " + name() + ": input " + x.shape_string() + " too small");
  Tensor y({n, c, ho, wo});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const Real* src = x.data() + (static_cast<std::size_t>(b) * c + ch) * h * w;
      const Real* ker = weight_.value.data() + static_cast<std::size_t>(ch) * k * k;
      Real* dst = y.data() + (static_cast<std::size_t>(b) * c + ch) * ho * wo;
      const Real bias = opts_.bias ? bias_.value[ch] : Real{0};
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          Real acc = bias;
          for (int ki = 0; ki < k; ++ki) {
            const int iy = oy * s - p + ki;
            if (iy < 0 || iy >= h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int ix = ox * s - p + kj;
              if (ix < 0 || ix >= w) continue;
              acc += src[iy * w + ix] * ker[ki * k + kj];
            }
          }
          dst[oy * wo + ox] = acc;
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::depthwise_backward(const Tensor& grad) {
  const Tensor& x = input_;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int k = opts_.kernel, s = opts_.stride, p = opts_.padding;
  const int ho = grad.dim(2), wo = grad.dim(3);
  Tensor dx(x.shape());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const Real* src = x.data() + (static_cast<std::size_t>(b) * c + ch) * h * w;
      Real* dsrc = dx.data() + (static_cast<std::size_t>(b) * c + ch) * h * w;
      const Real* ker = weight_.value.data() + static_cast<std::size_t>(ch) * k * k;
      Real* dker = weight_.grad.data() + static_cast<std::size_t>(ch) * k * k;
      const Real* gy = grad.data() + (static_cast<std::size_t>(b) * c + ch) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const Real gv = gy[oy * wo + ox];
          if (opts_.bias) bias_.grad[ch] += gv;
          if (gv == 0) continue;
          for (int ki = 0; ki < k; ++ki) {
            const int iy = oy * s - p + ki;
            if (iy < 0 || iy >= h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int ix = ox * s - p + kj;
              if (ix < 0 || ix >= w) continue;
              dker[ki * k + kj] += gv * src[iy * w + ix];
              dsrc[iy * w + ix] += gv * ker[ki * k + kj];
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::string name, int in_features, int out_features, Rng& rng, bool glorot)
    : Layer(std::move(name)), in_(in_features), out_(out_features) {
  weight_ = make_param({out_features, in_features});
  if (glorot) {
    glorot_uniform(weight_.value, in_features, out_features, rng);
  } else {
    he_normal(weight_.value, in_features, rng);
  }
  bias_ = make_param({out_features});
}

std::vector<std::pair<std::string, Parameter*>> Dense::own_parameters() {
  return {{"weight", &weight_}, {"bias", &bias_}};
}

Tensor Dense::do_forward(const Tensor& x, Mode) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw Error("dense " + name() + ": expected N x " + std::to_string(in_) + " input, got " + x.shape_string());
  }
  input_ = x;
  const int n = x.dim(0);
  Tensor y({n, out_});
  MapRM ym(y.data(), n, out_);
  ym.noalias() = CMapRM(x.data(), n, in_) * CMapRM(weight_.value.data(), out_, in_).transpose();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < out_; ++j) ym(i, j) += bias_.value[j];
  }
  return y;
}

Tensor Dense::do_backward(const Tensor& grad) {
  const int n = grad.dim(0);
  const CMapRM gm(grad.data(), n, out_);
  MapRM(weight_.grad.data(), out_, in_).noalias() += gm.transpose() * CMapRM(input_.data(), n, in_);
  for (int j = 0; j < out_; ++j) bias_.grad[j] += gm.col(j).sum();
  Tensor dx({n, in_});
  MapRM(dx.data(), n, in_).noalias() = gm * CMapRM(weight_.value.data(), out_, in_);
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels, double momentum, double eps)
    : Layer(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_ = make_param({channels}, 1);
  beta_ = make_param({channels}, 0);
  running_mean_ = Tensor({channels}, 0);
  running_var_ = Tensor({channels}, 1);
}

void BatchNorm2d::begin_recalibration() {
  running_mean_.fill(0);
  running_var_.fill(0);
  recalibrating_ = 0;
}

std::vector<std::pair<std::string, Parameter*>> BatchNorm2d::own_parameters() {
  return {{"gamma", &gamma_}, {"beta", &beta_}};
}

std::vector<std::pair<std::string, Tensor*>> BatchNorm2d::own_buffers() {
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
}

Tensor BatchNorm2d::do_forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != channels_) {
    throw Error("batchnorm " + name() + ": expected N x " + std::to_string(channels_) + " x H x W input, got " +
                x.shape_string());
  }
  last_mode_ = mode;
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0);
  Tensor y(x.shape());
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0, sq = 0;
      for (int b = 0; b < n; ++b) {
        const Real* p = x.data() + (static_cast<std::size_t>(b) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / count;
      for (int b = 0; b < n; ++b) {
        const Real* p = x.data() + (static_cast<std::size_t>(b) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      const double keep = recalibrating_ >= 0 ? recalibrating_ / (recalibrating_ + 1.0) : momentum_;
      running_mean_[c] = keep * running_mean_[c] + (1 - keep) * mean;
      running_var_[c] = keep * running_var_[c] + (1 - keep) * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * inv;
        xhat_[off + i] = xh;
        y[off + i] = gamma_.value[c] * xh + beta_.value[c];
      }
    }
  }
  if (mode == Mode::Train && recalibrating_ >= 0) ++recalibrating_;
  return y;
}

Tensor BatchNorm2d::do_backward(const Tensor& grad) {
  const int n = grad.dim(0);
  const std::size_t plane = static_cast<std::size_t>(grad.dim(2)) * grad.dim(3);
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  Tensor dx(grad.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0, sum_gx = 0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad[off + i];
        sum_gx += grad[off + i] * xhat_[off + i];
      }
    }
    gamma_.grad[c] += sum_gx;
    beta_.grad[c] += sum_g;
    const double gmm = gamma_.value[c];
    const double inv = inv_std_[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (last_mode_ == Mode::Train) {
          dx[off + i] = gmm * inv * (grad[off + i] - sum_g / count - xhat_[off + i] * sum_gx / count);
        } else {
          dx[off + i] = gmm * inv * grad[off + i];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- activations, pooling

Tensor ActivationLayer::do_forward(const Tensor& x, Mode) {
  output_ = x;
  apply_activation(output_, act_);
  return output_;
}

Tensor ActivationLayer::do_backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  activation_backward(g, output_, act_);
  return g;
}

Tensor MaxPool2d::do_forward(const Tensor& x, Mode) {
  if (x.rank() != 4) throw Error("maxpool " + name() + ": expected a 4-d input");
  in_shape_ = x.shape();
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = out_extent(h, kernel_, stride_, padding_), wo = out_extent(w, kernel_, stride_, padding_);
  if (ho <= 0 || wo <= 0) throw Error("maxpool " + name() + ": input " + x.shape_string() + " too small");
  Tensor y({n, c, ho, wo});
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox, ++o) {
          Real best = -std::numeric_limits<Real>::infinity();
          std::size_t arg = base;
          for (int ki = 0; ki < kernel_; ++ki) {
            const int iy = oy * stride_ - padding_ + ki;
            if (iy < 0 || iy >= h) continue;
            for (int kj = 0; kj < kernel_; ++kj) {
              const int ix = ox * stride_ - padding_ + kj;
              if (ix < 0 || ix >= w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(iy) * w + ix;
              if (x[idx] > best) {
                best = x[idx];
                arg = idx;
              }
            }
          }
          y[o] = best;
          argmax_[o] = arg;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2d::do_backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
  return dx;
}

Tensor GlobalAvgPool::do_forward(const Tensor& x, Mode) {
  if (x.rank() != 4) throw Error("gap " + name() + ": expected a 4-d input");
  in_shape_ = x.shape();
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
    Real s = 0;
    for (std::size_t p = 0; p < plane; ++p) s += x[i * plane + p];
    y[i] = s / static_cast<Real>(plane);
  }
  return y;
}

Tensor GlobalAvgPool::do_backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  const std::size_t plane = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const Real v = grad_out[i] / static_cast<Real>(plane);
    for (std::size_t p = 0; p < plane; ++p) dx[i * plane + p] = v;
  }
  return dx;
}

Tensor Flatten::do_forward(const Tensor& x, Mode) {
  in_shape_ = x.shape();
  const int n = x.dim(0);
  return x.reshaped({n, static_cast<int>(x.size() / static_cast<std::size_t>(n))});
}

Tensor Flatten::do_backward(const Tensor& grad_out) { return grad_out.reshaped(in_shape_); }

Tensor Dropout::do_forward(const Tensor& x, Mode mode) {
  if (mode == Mode::Eval || rate_ <= 0) {
    mask_.clear();
    return x;
  }
  mask_.resize(x.size());
  const Real keep = 1.0 - rate_;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = rng_.uniform() < keep ? 1.0 / keep : 0.0;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::do_backward(const Tensor& grad_out) {
  if (mask_.empty()) return grad_out;
  Tensor g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask_[i];
  return g;
}

// ---------------------------------------------------------------- Sequential

void Sequential::visit_children(const std::function<void(Layer&)>& fn) {
  for (auto& l : layers_) fn(*l);
}

Tensor Sequential::do_forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  return h;
}

Tensor Sequential::do_backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad) {
  const int n = logits.dim(0);
  const int c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) throw Error("softmax_cross_entropy: label count mismatch");
  const Tensor probs = softmax(logits);
  double loss = 0;
  if (grad) *grad = Tensor(logits.shape());
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw Error("softmax_cross_entropy: label out of range");
    loss -= std::log(std::max(probs[static_cast<std::size_t>(i) * c + y], 1e-300));
    if (grad) {
      for (int j = 0; j < c; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * c + j;
        (*grad)[idx] = (probs[idx] - (j == y ? 1.0 : 0.0)) / n;
      }
    }
  }
  return loss / n;
}

}  // namespace vrfuse::nn
