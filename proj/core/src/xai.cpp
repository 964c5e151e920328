#include "vrfuse/xai.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "vrfuse/error.hpp"

namespace vrfuse::xai {

using nn::Tensor;

namespace {

struct Dims {
  int k, h, w;
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

Dims dims_of(const Tensor& t) {
  if (t.rank() == 4) {
    if (t.dim(0) != 1) throw ValidationError("CAM kernels take one sample, got " + t.shape_string());
    return {t.dim(1), t.dim(2), t.dim(3)};
  }
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  throw ValidationError("expected spatial activations, got " + t.shape_string());
}

void require_same(const Tensor& a, const Tensor& g) {
  if (a.size() != g.size()) {
    throw ValidationError("activations " + a.shape_string() + " and gradients " + g.shape_string() + " differ");
  }
}

int input_height(const Tensor& image) { return image.dim(2); }
int input_width(const Tensor& image) { return image.dim(3); }

Heatmap finish(Map layer_map, Method method, const Capture& cap, const std::string& layer, ChannelWeights weights,
               const Tensor& image) {
  Heatmap h;
  h.layer_resolution = std::move(layer_map);
  h.map = normalize(upsample(h.layer_resolution, input_height(image), input_width(image)));
  h.normalized = true;
  h.method = method;
  h.target_class = cap.target_class;
  h.layer = layer;
  h.weights = std::move(weights);
  return h;
}

std::string resolve_layer(models::Model& model, const std::string& layer) {
  return layer.empty() ? model.default_cam_layer() : layer;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::GradCam: return "gradcam";
    case Method::GradCamPP: return "gradcampp";
    case Method::LayerCam: return "layercam";
    case Method::ScoreCam: return "scorecam";
    case Method::FasterScoreCam: return "faster_scorecam";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw ValidationError("unknown CAM method '" + std::string(name) +
                        "' (gradcam|gradcampp|layercam|scorecam|faster_scorecam)");
}

double Map::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

ChannelWeights gradcam_weights(const Tensor& gradients) {
  const Dims d = dims_of(gradients);
  ChannelWeights w{std::vector<double>(d.k, 0.0), WeightSource::GradientPooled, {}};
  for (int k = 0; k < d.k; ++k) {
    const double* g = gradients.data() + k * d.plane();
    w.alpha[k] = std::accumulate(g, g + d.plane(), 0.0) / static_cast<double>(d.plane());
    w.selected.push_back(k);
  }
  return w;
}

ChannelWeights gradcampp_weights(const Tensor& activations, const Tensor& gradients, double eps) {
  require_same(activations, gradients);
  const Dims d = dims_of(gradients);
  ChannelWeights w{std::vector<double>(d.k, 0.0), WeightSource::HigherOrder, {}};
  for (int k = 0; k < d.k; ++k) {
    const double* a = activations.data() + k * d.plane();
    const double* g = gradients.data() + k * d.plane();
    const double sum_a = std::accumulate(a, a + d.plane(), 0.0);
    double alpha_k = 0;
    for (std::size_t i = 0; i < d.plane(); ++i) {
      const double g2 = g[i] * g[i];
      const double denom = 2 * g2 + sum_a * g2 * g[i];
      if (std::abs(denom) < eps) continue;
      alpha_k += g2 / denom * std::max(g[i], 0.0);
    }
    w.alpha[k] = alpha_k;
    w.selected.push_back(k);
  }
  return w;
}

Map weighted_sum_linear(const Tensor& activations, const std::vector<double>& alpha) {
  const Dims d = dims_of(activations);
  if (static_cast<int>(alpha.size()) != d.k) throw ValidationError("weight count does not match channel count");
  Map m{d.h, d.w, std::vector<double>(d.plane(), 0.0)};
  for (int k = 0; k < d.k; ++k) {
    if (alpha[k] == 0) continue;
    const double* a = activations.data() + k * d.plane();
    for (std::size_t i = 0; i < d.plane(); ++i) m.values[i] += alpha[k] * a[i];
  }
  return m;
}

Map weighted_sum(const Tensor& activations, const std::vector<double>& alpha) {
  Map m = weighted_sum_linear(activations, alpha);
  for (double& v : m.values) v = std::max(v, 0.0);
  return m;
}

Map layercam_map(const Tensor& activations, const Tensor& gradients) {
  require_same(activations, gradients);
  const Dims d = dims_of(activations);
  Map m{d.h, d.w, std::vector<double>(d.plane(), 0.0)};
  for (int k = 0; k < d.k; ++k) {
    const double* a = activations.data() + k * d.plane();
    const double* g = gradients.data() + k * d.plane();
    for (std::size_t i = 0; i < d.plane(); ++i) m.values[i] += std::max(g[i], 0.0) * a[i];
  }
  for (double& v : m.values) v = std::max(v, 0.0);
  return m;
}

ChannelWeights faster_scorecam_weights(const Tensor& activations, int n) {
  const Dims d = dims_of(activations);
  if (n < 1 || n > d.k) {
    throw ValidationError("Faster Score-CAM channel count must be in [1, " + std::to_string(d.k) + "], got " +
                          std::to_string(n));
  }
  std::vector<double> var(d.k);
  for (int k = 0; k < d.k; ++k) {
    const double* a = activations.data() + k * d.plane();
    const double mean = std::accumulate(a, a + d.plane(), 0.0) / static_cast<double>(d.plane());
    double s = 0;
    for (std::size_t i = 0; i < d.plane(); ++i) s += (a[i] - mean) * (a[i] - mean);
    var[k] = s / static_cast<double>(d.plane());
  }
  std::vector<int> order(d.k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return var[a] > var[b]; });
  ChannelWeights w{std::vector<double>(d.k, 0.0), WeightSource::VarianceBased, {}};
  double total = 0;
  for (int i = 0; i < n; ++i) total += var[order[i]];
  for (int i = 0; i < n; ++i) {
    w.selected.push_back(order[i]);
    w.alpha[order[i]] = total > 0 ? var[order[i]] / total : 0.0;
  }
  return w;
}

std::vector<double> softmax(const std::vector<double>& v) {
  if (v.empty()) return {};
  const double hi = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i) sum += out[i] = std::exp(v[i] - hi);
  for (double& x : out) x /= sum;
  return out;
}

Map scale_unit(const Map& m) {
  Map out = m;
  if (m.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : out.values) v = range > 0 ? (v - min) / (range + 1e-8) : 0.0;
  return out;
}

Map normalize(const Map& m) {
  Map out = m;
  if (m.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : out.values) v = range > 0 ? (v - min) / range : 0.0;
  return out;
}

Map upsample(const Map& m, int height, int width) {
  if (m.height == height && m.width == width) return m;
  cv::Mat src(m.height, m.width, CV_64F, const_cast<double*>(m.values.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Map out{height, width, std::vector<double>(static_cast<std::size_t>(height) * width)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out.at(y, x) = dst.at<double>(y, x);
  }
  return out;
}

Map channel(const Tensor& activations, int k) {
  const Dims d = dims_of(activations);
  const double* a = activations.data() + k * d.plane();
  return {d.h, d.w, std::vector<double>(a, a + d.plane())};
}

Capture capture(models::Model& model, const Tensor& image, const std::string& layer, std::optional<int> target_class,
                bool with_gradients) {
  if (image.rank() != 4 || image.dim(0) != 1) throw ValidationError("CAM input must be 1 x 3 x H x W");
  nn::Layer& l = model.layer(layer);
  l.set_capture(true);
  Capture cap;
  try {
    cap.logits = model.logits(image, nn::Mode::Eval);
    cap.activations = l.captured_output();
    if (cap.activations.rank() != 4) {
      throw ValidationError("layer '" + layer + "' is not convolutional (output " + cap.activations.shape_string() +
                            ")");
    }
    const int classes = cap.logits.dim(1);
    cap.target_class = target_class ? *target_class : static_cast<int>(std::max_element(cap.logits.data(),
                                                                                        cap.logits.data() + classes) -
                                                                       cap.logits.data());
    if (cap.target_class < 0 || cap.target_class >= classes) {
      throw ValidationError("target class " + std::to_string(cap.target_class) + " out of range");
    }
    if (with_gradients) {
      Tensor seed({1, classes});
      seed[static_cast<std::size_t>(cap.target_class)] = 1.0;
      model.backward(seed);
      cap.gradients = l.captured_gradient();
    }
  } catch (...) {
    l.set_capture(false);
    throw;
  }
  l.set_capture(false);
  return cap;
}

Heatmap grad_cam(models::Model& model, const Tensor& image, const CamOptions& opts) {
  const std::string layer = resolve_layer(model, opts.layer);
  const Capture cap = capture(model, image, layer, opts.target_class, true);
  ChannelWeights w = gradcam_weights(cap.gradients);
  Map m = weighted_sum(cap.activations, w.alpha);
  return finish(std::move(m), Method::GradCam, cap, layer, std::move(w), image);
}

Heatmap grad_cam_pp(models::Model& model, const Tensor& image, const CamOptions& opts) {
  const std::string layer = resolve_layer(model, opts.layer);
  const Capture cap = capture(model, image, layer, opts.target_class, true);
  ChannelWeights w = gradcampp_weights(cap.activations, cap.gradients);
  Map m = weighted_sum(cap.activations, w.alpha);
  Heatmap h = finish(std::move(m), Method::GradCamPP, cap, layer, std::move(w), image);
  if (std::all_of(h.weights.alpha.begin(), h.weights.alpha.end(), [](double a) { return a == 0; })) {
    h.warnings.push_back("all Grad-CAM++ weights are zero (denominators below epsilon or no positive gradient)");
  }
  return h;
}

std::vector<Heatmap> layer_cam(models::Model& model, const Tensor& image, const std::vector<std::string>& layers,
                               std::optional<int> target_class) {
  if (layers.empty()) throw ValidationError("layer_cam needs at least one layer");
  std::vector<nn::Layer*> targets;
  for (const auto& name : layers) targets.push_back(&model.layer(name));
  for (auto* l : targets) l->set_capture(true);
  std::vector<Heatmap> out;
  try {
    Capture cap;
    cap.logits = model.logits(image, nn::Mode::Eval);
    const int classes = cap.logits.dim(1);
    cap.target_class = target_class ? *target_class
                                    : static_cast<int>(std::max_element(cap.logits.data(), cap.logits.data() + classes) -
                                                       cap.logits.data());
    Tensor seed({1, classes});
    seed[static_cast<std::size_t>(cap.target_class)] = 1.0;
    model.backward(seed);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      cap.activations = targets[i]->captured_output();
      cap.gradients = targets[i]->captured_gradient();
      if (cap.activations.rank() != 4) throw ValidationError("layer '" + layers[i] + "' is not convolutional");
      Map m = layercam_map(cap.activations, cap.gradients);
      ChannelWeights w{{}, WeightSource::LocationGated, {}};
      out.push_back(finish(std::move(m), Method::LayerCam, cap, layers[i], std::move(w), image));
    }
  } catch (...) {
    for (auto* l : targets) l->set_capture(false);
    throw;
  }
  for (auto* l : targets) l->set_capture(false);
  return out;
}

Heatmap score_cam(models::Model& model, const Tensor& image, const CamOptions& opts) {
  const std::string layer = resolve_layer(model, opts.layer);
  const Capture cap = capture(model, image, layer, opts.target_class, false);
  const Dims d = dims_of(cap.activations);
  const int c = cap.target_class;
  const int h = input_height(image), w = input_width(image);
  const std::size_t pixels = static_cast<std::size_t>(h) * w;

  std::vector<Tensor> inputs;
  inputs.emplace_back(image.shape(), 0.0);  // baseline
  for (int k = 0; k < d.k; ++k) {
    const Map mask = scale_unit(upsample(channel(cap.activations, k), h, w));
    Tensor masked = image;
    for (int ch = 0; ch < image.dim(1); ++ch) {
      double* px = masked.data() + ch * pixels;
      for (std::size_t i = 0; i < pixels; ++i) px[i] *= mask.values[i];
    }
    inputs.push_back(std::move(masked));
  }

  std::vector<double> scores;
  const std::size_t step = static_cast<std::size_t>(std::max(1, opts.score_batch));
  for (std::size_t first = 0; first < inputs.size(); first += step) {
    const std::size_t count = std::min(step, inputs.size() - first);
    const Tensor probs = nn::softmax(
        model.logits(nn::stack(std::span<const Tensor>(inputs).subspan(first, count)), nn::Mode::Eval));
    for (std::size_t i = 0; i < count; ++i) scores.push_back(probs[i * probs.dim(1) + c]);
  }

  std::vector<double> raw(d.k);
  for (int k = 0; k < d.k; ++k) raw[k] = scores[k + 1] - scores[0];
  ChannelWeights cw{softmax(raw), WeightSource::ScoreBased, {}};
  cw.selected.resize(d.k);
  std::iota(cw.selected.begin(), cw.selected.end(), 0);
  Map m = weighted_sum(cap.activations, cw.alpha);
  Heatmap hm = finish(std::move(m), Method::ScoreCam, cap, layer, std::move(cw), image);
  hm.scoring_passes = inputs.size();
  return hm;
}

Heatmap faster_score_cam(models::Model& model, const Tensor& image, const CamOptions& opts) {
  const std::string layer = resolve_layer(model, opts.layer);
  const Capture cap = capture(model, image, layer, opts.target_class, false);
  const int n = std::min(opts.faster_channels, dims_of(cap.activations).k);
  ChannelWeights w = faster_scorecam_weights(cap.activations, n);
  Map m = weighted_sum(cap.activations, w.alpha);
  return finish(std::move(m), Method::FasterScoreCam, cap, layer, std::move(w), image);
}

Heatmap explain(models::Model& model, const Tensor& image, Method method, const CamOptions& opts) {
  switch (method) {
    case Method::GradCam: return grad_cam(model, image, opts);
    case Method::GradCamPP: return grad_cam_pp(model, image, opts);
    case Method::LayerCam:
      return layer_cam(model, image, {resolve_layer(model, opts.layer)}, opts.target_class).front();
    case Method::ScoreCam: return score_cam(model, image, opts);
    case Method::FasterScoreCam: return faster_score_cam(model, image, opts);
  }
  throw Error("unknown method");
}

void write_heatmap(const Map& map, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os.precision(9);
  os << "# heatmap " << map.height << " " << map.width << "\n";
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) os << (x ? " " : "") << map.at(y, x);
    os << "\n";
  }
}

Map read_heatmap(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file.string());
  std::string hash, tag;
  Map m;
  if (!(is >> hash >> tag >> m.height >> m.width) || hash != "#" || tag != "heatmap") {
    throw ValidationError(file.string() + " is not a heatmap grid");
  }
  m.values.resize(static_cast<std::size_t>(m.height) * m.width);
  for (double& v : m.values) {
    if (!(is >> v)) throw ValidationError(file.string() + ": truncated heatmap grid");
  }
  return m;
}

}  // namespace vrfuse::xai
