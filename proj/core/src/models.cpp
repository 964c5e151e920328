#include "vrfuse/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "vrfuse/error.hpp"
#include "vrfuse/nn/blocks.hpp"
#include "vrfuse/random.hpp"

namespace vrfuse::models {

using nn::Activation;
using nn::Conv2d;
using nn::Mode;
using nn::Sequential;
using nn::Tensor;

namespace {

int scaled(int channels, double width) { return std::max(1, static_cast<int>(std::lround(channels * width))); }

Conv2d::Options conv(int in, int out, int k, int stride, int pad, bool bias = true,
                     Activation act = Activation::None) {
  return {in, out, k, stride, pad, 1, bias, act};
}

struct Backbone {
  std::unique_ptr<Sequential> net;
  int channels;
  std::string cam_layer;  // relative to the backbone
};

Backbone build_vgg(BackboneName name, double width, Rng& rng) {
  const std::vector<int> convs = name == BackboneName::VGG16 ? std::vector<int>{2, 2, 3, 3, 3}
                                                             : std::vector<int>{2, 2, 4, 4, 4};
  const int filters[5] = {64, 128, 256, 512, 512};
  auto net = std::make_unique<Sequential>(std::string(backbone_name(name)));
  int in = 3;
  std::string last;
  for (int b = 0; b < 5; ++b) {
    const int out = scaled(filters[b], width);
    for (int i = 0; i < convs[b]; ++i) {
      last = "block" + std::to_string(b + 1) + "_conv" + std::to_string(i + 1);
      net->add<Conv2d>(last, conv(in, out, 3, 1, 1, true, Activation::ReLU), rng);
      in = out;
    }
    net->add<nn::MaxPool2d>("block" + std::to_string(b + 1) + "_pool", 2, 2);
  }
  return {std::move(net), in, last};
}

Backbone build_resnet50v2(double width, Rng& rng) {
  auto net = std::make_unique<Sequential>("resnet50v2");
  const int stem = scaled(64, width);
  net->add<Conv2d>("conv1_conv", conv(3, stem, 7, 2, 3), rng);
  net->add<nn::MaxPool2d>("pool1_pool", 3, 2, 1);
  struct Stage {
    int filters, blocks, stride;
  };
  const Stage stages[4] = {{64, 3, 2}, {128, 4, 2}, {256, 6, 2}, {512, 3, 1}};
  int in = stem;
  for (int s = 0; s < 4; ++s) {
    const int f = scaled(stages[s].filters, width);
    for (int b = 1; b <= stages[s].blocks; ++b) {
      const std::string name = "conv" + std::to_string(s + 2) + "_block" + std::to_string(b);
      const bool first = b == 1;
      const int stride = b == stages[s].blocks ? stages[s].stride : 1;
      auto& block = net->add<nn::PreactBottleneck>(name, in, f, stride, first, rng);
      in = block.out_channels();
    }
  }
  net->add<nn::BatchNorm2d>("post_bn", in);
  net->add<nn::ActivationLayer>("post_relu", Activation::ReLU);
  return {std::move(net), in, "post_relu"};
}

Backbone build_mobilenetv2(double width, Rng& rng) {
  auto net = std::make_unique<Sequential>("mobilenetv2");
  const int stem = scaled(32, width);
  net->add<Conv2d>("Conv1", conv(3, stem, 3, 2, 1, false), rng);
  net->add<nn::BatchNorm2d>("bn_Conv1", stem);
  net->add<nn::ActivationLayer>("Conv1_relu", Activation::ReLU6);
  struct Setting {
    int t, c, n, s;
  };
  const Setting settings[7] = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                               {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
  int in = stem;
  int block_id = 0;
  for (const auto& st : settings) {
    const int out = scaled(st.c, width);
    for (int i = 0; i < st.n; ++i) {
      const int stride = i == 0 ? st.s : 1;
      const std::string name = block_id == 0 ? "expanded_conv" : "block_" + std::to_string(block_id);
      auto main = std::make_unique<Sequential>("main");
      const int hidden = in * st.t;
      if (st.t != 1) {
        main->add<Conv2d>("expand", conv(in, hidden, 1, 1, 0, false), rng);
        main->add<nn::BatchNorm2d>("expand_BN", hidden);
        main->add<nn::ActivationLayer>("expand_relu", Activation::ReLU6);
      }
      main->add<Conv2d>("depthwise", Conv2d::Options{hidden, hidden, 3, stride, 1, hidden, false, Activation::None},
                        rng);
      main->add<nn::BatchNorm2d>("depthwise_BN", hidden);
      main->add<nn::ActivationLayer>("depthwise_relu", Activation::ReLU6);
      main->add<Conv2d>("project", conv(hidden, out, 1, 1, 0, false), rng);
      main->add<nn::BatchNorm2d>("project_BN", out);
      if (stride == 1 && in == out) {
        net->append(std::make_unique<nn::Residual>(name, std::move(main)));
      } else {
        auto seq = std::make_unique<Sequential>(name);
        seq->append(std::move(main));
        net->append(std::move(seq));
      }
      in = out;
      ++block_id;
    }
  }
  const int last = width > 1.0 ? scaled(1280, width) : 1280;
  net->add<Conv2d>("Conv_1", conv(in, last, 1, 1, 0, false), rng);
  net->add<nn::BatchNorm2d>("Conv_1_bn", last);
  net->add<nn::ActivationLayer>("out_relu", Activation::ReLU6);
  return {std::move(net), last, "out_relu"};
}

std::unique_ptr<Sequential> projection(const std::string& name, int in, int out, Rng& rng) {
  auto s = std::make_unique<Sequential>(name);
  s->add<Conv2d>("conv", conv(in, out, 1, 2, 0, false), rng);
  s->add<nn::BatchNorm2d>("bn", out);
  return s;
}

Backbone build_xception(double width, Rng& rng) {
  auto net = std::make_unique<Sequential>("xception");
  const int c32 = scaled(32, width), c64 = scaled(64, width), c128 = scaled(128, width);
  const int c256 = scaled(256, width), c728 = scaled(728, width), c1024 = scaled(1024, width);
  const int c1536 = scaled(1536, width), c2048 = scaled(2048, width);
  net->add<Conv2d>("block1_conv1", conv(3, c32, 3, 2, 0, false), rng);
  net->add<nn::BatchNorm2d>("block1_conv1_bn", c32);
  net->add<nn::ActivationLayer>("block1_conv1_act", Activation::ReLU);
  net->add<Conv2d>("block1_conv2", conv(c32, c64, 3, 1, 0, false), rng);
  net->add<nn::BatchNorm2d>("block1_conv2_bn", c64);
  net->add<nn::ActivationLayer>("block1_conv2_act", Activation::ReLU);

  auto entry = [&](int block, int in, int out, bool leading_relu) {
    const std::string b = "block" + std::to_string(block);
    auto main = std::make_unique<Sequential>("main");
    if (leading_relu) main->add<nn::ActivationLayer>(b + "_sepconv1_act", Activation::ReLU);
    main->add<nn::SeparableConv2d>(b + "_sepconv1", in, out, rng);
    main->add<nn::BatchNorm2d>(b + "_sepconv1_bn", out);
    main->add<nn::ActivationLayer>(b + "_sepconv2_act", Activation::ReLU);
    main->add<nn::SeparableConv2d>(b + "_sepconv2", out, out, rng);
    main->add<nn::BatchNorm2d>(b + "_sepconv2_bn", out);
    main->add<nn::MaxPool2d>(b + "_pool", 3, 2, 1);
    net->append(std::make_unique<nn::Residual>(b, std::move(main), projection("shortcut", in, out, rng)));
  };
  entry(2, c64, c128, false);
  entry(3, c128, c256, true);
  entry(4, c256, c728, true);
  for (int block = 5; block <= 12; ++block) {
    const std::string b = "block" + std::to_string(block);
    auto main = std::make_unique<Sequential>("main");
    for (int i = 1; i <= 3; ++i) {
      const std::string s = b + "_sepconv" + std::to_string(i);
      main->add<nn::ActivationLayer>(s + "_act", Activation::ReLU);
      main->add<nn::SeparableConv2d>(s, c728, c728, rng);
      main->add<nn::BatchNorm2d>(s + "_bn", c728);
    }
    net->append(std::make_unique<nn::Residual>(b, std::move(main)));
  }
  {
    auto main = std::make_unique<Sequential>("main");
    main->add<nn::ActivationLayer>("block13_sepconv1_act", Activation::ReLU);
    main->add<nn::SeparableConv2d>("block13_sepconv1", c728, c728, rng);
    main->add<nn::BatchNorm2d>("block13_sepconv1_bn", c728);
    main->add<nn::ActivationLayer>("block13_sepconv2_act", Activation::ReLU);
    main->add<nn::SeparableConv2d>("block13_sepconv2", c728, c1024, rng);
    main->add<nn::BatchNorm2d>("block13_sepconv2_bn", c1024);
    main->add<nn::MaxPool2d>("block13_pool", 3, 2, 1);
    net->append(std::make_unique<nn::Residual>("block13", std::move(main), projection("shortcut", c728, c1024, rng)));
  }
  net->add<nn::SeparableConv2d>("block14_sepconv1", c1024, c1536, rng);
  net->add<nn::BatchNorm2d>("block14_sepconv1_bn", c1536);
  net->add<nn::ActivationLayer>("block14_sepconv1_act", Activation::ReLU);
  net->add<nn::SeparableConv2d>("block14_sepconv2", c1536, c2048, rng);
  net->add<nn::BatchNorm2d>("block14_sepconv2_bn", c2048);
  net->add<nn::ActivationLayer>("block14_sepconv2_act", Activation::ReLU);
  return {std::move(net), c2048, "block14_sepconv2_act"};
}

Backbone build_backbone(BackboneName name, double width, Rng& rng) {
  switch (name) {
    case BackboneName::VGG16:
    case BackboneName::VGG19: return build_vgg(name, width, rng);
    case BackboneName::ResNet50V2: return build_resnet50v2(width, rng);
    case BackboneName::MobileNetV2: return build_mobilenetv2(width, rng);
    case BackboneName::Xception: return build_xception(width, rng);
  }
  throw Error("unknown backbone");
}

// Spatial extent of the backbone output for a square input.
int backbone_extent(BackboneName name, int input) {
  auto conv_out = [](int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; };
  switch (name) {
    case BackboneName::VGG16:
    case BackboneName::VGG19: {
      int e = input;
      for (int i = 0; i < 5; ++i) e = conv_out(e, 2, 2, 0);
      return e;
    }
    case BackboneName::ResNet50V2: {
      int e = conv_out(conv_out(input, 7, 2, 3), 3, 2, 1);
      for (int i = 0; i < 3; ++i) e = conv_out(e, 3, 2, 1);
      return e;
    }
    case BackboneName::MobileNetV2: {
      int e = conv_out(input, 3, 2, 1);
      for (int i = 0; i < 4; ++i) e = conv_out(e, 3, 2, 1);
      return e;
    }
    case BackboneName::Xception: {
      int e = conv_out(conv_out(input, 3, 2, 0), 3, 1, 0);
      for (int i = 0; i < 4; ++i) e = conv_out(e, 3, 2, 1);
      return e;
    }
  }
  return 0;
}

void add_head(Sequential& head, int in_features, const std::vector<int>& widths, const std::vector<double>& dropout,
              int classes, std::uint64_t seed, Rng& rng) {
  head.add<nn::Flatten>("flatten");
  int in = in_features;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string idx = std::to_string(i + 1);
    head.add<nn::Dense>("dense_" + idx, in, widths[i], rng);
    head.add<nn::ActivationLayer>("relu_" + idx, Activation::ReLU);
    const double rate = i < dropout.size() ? dropout[i] : dropout.empty() ? 0.0 : dropout.back();
    head.add<nn::Dropout>("dropout_" + idx, rate, Rng::derive(seed, 1000 + i).next());
    in = widths[i];
  }
  head.add<nn::Dense>("predictions", in, classes, rng, true);
}

void set_trainable(nn::Layer& layer, bool trainable) {
  layer.visit_parameters([&](const std::string&, nn::Parameter& p) { p.trainable = trainable; }, "");
}

// Two backbones -> mean-shift concat -> conv refinement -> dense head.
class FusionNet final : public nn::Layer {
 public:
  FusionNet(std::unique_ptr<Sequential> a, std::unique_ptr<Sequential> b, std::unique_ptr<Sequential> refine,
            std::unique_ptr<Sequential> head)
      : Layer("vrfusenet"), a_(std::move(a)), b_(std::move(b)), refine_(std::move(refine)), head_(std::move(head)) {}

  std::string_view kind() const override { return "fusion"; }
  void visit_children(const std::function<void(nn::Layer&)>& fn) override {
    fn(*a_);
    fn(*b_);
    fn(*refine_);
    fn(*head_);
  }

  Tensor fused(const Tensor& x, Mode mode) {
    Tensor fa = a_->forward(x, mode);
    Tensor fb = b_->forward(x, mode);
    channels_a_ = fa.dim(1);
    return fuse(fa, fb);
  }

 protected:
  Tensor do_forward(const Tensor& x, Mode mode) override {
    return head_->forward(refine_->forward(fused(x, mode), mode), mode);
  }

  Tensor do_backward(const Tensor& grad_out) override {
    const Tensor g = refine_->backward(head_->backward(grad_out));
    const int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor ga({n, channels_a_, h, w});
    Tensor gb({n, c - channels_a_, h, w});
    for (int s = 0; s < n; ++s) {
      const Real* src = g.data() + static_cast<std::size_t>(s) * c * plane;
      // out = a + mean(a): d/da_i = g_i + mean-share of sum(g)
      auto unshift = [&](const Real* from, std::size_t count, Real* to) {
        Real sum = 0;
        for (std::size_t i = 0; i < count; ++i) sum += from[i];
        const Real share = sum / static_cast<Real>(count);
        for (std::size_t i = 0; i < count; ++i) to[i] = from[i] + share;
      };
      const std::size_t na = static_cast<std::size_t>(channels_a_) * plane;
      const std::size_t nb = static_cast<std::size_t>(c - channels_a_) * plane;
      unshift(src, na, ga.data() + s * na);
      unshift(src + na, nb, gb.data() + s * nb);
    }
    Tensor dx = a_->backward(ga);
    dx += b_->backward(gb);
    return dx;
  }

 private:
  using Real = nn::Real;
  std::unique_ptr<Sequential> a_;
  std::unique_ptr<Sequential> b_;
  std::unique_ptr<Sequential> refine_;
  std::unique_ptr<Sequential> head_;
  int channels_a_ = 0;
};

void load_pretrained(Model& model, const BackboneSpec& bb) {
  if (!bb.pretrained) return;
  if (bb.weights.empty()) {
    throw ValidationError("backbone " + std::string(backbone_name(bb.name)) +
                          ": pretrained initialization needs a weights file (no network download)");
  }
  if (load_weights(model, bb.weights, backbone_name(bb.name)) == 0) {
    throw ValidationError("weights file " + bb.weights.string() + " has no tensors for " +
                          std::string(backbone_name(bb.name)));
  }
}

struct Built {
  std::unique_ptr<nn::Layer> net;
  std::string cam_layer;
};

Built build_network(const ModelSpec& spec) {
  if (spec.input_size < 32) throw ValidationError("input size must be at least 32");
  if (!(spec.width > 0)) throw ValidationError("width multiplier must be positive");
  Rng rng = Rng::derive(spec.seed, 7);
  switch (spec.architecture) {
    case Architecture::Transfer: {
      Backbone bb = build_backbone(spec.backbone.name, spec.width, rng);
      const int extent = backbone_extent(spec.backbone.name, spec.input_size);
      auto root = std::make_unique<Sequential>("model");
      auto head = std::make_unique<Sequential>("head");
      add_head(*head, bb.channels * extent * extent, spec.head.dense_widths, spec.head.dropout_rates,
               spec.head.classes, spec.seed, rng);
      const std::string cam = std::string(backbone_name(spec.backbone.name)) + "/" + bb.cam_layer;
      root->append(std::move(bb.net));
      root->append(std::move(head));
      return {std::move(root), cam};
    }
    case Architecture::VRFuseNet: {
      const auto& f = spec.fusion;
      Backbone a = build_backbone(f.backbone_a.name, spec.width, rng);
      Backbone b = build_backbone(f.backbone_b.name, spec.width, rng);
      const int ea = backbone_extent(f.backbone_a.name, spec.input_size);
      const int eb = backbone_extent(f.backbone_b.name, spec.input_size);
      if (ea != eb) {
        throw ValidationError("fusion backbones disagree on spatial size (" + std::to_string(ea) + " vs " +
                              std::to_string(eb) + ")");
      }
      const int fused = a.channels + b.channels;
      const int rc = scaled(f.refine_channels, spec.width);
      auto refine = std::make_unique<Sequential>("refine");
      refine->add<Conv2d>("conv", conv(fused, rc, 3, 1, 1), rng);
      refine->add<nn::BatchNorm2d>("bn", rc);
      refine->add<nn::ActivationLayer>("relu", Activation::ReLU);
      const int pool = ea >= 2 ? 2 : 1;
      refine->add<nn::MaxPool2d>("pool", pool, pool);
      const int pooled = ea / pool;
      auto head = std::make_unique<Sequential>("head");
      add_head(*head, rc * pooled * pooled, f.head_widths, {f.dropout}, f.classes, spec.seed, rng);
      return {std::make_unique<FusionNet>(std::move(a.net), std::move(b.net), std::move(refine), std::move(head)),
              "refine/relu"};
    }
    case Architecture::SmallCnn: {
      auto root = std::make_unique<Sequential>("model");
      auto features = std::make_unique<Sequential>("features");
      const int c1 = scaled(16, spec.width), c2 = scaled(32, spec.width), c3 = scaled(32, spec.width);
      features->add<Conv2d>("conv1", conv(3, c1, 3, 1, 1), rng);
      features->add<nn::BatchNorm2d>("bn1", c1);
      features->add<nn::ActivationLayer>("relu1", Activation::ReLU);
      features->add<nn::MaxPool2d>("pool1", 2, 2);
      features->add<Conv2d>("conv2", conv(c1, c2, 3, 1, 1), rng);
      features->add<nn::BatchNorm2d>("bn2", c2);
      features->add<nn::ActivationLayer>("relu2", Activation::ReLU);
      features->add<nn::MaxPool2d>("pool2", 2, 2);
      features->add<Conv2d>("conv3", conv(c2, c3, 3, 1, 1, true, Activation::ReLU), rng);
      auto head = std::make_unique<Sequential>("head");
      head->add<nn::GlobalAvgPool>("gap");
      head->add<nn::Dense>("predictions", c3, spec.head.classes, rng, true);
      root->append(std::move(features));
      root->append(std::move(head));
      return {std::move(root), "features/conv3"};
    }
  }
  throw Error("unknown architecture");
}

std::vector<std::string> collect_spatial(nn::Layer& net) {
  static const std::set<std::string_view> non_spatial = {"sequential", "flatten", "gap",   "dense",
                                                         "dropout",    "fusion",  "identity"};
  std::vector<std::string> out;
  nn::for_each_layer(net, [&](const std::string& path, nn::Layer& l) {
    if (path == "head" || path.rfind("head/", 0) == 0) return;
    if (non_spatial.contains(l.kind())) return;
    out.push_back(path);
  });
  return out;
}

}  // namespace

std::string_view backbone_name(BackboneName b) {
  switch (b) {
    case BackboneName::VGG16: return "vgg16";
    case BackboneName::VGG19: return "vgg19";
    case BackboneName::ResNet50V2: return "resnet50v2";
    case BackboneName::MobileNetV2: return "mobilenetv2";
    case BackboneName::Xception: return "xception";
  }
  return "?";
}

BackboneName parse_backbone(std::string_view name) {
  for (auto b : {BackboneName::VGG16, BackboneName::VGG19, BackboneName::ResNet50V2, BackboneName::MobileNetV2,
                 BackboneName::Xception}) {
    if (backbone_name(b) == name) return b;
  }
  throw ValidationError("unknown backbone '" + std::string(name) +
                        "' (vgg16|vgg19|resnet50v2|mobilenetv2|xception)");
}

std::string ModelSpec::name() const {
  switch (architecture) {
    case Architecture::Transfer: return std::string(backbone_name(backbone.name));
    case Architecture::VRFuseNet: return "vrfusenet";
    case Architecture::SmallCnn: return "smallcnn";
  }
  return "?";
}

ModelSpec spec_for(std::string_view model_name) {
  ModelSpec spec;
  if (model_name == "vrfusenet") {
    spec.architecture = Architecture::VRFuseNet;
  } else if (model_name == "smallcnn") {
    spec.architecture = Architecture::SmallCnn;
  } else {
    spec.architecture = Architecture::Transfer;
    spec.backbone.name = parse_backbone(model_name);
  }
  return spec;
}

std::vector<std::string> label_order() {
  std::vector<std::string> out;
  for (Grade g : kAllGrades) out.emplace_back(canonical_name(g));
  return out;
}

BackboneInfo backbone_info(BackboneName name, double width) {
  Rng rng(0);
  Backbone bb = build_backbone(name, width, rng);
  return {bb.channels, std::string(backbone_name(name)) + "/" + bb.cam_layer};
}

Tensor to_batch(std::span<const enhance::EnhancedTensor> images) {
  if (images.empty()) throw Error("to_batch: no images");
  const int h = images.front().height, w = images.front().width;
  Tensor batch({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    if (img.height != h || img.width != w) throw Error("to_batch: images differ in size");
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) batch.at(static_cast<int>(n), c, y, x) = img.at(y, x, c);
      }
    }
  }
  return batch;
}

Tensor fuse(const Tensor& map_a, const Tensor& map_b) {
  if (map_a.rank() != 4 || map_b.rank() != 4) throw ValidationError("fuse: expected 4-d feature maps");
  if (map_a.dim(0) != map_b.dim(0) || map_a.dim(2) != map_b.dim(2) || map_a.dim(3) != map_b.dim(3)) {
    throw ValidationError("fuse: batch/spatial mismatch " + map_a.shape_string() + " vs " + map_b.shape_string());
  }
  const int n = map_a.dim(0), ca = map_a.dim(1), cb = map_b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(map_a.dim(2)) * map_a.dim(3);
  const std::size_t na = ca * plane, nb = cb * plane;
  Tensor out({n, ca + cb, map_a.dim(2), map_a.dim(3)});
  auto shift = [](const nn::Real* from, std::size_t count, nn::Real* to) {
    nn::Real sum = 0;
    for (std::size_t i = 0; i < count; ++i) sum += from[i];
    const nn::Real mean = sum / static_cast<nn::Real>(count);
    for (std::size_t i = 0; i < count; ++i) to[i] = from[i] + mean;
  };
  for (int s = 0; s < n; ++s) {
    nn::Real* dst = out.data() + static_cast<std::size_t>(s) * (na + nb);
    shift(map_a.data() + s * na, na, dst);
    shift(map_b.data() + s * nb, nb, dst + na);
  }
  return out;
}

Tensor cross_covariance(const Tensor& m1, const Tensor& m2) {
  if (m1.rank() != 2 || m2.rank() != 2 || m1.dim(0) != m2.dim(0)) {
    throw ValidationError("cross_covariance: expected n x r and n x s matrices with equal n");
  }
  const int n = m1.dim(0), r = m1.dim(1), s = m2.dim(1);
  if (n < 2) throw ValidationError("cross_covariance: need at least 2 rows");
  auto centered = [n](const Tensor& m) {
    Tensor c = m;
    const int cols = m.dim(1);
    for (int j = 0; j < cols; ++j) {
      double mean = 0;
      for (int i = 0; i < n; ++i) mean += m[static_cast<std::size_t>(i) * cols + j];
      mean /= n;
      for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i) * cols + j] -= mean;
    }
    return c;
  };
  const Tensor a = centered(m1), b = centered(m2);
  Tensor f({r, s});
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < r; ++p) {
      const double av = a[static_cast<std::size_t>(i) * r + p];
      for (int q = 0; q < s; ++q) f[static_cast<std::size_t>(p) * s + q] += av * b[static_cast<std::size_t>(i) * s + q];
    }
  }
  f *= 1.0 / (n - 1);
  return f;
}

Tensor pool_features(const Tensor& maps) {
  nn::GlobalAvgPool gap("gap");
  return gap.forward(maps, Mode::Eval);
}

// ---------------------------------------------------------------- Model

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  Built b = build_network(spec_);
  net_ = std::move(b.net);
  cam_layer_ = std::move(b.cam_layer);
  spatial_layers_ = collect_spatial(*net_);
  if (spec_.architecture == Architecture::Transfer) {
    if (!spec_.backbone.trainable) set_trainable(*net_->find(backbone_name(spec_.backbone.name)), false);
    load_pretrained(*this, spec_.backbone);
  } else if (spec_.architecture == Architecture::VRFuseNet) {
    for (const auto* bb : {&spec_.fusion.backbone_a, &spec_.fusion.backbone_b}) {
      if (!bb->trainable) set_trainable(*net_->find(backbone_name(bb->name)), false);
      load_pretrained(*this, *bb);
    }
  }
}

Model::Model(ModelSpec spec, std::unique_ptr<nn::Layer> net, std::string cam_layer)
    : spec_(std::move(spec)), net_(std::move(net)), cam_layer_(std::move(cam_layer)), custom_(true) {
  spatial_layers_ = collect_spatial(*net_);
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

Tensor Model::logits(const Tensor& batch, Mode mode) {
  if (batch.rank() != 4 || batch.dim(1) != 3) {
    throw ValidationError("model input must be N x 3 x H x W, got " + batch.shape_string());
  }
  forwards_ += static_cast<std::size_t>(batch.dim(0));
  return net_->forward(batch, mode);
}

Tensor Model::predict(const Tensor& batch, int chunk) {
  const int n = batch.dim(0);
  std::vector<Tensor> parts;
  for (int first = 0; first < n; first += chunk) {
    const int count = std::min(chunk, n - first);
    nn::Shape s = batch.shape();
    s[0] = count;
    const std::size_t per = batch.size() / static_cast<std::size_t>(n);
    std::vector<nn::Real> vals(batch.data() + per * first, batch.data() + per * (first + count));
    parts.push_back(nn::softmax(logits(Tensor(s, std::move(vals)), Mode::Eval)));
  }
  const int classes = parts.front().dim(1);
  Tensor out({n, classes});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + off);
    off += p.size();
  }
  return out;
}

Tensor Model::backward(const Tensor& grad_logits) { return net_->backward(grad_logits); }

Tensor Model::extract_features(const Tensor& batch, std::string_view branch) {
  if (spec_.architecture == Architecture::VRFuseNet && branch.empty()) {
    forwards_ += static_cast<std::size_t>(batch.dim(0));
    return static_cast<FusionNet&>(*net_).fused(batch, Mode::Eval);
  }
  std::string name(branch);
  if (name.empty()) {
    name = spec_.architecture == Architecture::Transfer ? std::string(backbone_name(spec_.backbone.name)) : "features";
  }
  nn::Layer* l = net_->find(name);
  if (!l) throw ValidationError("model has no branch '" + name + "'");
  forwards_ += static_cast<std::size_t>(batch.dim(0));
  return l->forward(batch, Mode::Eval);
}

std::vector<std::pair<std::string, nn::Parameter*>> Model::named_parameters() {
  std::vector<std::pair<std::string, nn::Parameter*>> out;
  net_->visit_children([&](nn::Layer& child) {
    child.visit_parameters([&](const std::string& path, nn::Parameter& p) { out.emplace_back(path, &p); }, "");
  });
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  net_->visit_children([&](nn::Layer& child) {
    child.visit_buffers([&](const std::string& path, Tensor& t) { out.emplace_back(path, &t); }, "");
  });
  return out;
}

std::vector<nn::Parameter*> Model::parameters(bool trainable_only) {
  std::vector<nn::Parameter*> out;
  for (auto& [_, p] : named_parameters()) {
    if (!trainable_only || p->trainable) out.push_back(p);
  }
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

nn::Layer* Model::find_layer(std::string_view path) { return net_->find(path); }

nn::Layer& Model::layer(std::string_view path) {
  nn::Layer* l = find_layer(path);
  if (!l) {
    std::string hint;
    for (std::size_t i = spatial_layers_.size() > 8 ? spatial_layers_.size() - 8 : 0; i < spatial_layers_.size(); ++i) {
      hint += (hint.empty() ? "" : ", ") + spatial_layers_[i];
    }
    throw ValidationError("unknown layer '" + std::string(path) + "'; spatial layers include: " + hint);
  }
  return *l;
}

Model Model::clone() {
  if (custom_) throw Error("clone() is not available for hand-built networks");
  Model copy(spec_);
  auto src = named_parameters();
  auto dst = copy.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].second->value = src[i].second->value;
    dst[i].second->trainable = src[i].second->trainable;
  }
  auto sb = named_buffers();
  auto db = copy.named_buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) *db[i].second = *sb[i].second;
  return copy;
}

}  // namespace vrfuse::models
