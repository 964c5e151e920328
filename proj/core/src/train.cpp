#include "vrfuse/train.hpp"

#include <chrono>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vrfuse/enhance.hpp"
#include "vrfuse/error.hpp"
#include "vrfuse/image.hpp"
#include "vrfuse/nn/optim.hpp"
#include "vrfuse/random.hpp"

namespace vrfuse::train {

namespace fs = std::filesystem;
using nn::Tensor;

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (bn_recalibration < 0) throw ValidationError("bn_recalibration must be >= 0");
  nn::Optimizer::parse_kind(optimizer);
}

LabeledBatch load_split(const dataset::DatasetManifest& manifest, dataset::Split split, int input_size) {
  const auto records = manifest.with_split(split);
  if (records.empty()) {
    throw ValidationError("manifest has no " + std::string(dataset::split_name(split)) + " records");
  }
  LabeledBatch out;
  out.images = Tensor({static_cast<int>(records.size()), 3, input_size, input_size});
  const std::size_t plane = static_cast<std::size_t>(input_size) * input_size;
  for (std::size_t n = 0; n < records.size(); ++n) {
    const auto img = enhance::normalize_resize(read_color(records[n].path), input_size);
    nn::Real* dst = out.images.data() + n * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      for (int c = 0; c < 3; ++c) dst[c * plane + p] = img.data[p * 3 + c];
    }
    out.labels.push_back(static_cast<int>(index_of(records[n].label)));
    out.paths.push_back(records[n].path);
  }
  return out;
}

LabeledBatch slice(const LabeledBatch& data, const std::vector<std::size_t>& order, std::size_t first,
                   std::size_t count) {
  nn::Shape shape = data.images.shape();
  shape[0] = static_cast<int>(count);
  const std::size_t per = data.images.size() / data.labels.size();
  LabeledBatch out;
  out.images = Tensor(shape);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = order.empty() ? first + i : order[first + i];
    std::copy_n(data.images.data() + src * per, per, out.images.data() + i * per);
    out.labels.push_back(data.labels[src]);
    if (!data.paths.empty()) out.paths.push_back(data.paths[src]);
  }
  return out;
}

namespace {

int correct(const Tensor& logits, const std::vector<int>& labels) {
  const int classes = logits.dim(1);
  int hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += eval::argmax(logits.values().subspan(i * classes, classes)) == labels[i];
  }
  return hits;
}

struct Snapshot {
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;

  static Snapshot take(models::Model& model) {
    Snapshot s;
    for (auto& [_, p] : model.named_parameters()) s.params.push_back(p->value);
    for (auto& [_, b] : model.named_buffers()) s.buffers.push_back(*b);
    return s;
  }
  void restore(models::Model& model) const {
    auto params = model.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].second->value = this->params[i];
    auto bufs = model.named_buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = buffers[i];
  }
};

}  // namespace

std::pair<double, double> loss_and_accuracy(models::Model& model, const LabeledBatch& data, int chunk) {
  double loss = 0;
  int hits = 0;
  for (std::size_t first = 0; first < data.labels.size(); first += chunk) {
    const std::size_t count = std::min<std::size_t>(chunk, data.labels.size() - first);
    const LabeledBatch part = slice(data, {}, first, count);
    const Tensor logits = model.logits(part.images, nn::Mode::Eval);
    loss += nn::softmax_cross_entropy(logits, part.labels, nullptr) * static_cast<double>(count);
    hits += correct(logits, part.labels);
  }
  const double n = static_cast<double>(data.labels.size());
  return {loss / n, hits / n};
}

namespace {

// Recomputes every batch-norm layer's statistics with the current weights
// from the first `samples` entries of the epoch order.
void recalibrate_batchnorm(models::Model& model, const LabeledBatch& data, const std::vector<std::size_t>& order,
                           std::size_t samples, std::size_t batch) {
  std::vector<nn::BatchNorm2d*> layers;
  nn::for_each_layer(model.network(), [&](const std::string&, nn::Layer& l) {
    if (auto* bn = dynamic_cast<nn::BatchNorm2d*>(&l)) layers.push_back(bn);
  });
  if (layers.empty()) return;
  for (auto* bn : layers) bn->begin_recalibration();
  samples = std::min(samples, order.size());
  for (std::size_t first = 0; first < samples; first += batch) {
    const LabeledBatch part = slice(data, order, first, std::min(batch, samples - first));
    model.logits(part.images, nn::Mode::Train);
  }
  for (auto* bn : layers) bn->finish_recalibration();
}

}  // namespace

History fit(models::Model& model, const LabeledBatch& train_set, const LabeledBatch& val_set, const TrainConfig& cfg,
            const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.labels.empty()) throw ValidationError("training split is empty");
  if (val_set.labels.empty()) throw ValidationError("validation split is empty");

  nn::Optimizer opt(nn::Optimizer::parse_kind(cfg.optimizer), cfg.learning_rate);
  const auto params = model.parameters(true);
  History h;
  Snapshot best;
  std::vector<std::size_t> order(train_set.labels.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(cfg.seed, 0x7400 + static_cast<std::uint64_t>(epoch));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0;
    int hits = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - first);
      const LabeledBatch batch = slice(train_set, order, first, count);
      nn::Optimizer::zero_grad(params);
      const Tensor logits = model.logits(batch.images, nn::Mode::Train);
      Tensor grad;
      loss_sum += nn::softmax_cross_entropy(logits, batch.labels, &grad) * static_cast<double>(count);
      hits += correct(logits, batch.labels);
      model.backward(grad);
      opt.step(params);
    }
    if (cfg.bn_recalibration > 0) {
      recalibrate_batchnorm(model, train_set, order, static_cast<std::size_t>(cfg.bn_recalibration),
                            static_cast<std::size_t>(cfg.batch_size));
    }
    const double n = static_cast<double>(order.size());
    h.train_loss.push_back(loss_sum / n);
    h.train_accuracy.push_back(hits / n);
    const auto [vl, va] = loss_and_accuracy(model, val_set);
    h.val_loss.push_back(vl);
    h.val_accuracy.push_back(va);
    if (h.best_epoch < 0 || va > h.best_val_accuracy) {
      h.best_epoch = epoch;
      h.best_val_accuracy = va;
      best = Snapshot::take(model);
    }
    if (on_epoch) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      on_epoch({epoch + 1, h.train_loss.back(), h.train_accuracy.back(), vl, va, secs});
    }
  }
  best.restore(model);
  return h;
}

History train(models::Model& model, const dataset::DatasetManifest& manifest, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  const int size = model.spec().input_size;
  const LabeledBatch tr = load_split(manifest, dataset::Split::Train, size);
  const LabeledBatch va = load_split(manifest, dataset::Split::Val, size);
  return fit(model, tr, va, cfg, on_epoch);
}

eval::MetricsReport evaluate(models::Model& model, const LabeledBatch& test_set, int chunk) {
  if (test_set.labels.empty()) throw ValidationError("test split is empty");
  const Tensor probs = model.predict(test_set.images, chunk);
  return eval::evaluate_scores(probs.values(), test_set.labels, models::label_order());
}

eval::MetricsReport evaluate(models::Model& model, const dataset::DatasetManifest& manifest) {
  return evaluate(model, load_split(manifest, dataset::Split::Test, model.spec().input_size));
}

void write_history(const History& h, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os.precision(12);
  os << "epoch,train_loss,train_accuracy,val_loss,val_accuracy,best\n";
  for (std::size_t e = 0; e < h.epochs(); ++e) {
    os << e + 1 << "," << h.train_loss[e] << "," << h.train_accuracy[e] << "," << h.val_loss[e] << ","
       << h.val_accuracy[e] << "," << (static_cast<int>(e) == h.best_epoch ? 1 : 0) << "\n";
  }
}

History read_history(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file.string());
  History h;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 6) throw ValidationError("malformed history row: " + line);
    h.train_loss.push_back(v[1]);
    h.train_accuracy.push_back(v[2]);
    h.val_loss.push_back(v[3]);
    h.val_accuracy.push_back(v[4]);
    if (v[5] == 1) {
      h.best_epoch = static_cast<int>(h.train_loss.size()) - 1;
      h.best_val_accuracy = v[4];
    }
  }
  return h;
}

}  // namespace vrfuse::train
