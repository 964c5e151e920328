#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vrfuse/dataset.hpp"
#include "vrfuse/metrics.hpp"
#include "vrfuse/models.hpp"
#include "vrfuse/tensor.hpp"

namespace vrfuse::train {

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-5;
  int epochs = 60;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";
  /// Training samples used to re-estimate batch-norm statistics after each
  /// epoch (0 keeps the momentum averages from the training steps).
  int bn_recalibration = 0;

  void validate() const;
};

struct History {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  int best_epoch = -1;  // zero-based
  double best_val_accuracy = 0;

  std::size_t epochs() const { return train_loss.size(); }
};

/// Images as an N x 3 x H x W batch plus integer labels (grade indices).
struct LabeledBatch {
  nn::Tensor images;
  std::vector<int> labels;
  std::vector<std::filesystem::path> paths;

  int size() const { return static_cast<int>(labels.size()); }
};

/// Loads every record of `split`, resized to `input_size` and scaled to [0, 1].
LabeledBatch load_split(const dataset::DatasetManifest& manifest, dataset::Split split, int input_size);

/// Rows [first, first + count) of a batch, in the given order when `order` is non-empty.
LabeledBatch slice(const LabeledBatch& data, const std::vector<std::size_t>& order, std::size_t first,
                   std::size_t count);

struct EpochLog {
  int epoch;  // one-based
  double train_loss, train_accuracy, val_loss, val_accuracy;
  double seconds;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch training with cross-entropy loss. After the last epoch the
/// weights of the epoch with the best validation accuracy are restored (the
/// earliest such epoch on ties).
History fit(models::Model& model, const LabeledBatch& train_set, const LabeledBatch& val_set, const TrainConfig& cfg,
            const EpochCallback& on_epoch = {});

/// Loads train/val splits from the manifest and calls fit().
History train(models::Model& model, const dataset::DatasetManifest& manifest, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

/// Mean loss and accuracy in eval mode.
std::pair<double, double> loss_and_accuracy(models::Model& model, const LabeledBatch& data, int chunk = 64);

eval::MetricsReport evaluate(models::Model& model, const LabeledBatch& test_set, int chunk = 64);
eval::MetricsReport evaluate(models::Model& model, const dataset::DatasetManifest& manifest);

void write_history(const History& history, const std::filesystem::path& file);
History read_history(const std::filesystem::path& file);

}  // namespace vrfuse::train
