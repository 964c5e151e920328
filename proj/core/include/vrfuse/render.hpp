#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "vrfuse/metrics.hpp"
#include "vrfuse/models.hpp"
#include "vrfuse/train.hpp"
#include "vrfuse/xai.hpp"

namespace vrfuse::render {

/// JET color for each heat value in [0, 1], as 8-bit BGR.
cv::Mat colorize(const xai::Map& heat);

/// out = image * (1 - opacity * h) + jet(h) * opacity * h, per pixel. The
/// heatmap is resized to the image when needed.
cv::Mat overlay(const cv::Mat& bgr, const xai::Map& heat, double opacity = 0.5);

struct GridModel {
  std::string name;
  models::Model* model;
};

struct GridCell {
  int row = 0;
  int column = 0;
  std::string model;
  std::string method;  // "original" for column 0
  int target_class = -1;
  std::string layer;
  bool ok = true;
  std::string message;
};

struct Grid {
  cv::Mat image;
  int rows = 0;
  int columns = 0;
  std::vector<GridCell> cells;
};

/// Rows are models, columns are the original image followed by one overlay per
/// method. A failing cell is drawn as a placeholder and recorded with its error.
/// When `heatmaps` is given it receives one entry per method cell, row-major,
/// empty for failed cells.
Grid comparison_grid(const std::vector<GridModel>& models, const cv::Mat& bgr, const std::vector<xai::Method>& methods,
                     const xai::CamOptions& opts = {}, int cell_size = 128, double opacity = 0.5,
                     std::vector<std::optional<xai::Heatmap>>* heatmaps = nullptr);

/// One tab-separated line per cell.
void write_grid_manifest(const Grid& grid, const std::filesystem::path& file);

/// Train/val loss and accuracy curves.
cv::Mat plot_history(const train::History& history, int width = 640, int height = 360);

/// One ROC curve per class with the chance diagonal.
cv::Mat plot_roc(const eval::MetricsReport& report, int size = 480);

}  // namespace vrfuse::render
