#include "vrfuse/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/imgproc.hpp>

#include "vrfuse/enhance.hpp"
#include "vrfuse/error.hpp"

namespace vrfuse::render {

namespace {

const cv::Scalar kPalette[] = {{31, 119, 180}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214}, {189, 103, 148}};

void label(cv::Mat& img, const std::string& text, cv::Point at, double scale = 0.35) {
  cv::putText(img, text, at, cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(0, 0, 0), 3, cv::LINE_AA);
  cv::putText(img, text, at, cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
}

cv::Mat placeholder(int size) {
  cv::Mat cell(size, size, CV_8UC3, cv::Scalar(64, 64, 64));
  cv::line(cell, {0, 0}, {size - 1, size - 1}, cv::Scalar(0, 0, 200), 2);
  cv::line(cell, {0, size - 1}, {size - 1, 0}, cv::Scalar(0, 0, 200), 2);
  return cell;
}

nn::Tensor image_tensor(const cv::Mat& bgr, int size) {
  const auto e = enhance::normalize_resize(bgr, size);
  return models::to_batch(std::span<const enhance::EnhancedTensor>(&e, 1));
}

}  // namespace

cv::Mat colorize(const xai::Map& heat) {
  cv::Mat gray(heat.height, heat.width, CV_8U);
  for (int y = 0; y < heat.height; ++y) {
    for (int x = 0; x < heat.width; ++x) {
      gray.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(std::clamp(heat.at(y, x), 0.0, 1.0) * 255));
    }
  }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  return color;
}

cv::Mat overlay(const cv::Mat& bgr, const xai::Map& heat, double opacity) {
  if (bgr.type() != CV_8UC3) throw ValidationError("overlay expects an 8-bit BGR image");
  if (opacity < 0 || opacity > 1) throw ValidationError("opacity must be in [0, 1]");
  const xai::Map h = heat.height == bgr.rows && heat.width == bgr.cols ? heat : xai::upsample(heat, bgr.rows, bgr.cols);
  const cv::Mat jet = colorize(h);
  cv::Mat out(bgr.size(), CV_8UC3);
  for (int y = 0; y < bgr.rows; ++y) {
    for (int x = 0; x < bgr.cols; ++x) {
      const double a = opacity * std::clamp(h.at(y, x), 0.0, 1.0);
      const auto& src = bgr.at<cv::Vec3b>(y, x);
      const auto& col = jet.at<cv::Vec3b>(y, x);
      auto& dst = out.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) dst[c] = cv::saturate_cast<std::uint8_t>(std::lround(src[c] * (1 - a) + col[c] * a));
    }
  }
  return out;
}

Grid comparison_grid(const std::vector<GridModel>& models, const cv::Mat& bgr, const std::vector<xai::Method>& methods,
                     const xai::CamOptions& opts, int cell_size, double opacity,
                     std::vector<std::optional<xai::Heatmap>>* heatmaps) {
  if (models.empty()) throw ValidationError("comparison grid needs at least one model");
  Grid grid;
  grid.rows = static_cast<int>(models.size());
  grid.columns = static_cast<int>(methods.size()) + 1;
  grid.image = cv::Mat(grid.rows * cell_size, grid.columns * cell_size, CV_8UC3, cv::Scalar(0, 0, 0));
  cv::Mat original;
  cv::resize(bgr, original, cv::Size(cell_size, cell_size), 0, 0, cv::INTER_AREA);

  for (int r = 0; r < grid.rows; ++r) {
    const auto& gm = models[r];
    auto place = [&](int c, const cv::Mat& cell) { cell.copyTo(grid.image(cv::Rect(c * cell_size, r * cell_size, cell_size, cell_size))); };
    place(0, original);
    grid.cells.push_back({r, 0, gm.name, "original", -1, "", true, ""});
    label(grid.image, gm.name, {4, r * cell_size + cell_size - 6});

    nn::Tensor input;
    std::string input_error;
    try {
      input = image_tensor(bgr, gm.model->spec().input_size);
    } catch (const std::exception& e) {
      input_error = e.what();
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const int c = static_cast<int>(m) + 1;
      GridCell cell{r, c, gm.name, std::string(xai::method_name(methods[m])), opts.target_class.value_or(-1),
                    opts.layer.empty() ? gm.model->default_cam_layer() : opts.layer, true, ""};
      try {
        if (!input_error.empty()) throw Error(input_error);
        const xai::Heatmap h = xai::explain(*gm.model, input, methods[m], opts);
        cell.target_class = h.target_class;
        cell.layer = h.layer;
        if (!h.warnings.empty()) cell.message = h.warnings.front();
        place(c, overlay(original, h.map, opacity));
        if (heatmaps) heatmaps->push_back(h);
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.message = e.what();
        place(c, placeholder(cell_size));
        if (heatmaps) heatmaps->push_back(std::nullopt);
      }
      if (r == 0) label(grid.image, cell.method, {c * cell_size + 4, 12});
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

void write_grid_manifest(const Grid& grid, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os << "# rows " << grid.rows << " columns " << grid.columns << "\n";
  os << "row\tcolumn\tmodel\tmethod\tclass\tlayer\tstatus\tmessage\n";
  for (const auto& c : grid.cells) {
    std::string msg = c.message;
    std::replace(msg.begin(), msg.end(), '\t', ' ');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    os << c.row << "\t" << c.column << "\t" << c.model << "\t" << c.method << "\t"
       << (c.target_class >= 0 ? canonical_name(kAllGrades[c.target_class]) : std::string_view("-")) << "\t"
       << (c.layer.empty() ? "-" : c.layer) << "\t" << (c.ok ? "ok" : "error") << "\t" << msg << "\n";
  }
}

cv::Mat plot_history(const train::History& h, int width, int height) {
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int half = width / 2;
  const int pad = 30;
  auto panel = [&](int x0, const std::vector<double>& a, const std::vector<double>& b, const std::string& title,
                   bool unit_range) {
    const int w = half - 2 * pad, hgt = height - 2 * pad;
    cv::rectangle(img, {x0 + pad, pad}, {x0 + pad + w, pad + hgt}, cv::Scalar(0, 0, 0), 1);
    cv::putText(img, title, {x0 + pad, pad - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    double hi = unit_range ? 1.0 : 0.0;
    for (double v : a) hi = std::max(hi, v);
    for (double v : b) hi = std::max(hi, v);
    if (hi <= 0) hi = 1;
    auto draw = [&](const std::vector<double>& s, const cv::Scalar& color) {
      if (s.empty()) return;
      const double n = std::max<std::size_t>(1, s.size() - 1);
      for (std::size_t i = 0; i < s.size(); ++i) {
        const cv::Point p(x0 + pad + static_cast<int>(std::lround(w * (s.size() == 1 ? 0.5 : i / n))),
                          pad + hgt - static_cast<int>(std::lround(hgt * s[i] / hi)));
        cv::circle(img, p, 2, color, cv::FILLED);
        if (i > 0) {
          const cv::Point q(x0 + pad + static_cast<int>(std::lround(w * (i - 1) / n)),
                            pad + hgt - static_cast<int>(std::lround(hgt * s[i - 1] / hi)));
          cv::line(img, q, p, color, 1, cv::LINE_AA);
        }
      }
    };
    draw(a, kPalette[0]);
    draw(b, kPalette[1]);
  };
  panel(0, h.train_loss, h.val_loss, "loss (blue train, orange val)", false);
  panel(half, h.train_accuracy, h.val_accuracy, "accuracy (blue train, orange val)", true);
  return img;
}

cv::Mat plot_roc(const eval::MetricsReport& report, int size) {
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  const int pad = 40, w = size - 2 * pad;
  auto to_px = [&](double fpr, double tpr) {
    return cv::Point(pad + static_cast<int>(std::lround(fpr * w)), pad + w - static_cast<int>(std::lround(tpr * w)));
  };
  cv::rectangle(img, to_px(0, 1), to_px(1, 0), cv::Scalar(0, 0, 0), 1);
  cv::line(img, to_px(0, 0), to_px(1, 1), cv::Scalar(160, 160, 160), 1, cv::LINE_AA);
  for (std::size_t c = 0; c < report.per_class_roc.size(); ++c) {
    const auto& curve = report.per_class_roc[c];
    const cv::Scalar color = kPalette[c % std::size(kPalette)];
    for (std::size_t i = 1; i < curve.size(); ++i) {
      cv::line(img, to_px(curve[i - 1].fpr, curve[i - 1].tpr), to_px(curve[i].fpr, curve[i].tpr), color, 2,
               cv::LINE_AA);
    }
    char text[96];
    std::snprintf(text, sizeof text, "%s AUC %.3f", c < report.labels.size() ? report.labels[c].c_str() : "?",
                  report.per_class_auc[c]);
    cv::putText(img, text, {pad + w / 2, pad + w - 12 - 16 * static_cast<int>(report.per_class_roc.size() - 1 - c)},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, color, 1, cv::LINE_AA);
  }
  cv::putText(img, "FPR", {size / 2 - 10, size - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1);
  cv::putText(img, "TPR", {4, size / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0), 1);
  return img;
}

}  // namespace vrfuse::render
