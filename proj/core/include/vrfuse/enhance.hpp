#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

namespace vrfuse::enhance {

inline constexpr int kGrayLevels = 256;

struct TileGrid {
  int rows = 8;
  int cols = 8;
};

/// Parses "8x8".
TileGrid parse_grid(std::string_view text);

/// Clip limit either as (alpha, s_max) or as a normalized clip multiplier.
///
/// A normalized clip c is the multiplier on the mean bin height M/N, so
/// beta = (M/N) * max(c, 1). It is the same quantity as
/// 1 + alpha/100 * (s_max - 1) and never drops below the alpha = 0 bound.
struct ClipSpec {
  double alpha = 0.0;
  double s_max = 1.0;
  std::optional<double> normalized_clip = 0.5;

  double beta(double region_pixels, int gray_levels) const;

  static ClipSpec normalized(double clip) { return {0.0, 1.0, clip}; }
  static ClipSpec slope(double alpha, double s_max) { return {alpha, s_max, std::nullopt}; }
};

/// beta = (M/N) * (1 + alpha/100 * (s_max - 1)).
double clip_factor(double region_pixels, int gray_levels, double alpha, double s_max);

/// Caps every bin at ceil(beta) and spreads the excess over bins still below
/// the cap, repeating until none is left. Mass is preserved exactly.
std::vector<std::int64_t> clip_and_redistribute(std::span<const std::int64_t> hist, double beta);

struct TileMapping {
  std::vector<int> lut;
  std::vector<std::int64_t> histogram;
};

/// lut[n] = round((N-1)/M * sum_{k<=n} hist[k]).
TileMapping tile_mapping(std::span<const std::int64_t> hist, std::int64_t region_pixels, int gray_levels);

/// Blends four mapped values of one pixel. x/y are the distances to the
/// upper/lower tile-center rows, r/s to the left/right tile-center columns.
double bilinear_blend(double f_ul, double f_ur, double f_ll, double f_lr, double x, double y, double r, double s);

/// Tiled clip-limited equalization of a single 8-bit channel.
cv::Mat clahe_channel(const cv::Mat& gray, const TileGrid& grid, const ClipSpec& clip);

/// CLAHE on the L channel of the Lab representation of an 8-bit BGR image;
/// A and B are carried through unchanged.
cv::Mat clahe(const cv::Mat& bgr, const TileGrid& grid = {}, const ClipSpec& clip = {});

/// Model input: height x width x 3, RGB, values in [0, 1], row-major HWC.
struct EnhancedTensor {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Bilinear resize to size x size, then divide by 255.
EnhancedTensor normalize_resize(const cv::Mat& bgr, int size = 128);

/// Standard deviation of the Lab L channel, used by the contrast report.
double luminance_stddev(const cv::Mat& bgr);

}  // namespace vrfuse::enhance
