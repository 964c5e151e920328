#include "vrfuse/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <opencv2/imgproc.hpp>

#include "vrfuse/error.hpp"

namespace vrfuse::enhance {

namespace {

struct Span {
  int begin;
  int end;
  double center() const { return (begin + end - 1) / 2.0; }
};

// Integer-division tiling; the last tile absorbs the remainder.
std::vector<Span> tile_spans(int extent, int tiles) {
  std::vector<Span> spans(tiles);
  const int step = extent / tiles;
  for (int i = 0; i < tiles; ++i) {
    spans[i] = {i * step, i == tiles - 1 ? extent : (i + 1) * step};
  }
  return spans;
}

// Neighboring tile indices and distances for one coordinate. Outside the
// outermost centers both neighbors collapse onto the edge tile.
struct Neighbors {
  int lo;
  int hi;
  double d_lo;
  double d_hi;
};

Neighbors locate(double pos, const std::vector<Span>& spans) {
  const int last = static_cast<int>(spans.size()) - 1;
  if (pos <= spans.front().center()) return {0, 0, 0.0, 1.0};
  if (pos >= spans.back().center()) return {last, last, 0.0, 1.0};
  int i = 0;
  while (i < last && spans[i + 1].center() <= pos) ++i;
  return {i, i + 1, pos - spans[i].center(), spans[i + 1].center() - pos};
}

}  // namespace

TileGrid parse_grid(std::string_view text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string_view::npos) throw std::invalid_argument("no separator");
    TileGrid g{std::stoi(std::string(text.substr(0, x))), std::stoi(std::string(text.substr(x + 1)))};
    if (g.rows < 2 || g.cols < 2) throw ValidationError("tile grid must be at least 2x2");
    return g;
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception&) {
    throw ValidationError("bad tile grid '" + std::string(text) + "', expected RxC");
  }
}

double clip_factor(double region_pixels, int gray_levels, double alpha, double s_max) {
  if (region_pixels <= 0 || gray_levels <= 0) throw ValidationError("clip_factor: M and N must be positive");
  if (alpha < 0 || s_max < 1) throw ValidationError("clip_factor: need alpha >= 0 and s_max >= 1");
  return region_pixels / gray_levels * (1.0 + alpha / 100.0 * (s_max - 1.0));
}

double ClipSpec::beta(double region_pixels, int gray_levels) const {
  if (normalized_clip) {
    return region_pixels / gray_levels * std::max(*normalized_clip, 1.0);
  }
  return clip_factor(region_pixels, gray_levels, alpha, s_max);
}

std::vector<std::int64_t> clip_and_redistribute(std::span<const std::int64_t> hist, double beta) {
  std::vector<std::int64_t> out(hist.begin(), hist.end());
  const auto bins = static_cast<std::int64_t>(out.size());
  std::int64_t total = 0;
  for (auto h : out) {
    if (h < 0) throw ValidationError("clip_and_redistribute: negative histogram entry");
    total += h;
  }
  if (beta * static_cast<double>(bins) < static_cast<double>(total)) {
    throw ValidationError("clip_and_redistribute: cap " + std::to_string(beta) + " x " + std::to_string(bins) +
                          " bins cannot hold " + std::to_string(total) + " counts");
  }
  const auto cap = static_cast<std::int64_t>(std::ceil(beta - 1e-9));
  std::int64_t excess = 0;
  for (auto& h : out) {
    if (h > cap) {
      excess += h - cap;
      h = cap;
    }
  }
  while (excess > 0) {
    std::int64_t open = 0;
    for (auto h : out) open += h < cap ? 1 : 0;
    const std::int64_t share = excess / open;
    if (share > 0) {
      for (auto& h : out) {
        if (h >= cap) continue;
        const std::int64_t add = std::min(share, cap - h);
        h += add;
        excess -= add;
      }
    } else {
      for (auto& h : out) {
        if (excess == 0) break;
        if (h < cap) {
          ++h;
          --excess;
        }
      }
    }
  }
  return out;
}

TileMapping tile_mapping(std::span<const std::int64_t> hist, std::int64_t region_pixels, int gray_levels) {
  TileMapping m;
  m.histogram.assign(hist.begin(), hist.end());
  m.lut.resize(hist.size());
  const double scale = static_cast<double>(gray_levels - 1) / static_cast<double>(region_pixels);
  std::int64_t cum = 0;
  for (std::size_t n = 0; n < hist.size(); ++n) {
    cum += hist[n];
    const long v = std::lround(scale * static_cast<double>(cum));
    m.lut[n] = static_cast<int>(std::clamp(v, 0L, static_cast<long>(gray_levels - 1)));
  }
  return m;
}

double bilinear_blend(double f_ul, double f_ur, double f_ll, double f_lr, double x, double y, double r, double s) {
  if (!(x + y > 0) || !(r + s > 0)) throw ValidationError("bilinear_blend: degenerate distances");
  const double wy_up = y / (x + y);
  const double wy_down = x / (x + y);
  return s / (r + s) * (wy_up * f_ul + wy_down * f_ll) + r / (r + s) * (wy_up * f_ur + wy_down * f_lr);
}

cv::Mat clahe_channel(const cv::Mat& gray, const TileGrid& grid, const ClipSpec& clip) {
  if (gray.type() != CV_8UC1) throw ValidationError("clahe: expected an 8-bit single-channel image");
  if (grid.rows < 2 || grid.cols < 2) throw ValidationError("clahe: tile grid must be at least 2x2");
  if (gray.rows < 2 * grid.rows || gray.cols < 2 * grid.cols) {
    throw ValidationError("clahe: image " + std::to_string(gray.cols) + "x" + std::to_string(gray.rows) +
                          " is smaller than 2x2 pixels per tile");
  }
  const auto rows = tile_spans(gray.rows, grid.rows);
  const auto cols = tile_spans(gray.cols, grid.cols);

  std::vector<std::vector<int>> luts(static_cast<std::size_t>(grid.rows * grid.cols));
  for (int ti = 0; ti < grid.rows; ++ti) {
    for (int tj = 0; tj < grid.cols; ++tj) {
      std::vector<std::int64_t> hist(kGrayLevels, 0);
      for (int y = rows[ti].begin; y < rows[ti].end; ++y) {
        const auto* p = gray.ptr<std::uint8_t>(y);
        for (int x = cols[tj].begin; x < cols[tj].end; ++x) ++hist[p[x]];
      }
      const std::int64_t m = static_cast<std::int64_t>(rows[ti].end - rows[ti].begin) *
                             (cols[tj].end - cols[tj].begin);
      auto& lut = luts[static_cast<std::size_t>(ti * grid.cols + tj)];
      const bool constant = std::count_if(hist.begin(), hist.end(), [](auto h) { return h > 0; }) <= 1;
      if (constant) {
        lut.resize(kGrayLevels);
        std::iota(lut.begin(), lut.end(), 0);
        continue;
      }
      const auto clipped = clip_and_redistribute(hist, clip.beta(static_cast<double>(m), kGrayLevels));
      lut = tile_mapping(clipped, m, kGrayLevels).lut;
    }
  }

  std::vector<Neighbors> col_nb(static_cast<std::size_t>(gray.cols));
  for (int x = 0; x < gray.cols; ++x) col_nb[x] = locate(x, cols);

  cv::Mat out(gray.size(), CV_8UC1);
  for (int y = 0; y < gray.rows; ++y) {
    const Neighbors rn = locate(y, rows);
    const auto* src = gray.ptr<std::uint8_t>(y);
    auto* dst = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) {
      const Neighbors& cn = col_nb[x];
      const int p = src[x];
      const auto lut = [&](int ti, int tj) { return luts[static_cast<std::size_t>(ti * grid.cols + tj)][p]; };
      const double v = bilinear_blend(lut(rn.lo, cn.lo), lut(rn.lo, cn.hi), lut(rn.hi, cn.lo), lut(rn.hi, cn.hi),
                                      rn.d_lo, rn.d_hi, cn.d_lo, cn.d_hi);
      dst[x] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

cv::Mat clahe(const cv::Mat& bgr, const TileGrid& grid, const ClipSpec& clip) {
  if (bgr.type() != CV_8UC3) throw ValidationError("clahe: expected an 8-bit BGR image");
  cv::Mat lab;
  cv::cvtColor(bgr, lab, cv::COLOR_BGR2Lab);
  std::vector<cv::Mat> planes;
  cv::split(lab, planes);
  planes[0] = clahe_channel(planes[0], grid, clip);
  cv::merge(planes, lab);
  cv::Mat out;
  cv::cvtColor(lab, out, cv::COLOR_Lab2BGR);
  return out;
}

EnhancedTensor normalize_resize(const cv::Mat& bgr, int size) {
  if (bgr.type() != CV_8UC3) throw ValidationError("normalize_resize: expected an 8-bit BGR image");
  cv::Mat resized;
  if (bgr.rows == size && bgr.cols == size) {
    resized = bgr;
  } else {
    cv::resize(bgr, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  }
  EnhancedTensor t{size, size, std::vector<double>(static_cast<std::size_t>(size) * size * 3)};
  for (int y = 0; y < size; ++y) {
    const auto* p = resized.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * size + x) * 3;
      // BGR -> RGB
      t.data[base + 0] = p[x][2] / 255.0;
      t.data[base + 1] = p[x][1] / 255.0;
      t.data[base + 2] = p[x][0] / 255.0;
    }
  }
  return t;
}

double luminance_stddev(const cv::Mat& bgr) {
  cv::Mat lab;
  cv::cvtColor(bgr, lab, cv::COLOR_BGR2Lab);
  std::vector<cv::Mat> planes;
  cv::split(lab, planes);
  cv::Scalar mean, stddev;
  cv::meanStdDev(planes[0], mean, stddev);
  return stddev[0];
}

}  // namespace vrfuse::enhance
