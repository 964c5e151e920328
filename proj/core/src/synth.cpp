#include "vrfuse/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "vrfuse/error.hpp"
#include "vrfuse/image.hpp"
#include "vrfuse/random.hpp"

namespace vrfuse::synth {

namespace fs = std::filesystem;

namespace {

cv::Point random_inside(Rng& rng, cv::Point2d center, double radius, double margin) {
  const double r = radius * std::sqrt(rng.uniform()) * margin;
  const double t = rng.uniform(0, 2 * std::numbers::pi);
  return {static_cast<int>(std::lround(center.x + r * std::cos(t))),
          static_cast<int>(std::lround(center.y + r * std::sin(t)))};
}

void tortuous_line(cv::Mat& img, Rng& rng, cv::Point2d start, double heading, int steps, double step, double wiggle,
                   const cv::Scalar& color, int thickness) {
  cv::Point2d p = start;
  for (int i = 0; i < steps; ++i) {
    heading += rng.uniform(-wiggle, wiggle);
    const cv::Point2d q(p.x + step * std::cos(heading), p.y + step * std::sin(heading));
    cv::line(img, p, q, color, thickness, cv::LINE_AA);
    p = q;
  }
}

}  // namespace

cv::Mat draw_fundus(Grade grade, std::uint64_t seed, int size) {
  if (size < 32) throw ValidationError("synthetic images must be at least 32 px");
  Rng rng(seed);
  const double s = size / 128.0;
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(0, 0, 0));
  const cv::Point2d center(size / 2.0 + rng.uniform(-3, 3) * s, size / 2.0 + rng.uniform(-3, 3) * s);
  const double radius = size * rng.uniform(0.43, 0.47);

  const double tone = rng.uniform(0.85, 1.1);
  const cv::Scalar base(30 * tone, 75 * tone, 175 * tone);
  cv::circle(img, center, static_cast<int>(radius), base, cv::FILLED, cv::LINE_AA);
  // Darker rim.
  for (int i = 0; i < 6; ++i) {
    cv::circle(img, center, static_cast<int>(radius - i * 2 * s), base * (0.7 + 0.05 * i), static_cast<int>(2 * s) + 1,
               cv::LINE_AA);
  }

  const bool left = rng.uniform() < 0.5;
  const cv::Point2d disc(center.x + (left ? -1 : 1) * radius * 0.45, center.y + rng.uniform(-6, 6) * s);
  for (int v = 0; v < 4; ++v) {
    const double heading = (left ? 0.0 : std::numbers::pi) + (v - 1.5) * 0.6 + rng.uniform(-0.2, 0.2);
    tortuous_line(img, rng, disc, heading, 12, 6 * s, 0.25, cv::Scalar(25, 40, 120), std::max(1, static_cast<int>(2 * s)));
  }
  cv::circle(img, disc, static_cast<int>(9 * s), cv::Scalar(150, 210, 245), cv::FILLED, cv::LINE_AA);

  switch (grade) {
    case Grade::NoDR: break;
    case Grade::Mild: {
      const int n = 7 + static_cast<int>(rng.below(5));
      for (int i = 0; i < n; ++i) {
        cv::circle(img, random_inside(rng, center, radius, 0.8), std::max(2, static_cast<int>(std::lround(3 * s))),
                   cv::Scalar(10, 10, 90), cv::FILLED, cv::LINE_AA);
      }
      break;
    }
    case Grade::Moderate: {
      const int n = 4 + static_cast<int>(rng.below(3));
      for (int i = 0; i < n; ++i) {
        const cv::Point p = random_inside(rng, center, radius, 0.75);
        const cv::Size axes(static_cast<int>(rng.uniform(4, 7) * s) + 1, static_cast<int>(rng.uniform(3, 5) * s) + 1);
        cv::ellipse(img, p, axes, rng.uniform(0, 180), 0, 360, cv::Scalar(60, 220, 240), cv::FILLED, cv::LINE_AA);
      }
      break;
    }
    case Grade::Severe: {
      const int n = 5 + static_cast<int>(rng.below(4));
      for (int i = 0; i < n; ++i) {
        cv::circle(img, random_inside(rng, center, radius, 0.8), static_cast<int>(rng.uniform(7, 10) * s),
                   cv::Scalar(5, 5, 45), cv::FILLED, cv::LINE_AA);
      }
      break;
    }
    case Grade::Proliferative: {
      const int n = 3 + static_cast<int>(rng.below(2));
      for (int i = 0; i < n; ++i) {
        const cv::Point p = random_inside(rng, center, radius, 0.6);
        tortuous_line(img, rng, p, rng.uniform(0, 2 * std::numbers::pi), 10, 4 * s, 0.9, cv::Scalar(200, 255, 255),
                      std::max(2, static_cast<int>(std::lround(2 * s))));
      }
      break;
    }
  }

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      auto& px = img.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = cv::saturate_cast<std::uint8_t>(px[c] + 6 * rng.normal());
    }
  }
  // Keep the background black outside the disc.
  cv::Mat mask(img.size(), CV_8U, cv::Scalar(0));
  cv::circle(mask, center, static_cast<int>(radius), cv::Scalar(255), cv::FILLED);
  cv::Mat result(img.size(), CV_8UC3, cv::Scalar(0, 0, 0));
  img.copyTo(result, mask);
  return result;
}

dataset::DatasetManifest generate_synthetic_corpus(const fs::path& root, const ClassDistribution& counts,
                                                   std::uint64_t seed, int size) {
  for (Grade g : kAllGrades) {
    if (counts[g] < 1) throw ValidationError("synthetic count for " + std::string(canonical_name(g)) + " must be >= 1");
  }
  dataset::DatasetManifest manifest;
  manifest.seed = seed;
  manifest.provenance = "synth seed=" + std::to_string(seed);
  for (Grade g : kAllGrades) {
    const fs::path dir = root / std::string(canonical_name(g));
    fs::create_directories(dir);
    for (std::int64_t i = 0; i < counts[g]; ++i) {
      const std::uint64_t image_seed = Rng::derive(seed, index_of(g) * 1000003ULL + static_cast<std::uint64_t>(i)).next();
      const cv::Mat img = draw_fundus(g, image_seed, size);
      char name[64];
      std::snprintf(name, sizeof name, "synth_%llu_%05lld.png", static_cast<unsigned long long>(seed),
                    static_cast<long long>(i));
      write_image(dir / name, img);
      manifest.records.push_back({dir / name, g, dataset::Corpus::Synthetic, dataset::Split::Unassigned});
    }
  }
  return manifest;
}

}  // namespace vrfuse::synth
