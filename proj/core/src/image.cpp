#include "vrfuse/image.hpp"

#include <opencv2/imgcodecs.hpp>

#include "vrfuse/error.hpp"

namespace vrfuse {

cv::Mat read_color(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw Error("cannot decode image " + path.string());
  return img;
}

void write_image(const std::filesystem::path& path, const cv::Mat& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), image)) throw Error("cannot write image " + path.string());
}

}  // namespace vrfuse
