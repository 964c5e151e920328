#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

namespace vrfuse {

/// Decodes a PNG/JPEG as 8-bit BGR. Throws vrfuse::Error on failure.
cv::Mat read_color(const std::filesystem::path& path);

/// Encodes by extension, creating parent directories.
void write_image(const std::filesystem::path& path, const cv::Mat& image);

}  // namespace vrfuse
