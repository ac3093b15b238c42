#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dietfield/tensor.hpp"

namespace dietfield::io {

// 8-bit image as decoded from disk, channels interleaved.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;  // 3 (RGB) or 4 (RGBA)
  std::vector<std::uint8_t> pixels;
};

Image8 read_png(const std::filesystem::path& path);
// Encodes `image` (3 or 4 channels) as PNG.
std::string encode_png(const Image8& image);
void write_png(const std::filesystem::path& path, const Image8& image);

// Float H x W x 3 image in [0,1] -> 8-bit RGB, rounding to nearest.
Image8 to_rgb8(const diff::Tensor& image);
// 8-bit RGB(A) -> float H x W x 3, compositing alpha over `background`.
diff::Tensor to_float_rgb(const Image8& image, const std::array<float, 3>& background);

// Averages non-overlapping factor x factor blocks of an H x W x C float image.
diff::Tensor box_downsample(const diff::Tensor& image, int factor);

}  // namespace dietfield::io
