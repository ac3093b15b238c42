#include "dietfield/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "dietfield/container.hpp"
#include "dietfield/error.hpp"

namespace dietfield::io {

Image8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    const std::string msg = img.message;
    if (!std::filesystem::exists(path)) throw IoError("missing image '" + path.string() + "'");
    throw FormatError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const bool alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  Image8 out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  out.channels = alpha ? 4 : 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return out;
}

std::string encode_png(const Image8& image) {
  if (image.channels != 3 && image.channels != 4) throw ValidationError("encode_png: expected 3 or 4 channels");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + img.message);
  }
  std::string bytes(size, '\0');
  if (!png_image_write_to_memory(&img, bytes.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + img.message);
  }
  bytes.resize(size);
  return bytes;
}

void write_png(const std::filesystem::path& path, const Image8& image) { write_file(path, encode_png(image)); }

Image8 to_rgb8(const diff::Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw ShapeError("to_rgb8: expected H x W x 3 image, got " + diff::shape_string(image.shape()));
  }
  Image8 out;
  out.height = static_cast<int>(image.dim(0));
  out.width = static_cast<int>(image.dim(1));
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(image.size()));
  for (std::int64_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    out.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

diff::Tensor to_float_rgb(const Image8& image, const std::array<float, 3>& background) {
  const std::int64_t n = static_cast<std::int64_t>(image.height) * image.width;
  std::vector<float> values(static_cast<std::size_t>(n * 3));
  for (std::int64_t p = 0; p < n; ++p) {
    const std::uint8_t* px = image.pixels.data() + p * image.channels;
    const float alpha = image.channels == 4 ? static_cast<float>(px[3]) / 255.0f : 1.0f;
    for (int c = 0; c < 3; ++c) {
      const float v = static_cast<float>(px[c]) / 255.0f;
      values[static_cast<std::size_t>(p * 3 + c)] = alpha * v + (1.0f - alpha) * background[static_cast<std::size_t>(c)];
    }
  }
  return diff::Tensor(diff::Shape{image.height, image.width, 3}, std::move(values));
}

diff::Tensor box_downsample(const diff::Tensor& image, int factor) {
  if (factor < 1 || image.rank() != 3 || image.dim(0) % factor != 0 || image.dim(1) % factor != 0) {
    throw ShapeError("box_downsample: image " + diff::shape_string(image.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  if (factor == 1) return image;
  const std::int64_t h = image.dim(0) / factor, w = image.dim(1) / factor, c = image.dim(2);
  diff::Tensor out(diff::Shape{h, w, c}, 0.0f);
  float* po = out.mutable_data();
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (std::int64_t y = 0; y < image.dim(0); ++y) {
    for (std::int64_t x = 0; x < image.dim(1); ++x) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        po[((y / factor) * w + x / factor) * c + ch] += image[(y * image.dim(1) + x) * c + ch] * norm;
      }
    }
  }
  return out;
}

}  // namespace dietfield::io
