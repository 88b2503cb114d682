#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridiff/autodiff/tensor.hpp"

namespace tridiff {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major H x W x C image, values nominally in [0, 1].
struct Image {
  int height = 0, width = 0, channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c = 3, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int i, int j, int c = 0) { return data[(static_cast<std::size_t>(i) * width + j) * channels + c]; }
  double at(int i, int j, int c = 0) const { return data[(static_cast<std::size_t>(i) * width + j) * channels + c]; }
  std::size_t size() const { return data.size(); }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Diffusion convention: [0, 1] pixels map to [-1, 1].
template <class S>
ad::Tensor<S> image_to_tensor(const Image& img) {
  if (img.channels != 3) throw std::invalid_argument("image_to_tensor: expected 3 channels");
  std::vector<S> v(img.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(2.0 * img.data[i] - 1.0);
  return ad::Tensor<S>({img.height, img.width, 3}, std::move(v));
}

template <class S>
Image tensor_to_image(const ad::Tensor<S>& t) {
  if (t.rank() != 3 || t.dim(2) != 3) throw ad::ShapeError("tensor_to_image: expected [H, W, 3], got " + ad::to_string(t.shape()));
  Image img(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)));
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = std::clamp((static_cast<double>(t[i]) + 1.0) / 2.0, 0.0, 1.0);
  return img;
}

// Rounds through 8 bits, as a PNG round trip would.
inline Image quantize8(Image img) {
  for (auto& v : img.data) v = to_byte(v) / 255.0;
  return img;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

inline std::unique_ptr<std::FILE, FileCloser> open_file(const std::filesystem::path& path, const char* mode) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* where = static_cast<std::string*>(png_get_error_ptr(png));
  throw IoError("png: " + std::string(msg) + " (" + *where + ")");
}

inline void png_warning_fn(png_structp, png_const_charp) {}

inline void write_png_rows(const std::filesystem::path& path, int height, int width, int color_type, int bit_depth,
                           const std::vector<std::uint8_t>& bytes) {
  auto file = open_file(path, "wb");
  std::string where = path.string();
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &where, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png: cannot create writer for " + where);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = bytes.size() / static_cast<std::size_t>(height);
    for (int r = 0; r < height; ++r) png_write_row(png, const_cast<png_bytep>(bytes.data() + r * stride));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("write failed: " + where);
}

}  // namespace detail

// 8-bit PNG, gray (1 channel) or RGB (3 channels).
inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels");
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(img.data[i]);
  detail::write_png_rows(path, img.height, img.width, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, 8,
                         bytes);
}

// 16-bit grayscale PNG of values in [0, 1] (big-endian samples).
inline void write_png16(const std::filesystem::path& path, const Image& gray) {
  if (gray.channels != 1) throw std::invalid_argument("write_png16: single channel expected");
  std::vector<std::uint8_t> bytes(gray.size() * 2);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(gray.data[i], 0.0, 1.0) * 65535.0));
    bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
  }
  detail::write_png_rows(path, gray.height, gray.width, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

// Reads any PNG; palette and gray are expanded to RGB, alpha is dropped, and
// 16-bit samples are kept at full precision.
inline Image read_png(const std::filesystem::path& path, int want_channels = 3) {
  auto file = detail::open_file(path, "rb");
  std::string where = path.string();
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &where, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("png: cannot create reader for " + where);
  png_infop info = png_create_info_struct(png);
  Image img;
  try {
    png_init_io(png, file.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (want_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA))
      png_set_gray_to_rgb(png);
    if (want_channels == 1 && (color & PNG_COLOR_MASK_COLOR)) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int ch = png_get_channels(png, info);
    const int bits = png_get_bit_depth(png, info);
    if (ch != want_channels) throw IoError("png: unexpected channel count in " + where);
    std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
    img = Image(h, w, ch);
    const double scale = bits == 16 ? 65535.0 : 255.0;
    for (int r = 0; r < h; ++r) {
      png_read_row(png, row.data(), nullptr);
      for (int k = 0; k < w * ch; ++k) {
        const double v = bits == 16 ? (row[2 * k] << 8 | row[2 * k + 1]) : row[k];
        img.data[static_cast<std::size_t>(r) * w * ch + k] = v / scale;
      }
    }
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace tridiff
