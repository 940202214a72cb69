#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ricebot/domain.hpp"

namespace ricebot::image {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Colour used for a disease class in synthetic scenes.
struct ColorClass {
  Rgb color;
  std::string class_name;
};

// 8-bit RGB raster, row-major, no padding.
class Image {
 public:
  Image() = default;
  Image(int width, int height, Rgb fill = {});

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const {
    const std::size_t i = index(x, y);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const std::size_t i = index(x, y);
    data_[i] = c.r;
    data_[i + 1] = c.g;
    data_[i + 2] = c.b;
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }
  // Clipped to the frame; half-open [x0,x1) x [y0,y1).
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

// "image/png", "image/jpeg" or "" from magic bytes.
std::string sniff_content_type(std::string_view bytes);

// PNG or JPEG. Throws DecodeError.
Image decode(std::string_view bytes);
// Width/height without decoding pixel data. Throws DecodeError.
std::pair<int, int> probe_dimensions(std::string_view bytes);
// Deterministic: identical rasters encode to identical bytes.
std::string encode_png(const Image& img);

// Lower-case hex SHA-256 of the bytes.
std::string content_hash(std::string_view bytes);

// Box-filtered downscale so the longer side is at most `max_side`; aspect
// ratio preserved. Images already small enough are returned unchanged.
Image downscale(const Image& img, int max_side);

}  // namespace ricebot::image
