#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cvip {

// Full-resolution 8-bit RGB image, row-major, interleaved channels.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;  // width * height * 3

  Frame() = default;
  Frame(int w, int h) : width(w), height(h), data(size_t(w) * h * 3, 0) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("frame dims must be positive");
  }

  static constexpr int channels = 3;

  size_t index(int x, int y, int c) const {
    return (size_t(y) * width + x) * 3 + c;
  }
  uint8_t at(int x, int y, int c) const { return data[index(x, y, c)]; }
  uint8_t& at(int x, int y, int c) { return data[index(x, y, c)]; }

  // Edge-clamped sample.
  uint8_t at_clamped(int x, int y, int c) const {
    if (x < 0) x = 0;
    if (x >= width) x = width - 1;
    if (y < 0) y = 0;
    if (y >= height) y = height - 1;
    return data[index(x, y, c)];
  }

  bool same_size(const Frame& o) const {
    return width == o.width && height == o.height;
  }
  bool operator==(const Frame& o) const {
    return width == o.width && height == o.height && data == o.data;
  }
};

}  // namespace cvip
