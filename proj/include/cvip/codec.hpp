#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cvip/frame.hpp"

namespace cvip::codec {

inline constexpr int kMacroblock = 16;
inline constexpr int kDefaultGopSize = 12;
inline constexpr int kDefaultSearchRange = 7;

// One (dx, dy) displacement per 16x16 macroblock, in pixels. A block of the
// current frame predicts from the reference at prediction(p) = prev(p + mv).
struct MotionField {
  int blocks_x = 0;
  int blocks_y = 0;
  int search_range = kDefaultSearchRange;
  std::vector<int16_t> dx;  // blocks_y * blocks_x, row-major
  std::vector<int16_t> dy;

  MotionField() = default;
  MotionField(int bx, int by, int range)
      : blocks_x(bx),
        blocks_y(by),
        search_range(range),
        dx(size_t(bx) * by, 0),
        dy(size_t(bx) * by, 0) {}

  static MotionField for_frame(int width, int height, int range) {
    return MotionField((width + kMacroblock - 1) / kMacroblock,
                       (height + kMacroblock - 1) / kMacroblock, range);
  }

  size_t block_index(int bx, int by) const { return size_t(by) * blocks_x + bx; }
  bool matches_frame(int width, int height) const {
    return blocks_x == (width + kMacroblock - 1) / kMacroblock &&
           blocks_y == (height + kMacroblock - 1) / kMacroblock;
  }
  // Throws if any vector exceeds the declared search range.
  void validate() const;

  bool operator==(const MotionField& o) const {
    return blocks_x == o.blocks_x && blocks_y == o.blocks_y && dx == o.dx &&
           dy == o.dy;
  }
};

// Signed per-sample difference between a frame and its prediction, exact.
struct Residual {
  int width = 0;
  int height = 0;
  std::vector<int16_t> data;  // width * height * 3, same layout as Frame

  Residual() = default;
  Residual(int w, int h) : width(w), height(h), data(size_t(w) * h * 3, 0) {}

  size_t index(int x, int y, int c) const {
    return (size_t(y) * width + x) * 3 + c;
  }
  bool operator==(const Residual& o) const {
    return width == o.width && height == o.height && data == o.data;
  }
};

struct PFrame {
  MotionField mv;
  Residual residual;
  bool operator==(const PFrame& o) const {
    return mv == o.mv && residual == o.residual;
  }
};

// GOP-structured video: frame k is an I-frame iff k % gop_size == 0.
struct GopVideo {
  int width = 0;
  int height = 0;
  int gop_size = kDefaultGopSize;
  std::optional<uint16_t> label;
  std::vector<std::variant<Frame, PFrame>> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  bool is_i_frame(int k) const { return k % gop_size == 0; }
  const Frame& i_frame(int k) const { return std::get<Frame>(frames[k]); }
  const PFrame& p_frame(int k) const { return std::get<PFrame>(frames[k]); }

  bool operator==(const GopVideo& o) const {
    return width == o.width && height == o.height && gop_size == o.gop_size &&
           label == o.label && frames == o.frames;
  }
};

// Exhaustive SAD block matching over integer displacements within
// [-search_range, search_range]^2. Reference samples are edge-clamped.
// Ties break toward smallest |dx|+|dy|, then smallest dy, then smallest dx.
MotionField estimate_motion(const Frame& prev, const Frame& cur,
                            int search_range);

// Copies each macroblock from `prev` at its displaced location.
Frame motion_compensate(const Frame& prev, const MotionField& mv);

// Elementwise cur - predicted.
Residual compute_residual(const Frame& cur, const Frame& predicted);

// Adds a residual back onto a prediction, clamping to [0, 255].
Frame apply_residual(const Frame& predicted, const Residual& residual);

GopVideo encode_gop_video(const std::vector<Frame>& frames, int gop_size,
                          int search_range = kDefaultSearchRange);
std::vector<Frame> decode_gop_video(const GopVideo& gv);

// Expands a motion field to a full-resolution 2-channel plane, (dx, dy),
// constant over each macroblock. Plane-major: all dx then all dy.
std::vector<float> mv_to_dense(const MotionField& mv, int width, int height);

// GVC container.
void write_gvc(std::ostream& os, const GopVideo& gv);
GopVideo read_gvc(std::istream& is);
void save_gvc(const std::string& path, const GopVideo& gv);
GopVideo load_gvc(const std::string& path);

}  // namespace cvip::codec
