#include "cvip/codec.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <limits>

#include "cvip/common.hpp"

namespace cvip::codec {

void MotionField::validate() const {
  if (dx.size() != size_t(blocks_x) * blocks_y ||
      dy.size() != size_t(blocks_x) * blocks_y)
    throw std::invalid_argument("motion field vector count does not match grid");
  for (size_t i = 0; i < dx.size(); ++i) {
    if (std::abs(int(dx[i])) > search_range || std::abs(int(dy[i])) > search_range)
      throw std::invalid_argument("motion vector exceeds search range");
  }
}

namespace {

struct BlockExtent {
  int x0, y0, w, h;
};

BlockExtent block_extent(int bx, int by, int width, int height) {
  int x0 = bx * kMacroblock;
  int y0 = by * kMacroblock;
  return {x0, y0, std::min(kMacroblock, width - x0),
          std::min(kMacroblock, height - y0)};
}

// SAD of one candidate displacement, aborting once the running sum reaches
// `limit` (candidates are visited in tie-break order, so only strictly
// better sums can win).
int64_t block_sad(const Frame& prev, const Frame& cur, const BlockExtent& e,
                  int dx, int dy, int64_t limit) {
  int64_t sad = 0;
  for (int y = 0; y < e.h; ++y) {
    int sy = e.y0 + y + dy;
    sy = std::clamp(sy, 0, prev.height - 1);
    for (int x = 0; x < e.w; ++x) {
      int sx = std::clamp(e.x0 + x + dx, 0, prev.width - 1);
      const uint8_t* p = &prev.data[prev.index(sx, sy, 0)];
      const uint8_t* c = &cur.data[cur.index(e.x0 + x, e.y0 + y, 0)];
      sad += std::abs(int(c[0]) - int(p[0])) + std::abs(int(c[1]) - int(p[1])) +
             std::abs(int(c[2]) - int(p[2]));
    }
    if (sad >= limit) return limit;
  }
  return sad;
}

// Candidate displacements sorted by (|dx|+|dy|, dy, dx); scanning in this
// order makes "first strictly smaller SAD wins" equal to the tie-break rule.
std::vector<std::pair<int, int>> search_order(int range) {
  std::vector<std::pair<int, int>> cands;
  cands.reserve(size_t(2 * range + 1) * (2 * range + 1));
  for (int dy = -range; dy <= range; ++dy)
    for (int dx = -range; dx <= range; ++dx) cands.emplace_back(dx, dy);
  std::stable_sort(cands.begin(), cands.end(), [](auto a, auto b) {
    int ma = std::abs(a.first) + std::abs(a.second);
    int mb = std::abs(b.first) + std::abs(b.second);
    if (ma != mb) return ma < mb;
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  return cands;
}

}  // namespace

MotionField estimate_motion(const Frame& prev, const Frame& cur,
                            int search_range) {
  if (!prev.same_size(cur))
    throw std::invalid_argument("estimate_motion: frame dimensions differ");
  if (search_range < 0)
    throw std::invalid_argument("estimate_motion: negative search range");

  MotionField field = MotionField::for_frame(cur.width, cur.height, search_range);
  const auto cands = search_order(search_range);

  for (int by = 0; by < field.blocks_y; ++by) {
    for (int bx = 0; bx < field.blocks_x; ++bx) {
      const BlockExtent e = block_extent(bx, by, cur.width, cur.height);
      int64_t best = std::numeric_limits<int64_t>::max();
      int best_dx = 0, best_dy = 0;
      for (auto [dx, dy] : cands) {
        int64_t sad = block_sad(prev, cur, e, dx, dy, best);
        if (sad < best) {
          best = sad;
          best_dx = dx;
          best_dy = dy;
          if (best == 0) break;
        }
      }
      field.dx[field.block_index(bx, by)] = int16_t(best_dx);
      field.dy[field.block_index(bx, by)] = int16_t(best_dy);
    }
  }
  return field;
}

Frame motion_compensate(const Frame& prev, const MotionField& mv) {
  if (!mv.matches_frame(prev.width, prev.height))
    throw std::invalid_argument("motion_compensate: grid does not match frame");
  mv.validate();

  Frame out(prev.width, prev.height);
  for (int by = 0; by < mv.blocks_y; ++by) {
    for (int bx = 0; bx < mv.blocks_x; ++bx) {
      const BlockExtent e = block_extent(bx, by, prev.width, prev.height);
      int dx = mv.dx[mv.block_index(bx, by)];
      int dy = mv.dy[mv.block_index(bx, by)];
      for (int y = 0; y < e.h; ++y) {
        for (int x = 0; x < e.w; ++x) {
          for (int c = 0; c < 3; ++c)
            out.at(e.x0 + x, e.y0 + y, c) =
                prev.at_clamped(e.x0 + x + dx, e.y0 + y + dy, c);
        }
      }
    }
  }
  return out;
}

Residual compute_residual(const Frame& cur, const Frame& predicted) {
  if (!cur.same_size(predicted))
    throw std::invalid_argument("compute_residual: frame dimensions differ");
  Residual r(cur.width, cur.height);
  for (size_t i = 0; i < cur.data.size(); ++i)
    r.data[i] = int16_t(int(cur.data[i]) - int(predicted.data[i]));
  return r;
}

Frame apply_residual(const Frame& predicted, const Residual& residual) {
  if (predicted.width != residual.width || predicted.height != residual.height)
    throw std::invalid_argument("apply_residual: dimensions differ");
  Frame out(predicted.width, predicted.height);
  for (size_t i = 0; i < out.data.size(); ++i) {
    int v = int(predicted.data[i]) + int(residual.data[i]);
    out.data[i] = uint8_t(std::clamp(v, 0, 255));
  }
  return out;
}

GopVideo encode_gop_video(const std::vector<Frame>& frames, int gop_size,
                          int search_range) {
  if (frames.empty()) throw std::invalid_argument("encode: empty frame list");
  if (gop_size < 1) throw std::invalid_argument("encode: gop_size must be >= 1");
  for (const Frame& f : frames)
    if (!f.same_size(frames[0]))
      throw std::invalid_argument("encode: mixed frame dimensions");

  GopVideo gv;
  gv.width = frames[0].width;
  gv.height = frames[0].height;
  gv.gop_size = gop_size;

  Frame reconstructed;
  for (size_t k = 0; k < frames.size(); ++k) {
    if (k % size_t(gop_size) == 0) {
      gv.frames.emplace_back(frames[k]);
      reconstructed = frames[k];
    } else {
      // Residuals are exact, so reconstruction tracks the source bit for bit;
      // the loop still references the reconstructed frame, as a decoder will.
      MotionField mv = estimate_motion(reconstructed, frames[k], search_range);
      Frame predicted = motion_compensate(reconstructed, mv);
      Residual res = compute_residual(frames[k], predicted);
      reconstructed = apply_residual(predicted, res);
      gv.frames.emplace_back(PFrame{std::move(mv), std::move(res)});
    }
  }
  return gv;
}

std::vector<Frame> decode_gop_video(const GopVideo& gv) {
  std::vector<Frame> out;
  out.reserve(gv.frames.size());
  for (int k = 0; k < gv.frame_count(); ++k) {
    if (std::holds_alternative<Frame>(gv.frames[k])) {
      const Frame& f = std::get<Frame>(gv.frames[k]);
      if (f.width != gv.width || f.height != gv.height)
        throw std::runtime_error("decode: I-frame dimensions inconsistent");
      out.push_back(f);
    } else {
      if (k == 0) throw std::runtime_error("decode: first frame is not an I-frame");
      const PFrame& p = std::get<PFrame>(gv.frames[k]);
      Frame predicted = motion_compensate(out.back(), p.mv);
      out.push_back(apply_residual(predicted, p.residual));
    }
  }
  return out;
}

std::vector<float> mv_to_dense(const MotionField& mv, int width, int height) {
  if (!mv.matches_frame(width, height))
    throw std::invalid_argument("mv_to_dense: grid inconsistent with dimensions");
  std::vector<float> plane(size_t(2) * width * height, 0.f);
  float* dxp = plane.data();
  float* dyp = plane.data() + size_t(width) * height;
  for (int y = 0; y < height; ++y) {
    int by = y / kMacroblock;
    for (int x = 0; x < width; ++x) {
      size_t b = mv.block_index(x / kMacroblock, by);
      dxp[size_t(y) * width + x] = float(mv.dx[b]);
      dyp[size_t(y) * width + x] = float(mv.dy[b]);
    }
  }
  return plane;
}

// --- GVC container ------------------------------------------------------
//
// magic "GVC1"; u32 width, height, frame_count, gop_size; u8 label_present,
// u16 label when present; then per frame: u8 type (0 = I, 1 = P);
// I payload  = width*height*3 bytes RGB;
// P payload  = blocks_y*blocks_x pairs of i16 (dx, dy), then width*height*3
//              i16 residual samples. Everything little-endian.

void write_gvc(std::ostream& os, const GopVideo& gv) {
  write_magic(os, "GVC1");
  write_le<uint32_t>(os, uint32_t(gv.width));
  write_le<uint32_t>(os, uint32_t(gv.height));
  write_le<uint32_t>(os, uint32_t(gv.frame_count()));
  write_le<uint32_t>(os, uint32_t(gv.gop_size));
  write_le<uint8_t>(os, gv.label ? 1 : 0);
  if (gv.label) write_le<uint16_t>(os, *gv.label);

  for (const auto& fr : gv.frames) {
    if (std::holds_alternative<Frame>(fr)) {
      write_le<uint8_t>(os, 0);
      const Frame& f = std::get<Frame>(fr);
      os.write(reinterpret_cast<const char*>(f.data.data()),
               std::streamsize(f.data.size()));
    } else {
      write_le<uint8_t>(os, 1);
      const PFrame& p = std::get<PFrame>(fr);
      for (size_t i = 0; i < p.mv.dx.size(); ++i) {
        write_le<int16_t>(os, p.mv.dx[i]);
        write_le<int16_t>(os, p.mv.dy[i]);
      }
      for (int16_t v : p.residual.data) write_le<int16_t>(os, v);
    }
  }
  if (!os) throw std::runtime_error("GVC write failed");
}

GopVideo read_gvc(std::istream& is) {
  expect_magic(is, "GVC1", "GVC");
  GopVideo gv;
  gv.width = int(read_le<uint32_t>(is));
  gv.height = int(read_le<uint32_t>(is));
  uint32_t frame_count = read_le<uint32_t>(is);
  gv.gop_size = int(read_le<uint32_t>(is));
  if (gv.width <= 0 || gv.height <= 0 || gv.gop_size < 1)
    throw std::runtime_error("GVC header has invalid dimensions");
  if (read_le<uint8_t>(is)) gv.label = read_le<uint16_t>(is);

  const int bx = (gv.width + kMacroblock - 1) / kMacroblock;
  const int by = (gv.height + kMacroblock - 1) / kMacroblock;
  const size_t pixels = size_t(gv.width) * gv.height * 3;

  for (uint32_t k = 0; k < frame_count; ++k) {
    uint8_t type = read_le<uint8_t>(is);
    if (type == 0) {
      if (k % uint32_t(gv.gop_size) != 0)
        throw std::runtime_error("GVC I-frame at a P-frame position");
      Frame f(gv.width, gv.height);
      is.read(reinterpret_cast<char*>(f.data.data()), std::streamsize(pixels));
      if (!is) throw std::runtime_error("GVC truncated inside I-frame payload");
      gv.frames.emplace_back(std::move(f));
    } else if (type == 1) {
      if (k % uint32_t(gv.gop_size) == 0)
        throw std::runtime_error("GVC P-frame at an I-frame position");
      PFrame p;
      p.mv = MotionField(bx, by, kDefaultSearchRange);
      int max_mag = 0;
      for (size_t i = 0; i < p.mv.dx.size(); ++i) {
        p.mv.dx[i] = read_le<int16_t>(is);
        p.mv.dy[i] = read_le<int16_t>(is);
        max_mag = std::max({max_mag, std::abs(int(p.mv.dx[i])),
                            std::abs(int(p.mv.dy[i]))});
      }
      p.mv.search_range = std::max(p.mv.search_range, max_mag);
      p.residual = Residual(gv.width, gv.height);
      for (auto& v : p.residual.data) v = read_le<int16_t>(is);
      gv.frames.emplace_back(std::move(p));
    } else {
      throw std::runtime_error("GVC unknown frame type");
    }
  }
  return gv;
}

void save_gvc(const std::string& path, const GopVideo& gv) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_gvc(os, gv);
}

GopVideo load_gvc(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_gvc(is);
}

}  // namespace cvip::codec
