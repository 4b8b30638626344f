#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cvip/frame.hpp"

namespace cvip::flow {

// Dense per-pixel displacement field. u is horizontal, v vertical, in pixels.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h), u(size_t(w) * h, 0.f), v(size_t(w) * h, 0.f) {}

  size_t numel() const { return size_t(width) * height; }
};

struct FlowParams {
  float lambda_tv = 0.15f;   // smoothness weight in E = data + lambda_tv * TV
  int outer_warps = 10;
  int inner_iterations = 30;
  int pyramid_levels = 5;
  float pyramid_scale = 0.5f;
  float time_step = 0.25f;   // dual ascent step tau
  float coupling_theta = 0.3f;
  bool median_filter = true;

  void validate() const;
};

struct FlowDiagnostics {
  // Energy after every accepted outer warp at the finest pyramid level.
  std::vector<double> finest_level_energies;
};

// Duality-based TV-L1 solver, coarse-to-fine. Inputs are converted to
// grayscale internally (0.299/0.587/0.114). Deterministic for fixed params;
// a warp that would raise the energy is rolled back, so the reported energy
// sequence is non-increasing.
FlowField tvl1_flow(const Frame& prev, const Frame& cur,
                    const FlowParams& params, FlowDiagnostics* diag = nullptr);

// data term + lambda_tv * total variation of the given flow; >= 0.
double flow_energy(const Frame& prev, const Frame& cur, const FlowField& flow,
                   float lambda_tv);

// FLO1 file: magic "FLO1", u32 width, height, pair_index; float32 u-plane
// then v-plane, little-endian.
void write_flo(std::ostream& os, const FlowField& f, uint32_t pair_index);
FlowField read_flo(std::istream& is, uint32_t* pair_index = nullptr);
void save_flo(const std::string& path, const FlowField& f, uint32_t pair_index);
FlowField load_flo(const std::string& path, uint32_t* pair_index = nullptr);

}  // namespace cvip::flow
