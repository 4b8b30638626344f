#include "cvip/flow.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cvip/common.hpp"

namespace cvip::flow {

void FlowParams::validate() const {
  if (lambda_tv <= 0) throw std::invalid_argument("lambda_tv must be > 0");
  if (outer_warps < 1) throw std::invalid_argument("outer_warps must be >= 1");
  if (inner_iterations < 1)
    throw std::invalid_argument("inner_iterations must be >= 1");
  if (pyramid_levels < 1)
    throw std::invalid_argument("pyramid_levels must be >= 1");
  if (!(pyramid_scale > 0.f && pyramid_scale < 1.f))
    throw std::invalid_argument("pyramid_scale must be in (0, 1)");
  if (time_step <= 0) throw std::invalid_argument("time_step must be > 0");
  if (coupling_theta <= 0) throw std::invalid_argument("coupling_theta must be > 0");
}

namespace {

constexpr double kGradIsZero = 1e-10;

struct Image {
  int w = 0, h = 0;
  std::vector<float> px;
  Image() = default;
  Image(int w_, int h_) : w(w_), h(h_), px(size_t(w_) * h_, 0.f) {}
  float at(int x, int y) const {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return px[size_t(y) * w + x];
  }
};

Image to_gray(const Frame& f) {
  Image g(f.width, f.height);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      g.px[size_t(y) * f.width + x] = 0.299f * f.at(x, y, 0) +
                                      0.587f * f.at(x, y, 1) +
                                      0.114f * f.at(x, y, 2);
  return g;
}

// Separable gaussian, edge-clamped.
Image gaussian_blur(const Image& in, double sigma) {
  if (sigma <= 0) return in;
  int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<float> k(size_t(radius) + 1);
  double sum = 0;
  for (int i = 0; i <= radius; ++i) {
    k[i] = float(std::exp(-0.5 * (i * i) / (sigma * sigma)));
    sum += (i == 0 ? 1.0 : 2.0) * k[i];
  }
  for (auto& v : k) v = float(v / sum);

  Image tmp(in.w, in.h), out(in.w, in.h);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float acc = k[0] * in.at(x, y);
      for (int i = 1; i <= radius; ++i)
        acc += k[i] * (in.at(x - i, y) + in.at(x + i, y));
      tmp.px[size_t(y) * in.w + x] = acc;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      float acc = k[0] * tmp.at(x, y);
      for (int i = 1; i <= radius; ++i)
        acc += k[i] * (tmp.at(x, y - i) + tmp.at(x, y + i));
      out.px[size_t(y) * in.w + x] = acc;
    }
  return out;
}

float bilinear(const Image& im, float x, float y) {
  int x0 = int(std::floor(x));
  int y0 = int(std::floor(y));
  float fx = x - x0;
  float fy = y - y0;
  float a = im.at(x0, y0), b = im.at(x0 + 1, y0);
  float c = im.at(x0, y0 + 1), d = im.at(x0 + 1, y0 + 1);
  return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
}

Image downscale(const Image& in, int nw, int nh, float scale) {
  double sigma = 0.6 * std::sqrt(1.0 / (scale * scale) - 1.0);
  Image blurred = gaussian_blur(in, sigma);
  Image out(nw, nh);
  double sx = double(in.w) / nw;
  double sy = double(in.h) / nh;
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x)
      out.px[size_t(y) * nw + x] =
          bilinear(blurred, float((x + 0.5) * sx - 0.5), float((y + 0.5) * sy - 0.5));
  return out;
}

// Resizes flow to (nw, nh) and rescales displacements by the size ratio.
void upscale_flow(FlowField& f, int nw, int nh) {
  FlowField out(nw, nh);
  float rx = float(nw) / f.width;
  float ry = float(nh) / f.height;
  Image uu(f.width, f.height), vv(f.width, f.height);
  uu.px = f.u;
  vv.px = f.v;
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      float sxp = (x + 0.5f) / rx - 0.5f;
      float syp = (y + 0.5f) / ry - 0.5f;
      out.u[size_t(y) * nw + x] = rx * bilinear(uu, sxp, syp);
      out.v[size_t(y) * nw + x] = ry * bilinear(vv, sxp, syp);
    }
  f = std::move(out);
}

void centered_gradient(const Image& in, Image& gx, Image& gy) {
  gx = Image(in.w, in.h);
  gy = Image(in.w, in.h);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      gx.px[size_t(y) * in.w + x] = 0.5f * (in.at(x + 1, y) - in.at(x - 1, y));
      gy.px[size_t(y) * in.w + x] = 0.5f * (in.at(x, y + 1) - in.at(x, y - 1));
    }
}

// Forward differences, zero at the far border.
void forward_gradient(const std::vector<float>& f, int w, int h,
                      std::vector<float>& fx, std::vector<float>& fy) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t i = size_t(y) * w + x;
      fx[i] = (x < w - 1) ? f[i + 1] - f[i] : 0.f;
      fy[i] = (y < h - 1) ? f[i + w] - f[i] : 0.f;
    }
}

// Backward-difference divergence, adjoint of forward_gradient.
void divergence(const std::vector<float>& p1, const std::vector<float>& p2,
                int w, int h, std::vector<float>& div) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t i = size_t(y) * w + x;
      float d = 0.f;
      if (x == 0)
        d += p1[i];
      else if (x == w - 1)
        d += -p1[i - 1];
      else
        d += p1[i] - p1[i - 1];
      if (y == 0)
        d += p2[i];
      else if (y == h - 1)
        d += -p2[i - w];
      else
        d += p2[i] - p2[i - w];
      div[i] = d;
    }
}

void median_3x3(std::vector<float>& f, int w, int h) {
  std::vector<float> out(f.size());
  float win[9];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int xx = std::clamp(x + dx, 0, w - 1);
          int yy = std::clamp(y + dy, 0, h - 1);
          win[n++] = f[size_t(yy) * w + xx];
        }
      std::nth_element(win, win + 4, win + 9);
      out[size_t(y) * w + x] = win[4];
    }
  f = std::move(out);
}

double energy_of(const Image& i0, const Image& i1, const FlowField& f,
                 float lambda_tv) {
  double data = 0;
  for (int y = 0; y < i0.h; ++y)
    for (int x = 0; x < i0.w; ++x) {
      size_t i = size_t(y) * i0.w + x;
      float warped = bilinear(i1, x + f.u[i], y + f.v[i]);
      data += std::abs(double(warped) - double(i0.at(x, y)));
    }
  double tv = 0;
  std::vector<float> ux(f.numel()), uy(f.numel()), vx(f.numel()), vy(f.numel());
  forward_gradient(f.u, f.width, f.height, ux, uy);
  forward_gradient(f.v, f.width, f.height, vx, vy);
  for (size_t i = 0; i < f.numel(); ++i)
    tv += std::hypot(double(ux[i]), double(uy[i])) +
          std::hypot(double(vx[i]), double(vy[i]));
  return data + double(lambda_tv) * tv;
}

// One pyramid level of the primal-dual scheme. Flow is updated in place.
// Returns energies after each accepted warp.
std::vector<double> solve_level(const Image& i0, const Image& i1, FlowField& f,
                                const FlowParams& prm) {
  const int w = i0.w, h = i0.h;
  const size_t n = size_t(w) * h;
  const double lambda_data = 1.0 / prm.lambda_tv;
  const double theta = prm.coupling_theta;
  const double l_t = lambda_data * theta;
  const double taut = prm.time_step / theta;

  Image i1x, i1y;
  centered_gradient(i1, i1x, i1y);

  std::vector<float> p11(n, 0.f), p12(n, 0.f), p21(n, 0.f), p22(n, 0.f);
  std::vector<float> v1(n), v2(n), rho_c(n), grad(n);
  std::vector<float> i1w(n), i1wx(n), i1wy(n);
  std::vector<float> div1(n), div2(n), gx(n), gy(n);

  std::vector<double> energies;
  double best_energy = energy_of(i0, i1, f, prm.lambda_tv);

  for (int warp = 0; warp < prm.outer_warps; ++warp) {
    FlowField snapshot = f;

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        size_t i = size_t(y) * w + x;
        float xx = x + f.u[i], yy = y + f.v[i];
        i1w[i] = bilinear(i1, xx, yy);
        i1wx[i] = bilinear(i1x, xx, yy);
        i1wy[i] = bilinear(i1y, xx, yy);
        float ix2 = i1wx[i] * i1wx[i];
        float iy2 = i1wy[i] * i1wy[i];
        grad[i] = ix2 + iy2;
        rho_c[i] = i1w[i] - i1wx[i] * f.u[i] - i1wy[i] * f.v[i] - i0.at(x, y);
      }

    for (int it = 0; it < prm.inner_iterations; ++it) {
      // pointwise threshold on the linearized data term
      for (size_t i = 0; i < n; ++i) {
        double rho = rho_c[i] + i1wx[i] * f.u[i] + i1wy[i] * f.v[i];
        double d1, d2;
        if (rho < -l_t * grad[i]) {
          d1 = l_t * i1wx[i];
          d2 = l_t * i1wy[i];
        } else if (rho > l_t * grad[i]) {
          d1 = -l_t * i1wx[i];
          d2 = -l_t * i1wy[i];
        } else if (grad[i] < kGradIsZero) {
          d1 = d2 = 0;
        } else {
          double fi = -rho / grad[i];
          d1 = fi * i1wx[i];
          d2 = fi * i1wy[i];
        }
        v1[i] = float(f.u[i] + d1);
        v2[i] = float(f.v[i] + d2);
      }

      divergence(p11, p12, w, h, div1);
      divergence(p21, p22, w, h, div2);
      for (size_t i = 0; i < n; ++i) {
        f.u[i] = v1[i] + float(theta) * div1[i];
        f.v[i] = v2[i] + float(theta) * div2[i];
      }

      forward_gradient(f.u, w, h, gx, gy);
      for (size_t i = 0; i < n; ++i) {
        float ng = 1.f + float(taut) * std::hypot(gx[i], gy[i]);
        p11[i] = (p11[i] + float(taut) * gx[i]) / ng;
        p12[i] = (p12[i] + float(taut) * gy[i]) / ng;
      }
      forward_gradient(f.v, w, h, gx, gy);
      for (size_t i = 0; i < n; ++i) {
        float ng = 1.f + float(taut) * std::hypot(gx[i], gy[i]);
        p21[i] = (p21[i] + float(taut) * gx[i]) / ng;
        p22[i] = (p22[i] + float(taut) * gy[i]) / ng;
      }
    }

    if (prm.median_filter) {
      median_3x3(f.u, w, h);
      median_3x3(f.v, w, h);
    }

    for (size_t i = 0; i < n; ++i)
      if (!std::isfinite(f.u[i]) || !std::isfinite(f.v[i]))
        throw std::runtime_error("tvl1_flow: non-finite value in solver state");

    double e = energy_of(i0, i1, f, prm.lambda_tv);
    if (e > best_energy) {
      // This warp made the true energy worse; keep the previous flow.
      f = std::move(snapshot);
      energies.push_back(best_energy);
      break;
    }
    best_energy = e;
    energies.push_back(e);
  }
  return energies;
}

}  // namespace

FlowField tvl1_flow(const Frame& prev, const Frame& cur,
                    const FlowParams& params, FlowDiagnostics* diag) {
  if (!prev.same_size(cur))
    throw std::invalid_argument("tvl1_flow: frame dimensions differ");
  params.validate();

  Image i0 = gaussian_blur(to_gray(prev), 0.8);
  Image i1 = gaussian_blur(to_gray(cur), 0.8);

  // Build the pyramid, finest first. Levels below 16 px are dropped.
  std::vector<Image> pyr0{i0}, pyr1{i1};
  for (int l = 1; l < params.pyramid_levels; ++l) {
    const Image& p = pyr0.back();
    int nw = std::max(1, int(std::lround(p.w * params.pyramid_scale)));
    int nh = std::max(1, int(std::lround(p.h * params.pyramid_scale)));
    if (std::min(nw, nh) < 16) break;
    pyr0.push_back(downscale(pyr0.back(), nw, nh, params.pyramid_scale));
    pyr1.push_back(downscale(pyr1.back(), nw, nh, params.pyramid_scale));
  }

  FlowField f(pyr0.back().w, pyr0.back().h);
  std::vector<double> finest;
  for (int l = int(pyr0.size()) - 1; l >= 0; --l) {
    auto energies = solve_level(pyr0[l], pyr1[l], f, params);
    if (l == 0) finest = std::move(energies);
    if (l > 0) upscale_flow(f, pyr0[l - 1].w, pyr0[l - 1].h);
  }
  if (diag) diag->finest_level_energies = std::move(finest);
  return f;
}

double flow_energy(const Frame& prev, const Frame& cur, const FlowField& flow,
                   float lambda_tv) {
  if (!prev.same_size(cur) || flow.width != prev.width ||
      flow.height != prev.height)
    throw std::invalid_argument("flow_energy: dimensions differ");
  if (lambda_tv <= 0) throw std::invalid_argument("flow_energy: lambda_tv <= 0");
  return energy_of(to_gray(prev), to_gray(cur), flow, lambda_tv);
}

void write_flo(std::ostream& os, const FlowField& f, uint32_t pair_index) {
  write_magic(os, "FLO1");
  write_le<uint32_t>(os, uint32_t(f.width));
  write_le<uint32_t>(os, uint32_t(f.height));
  write_le<uint32_t>(os, pair_index);
  for (float x : f.u) write_le<float>(os, x);
  for (float x : f.v) write_le<float>(os, x);
  if (!os) throw std::runtime_error("FLO write failed");
}

FlowField read_flo(std::istream& is, uint32_t* pair_index) {
  expect_magic(is, "FLO1", "FLO");
  int w = int(read_le<uint32_t>(is));
  int h = int(read_le<uint32_t>(is));
  uint32_t idx = read_le<uint32_t>(is);
  if (pair_index) *pair_index = idx;
  if (w <= 0 || h <= 0) throw std::runtime_error("FLO invalid dimensions");
  FlowField f(w, h);
  for (auto& x : f.u) x = read_le<float>(is);
  for (auto& x : f.v) x = read_le<float>(is);
  return f;
}

void save_flo(const std::string& path, const FlowField& f, uint32_t pair_index) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_flo(os, f, pair_index);
}

FlowField load_flo(const std::string& path, uint32_t* pair_index) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_flo(is, pair_index);
}

}  // namespace cvip::flow
