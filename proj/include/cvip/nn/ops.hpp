#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "cvip/nn/tensor.hpp"

namespace cvip::nn {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

template <class S>
void accumulate(Node<S>& parent, const std::vector<S>& delta) {
  parent.ensure_grad();
  for (size_t i = 0; i < delta.size(); ++i) parent.grad[i] += delta[i];
}

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline int conv_out(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.same_shape(b), "add: shape mismatch");
  std::vector<S> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  return make_result<S>(
      a.shape(), std::move(out), {a, b}, [a, b](Node<S>& self) {
        if (a.requires_grad()) detail::accumulate(*a.node(), self.grad);
        if (b.requires_grad()) detail::accumulate(*b.node(), self.grad);
      });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.same_shape(b), "sub: shape mismatch");
  std::vector<S> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  return make_result<S>(
      a.shape(), std::move(out), {a, b}, [a, b](Node<S>& self) {
        if (a.requires_grad()) detail::accumulate(*a.node(), self.grad);
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            b.node()->grad[i] -= self.grad[i];
        }
      });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.same_shape(b), "mul: shape mismatch");
  std::vector<S> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  return make_result<S>(
      a.shape(), std::move(out), {a, b}, [a, b](Node<S>& self) {
        if (a.requires_grad()) {
          a.node()->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            a.node()->grad[i] += self.grad[i] * b.data()[i];
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            b.node()->grad[i] += self.grad[i] * a.data()[i];
        }
      });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.data());
  for (auto& v : out) v *= c;
  return make_result<S>(a.shape(), std::move(out), {a}, [a, c](Node<S>& self) {
    a.node()->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      a.node()->grad[i] += c * self.grad[i];
  });
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = 0;
  for (S v : a.data()) acc += v;
  return make_result<S>({1}, {acc}, {a}, [a](Node<S>& self) {
    a.node()->ensure_grad();
    for (auto& g : a.node()->grad) g += self.grad[0];
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  S acc = 0;
  for (S v : a.data()) acc += v;
  S inv = S(1) / S(a.numel());
  return make_result<S>({1}, {acc * inv}, {a}, [a, inv](Node<S>& self) {
    a.node()->ensure_grad();
    for (auto& g : a.node()->grad) g += inv * self.grad[0];
  });
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> out(a.data());
  for (auto& v : out) v = std::max(v, S(0));
  return make_result<S>(a.shape(), std::move(out), {a}, [a](Node<S>& self) {
    a.node()->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (a.data()[i] > S(0)) a.node()->grad[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  detail::require(n == a.numel(), "reshape: element count mismatch");
  std::vector<S> out(a.data());
  return make_result<S>(std::move(shape), std::move(out), {a},
                        [a](Node<S>& self) {
                          detail::accumulate(*a.node(), self.grad);
                        });
}

// [N, C, T, H, W] -> [N*T, C, H, W]
template <class S>
Tensor<S> merge_time_into_batch(const Tensor<S>& x) {
  detail::require(x.rank() == 5, "merge_time_into_batch: rank must be 5");
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const size_t plane = size_t(H) * W;
  std::vector<S> out(x.data().size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < T; ++t) {
        const S* src = x.data().data() + (((size_t(n) * C + c) * T + t) * plane);
        S* dst = out.data() + (((size_t(n) * T + t) * C + c) * plane);
        std::copy(src, src + plane, dst);
      }
  return make_result<S>(
      {N * T, C, H, W}, std::move(out), {x}, [x, N, C, T, plane](Node<S>& self) {
        x.node()->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t) {
              const S* src =
                  self.grad.data() + (((size_t(n) * T + t) * C + c) * plane);
              S* dst = x.node()->grad.data() +
                       (((size_t(n) * C + c) * T + t) * plane);
              for (size_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
      });
}

// [N*T, C, H, W] -> [N, C, T, H, W]
template <class S>
Tensor<S> split_batch_into_time(const Tensor<S>& x, int N) {
  detail::require(x.rank() == 4, "split_batch_into_time: rank must be 4");
  detail::require(N >= 1 && x.dim(0) % N == 0,
                  "split_batch_into_time: batch not divisible");
  const int T = x.dim(0) / N, C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t plane = size_t(H) * W;
  std::vector<S> out(x.data().size());
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        const S* src =
            x.data().data() + (((size_t(n) * T + t) * C + c) * plane);
        S* dst = out.data() + (((size_t(n) * C + c) * T + t) * plane);
        std::copy(src, src + plane, dst);
      }
  return make_result<S>(
      {N, C, T, H, W}, std::move(out), {x}, [x, N, T, C, plane](Node<S>& self) {
        x.node()->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) {
              const S* src =
                  self.grad.data() + (((size_t(n) * C + c) * T + t) * plane);
              S* dst = x.node()->grad.data() +
                       (((size_t(n) * T + t) * C + c) * plane);
              for (size_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
      });
}

// [N*T, D] -> [N, D], averaging each group of T consecutive rows.
template <class S>
Tensor<S> mean_over_groups(const Tensor<S>& x, int T) {
  detail::require(x.rank() == 2, "mean_over_groups: rank must be 2");
  detail::require(T >= 1 && x.dim(0) % T == 0,
                  "mean_over_groups: rows not divisible by group size");
  const int N = x.dim(0) / T, D = x.dim(1);
  std::vector<S> out(size_t(N) * D, S(0));
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d)
        out[size_t(n) * D + d] += x.data()[(size_t(n) * T + t) * D + d];
  const S inv = S(1) / S(T);
  for (auto& v : out) v *= inv;
  return make_result<S>(
      {N, D}, std::move(out), {x}, [x, N, T, D, inv](Node<S>& self) {
        x.node()->ensure_grad();
        for (int n = 0; n < N; ++n)
          for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d)
              x.node()->grad[(size_t(n) * T + t) * D + d] +=
                  inv * self.grad[size_t(n) * D + d];
      });
}

// ---------------------------------------------------------------------------
// Linear and softmax
// ---------------------------------------------------------------------------

// x [N, D], w [O, D], b [O] -> [N, O]
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
                  "linear: bad ranks");
  const int N = x.dim(0), D = x.dim(1), O = w.dim(0);
  detail::require(w.dim(1) == D && b.dim(0) == O, "linear: shape mismatch");

  std::vector<S> out(size_t(N) * O);
  {
    Eigen::Map<const MatRM<S>> xm(x.data().data(), N, D);
    Eigen::Map<const MatRM<S>> wm(w.data().data(), O, D);
    Eigen::Map<MatRM<S>> ym(out.data(), N, O);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) out[size_t(n) * O + o] += b.data()[o];
  }
  return make_result<S>(
      {N, O}, std::move(out), {x, w, b}, [x, w, b, N, D, O](Node<S>& self) {
        Eigen::Map<const MatRM<S>> gy(self.grad.data(), N, O);
        if (x.requires_grad()) {
          x.node()->ensure_grad();
          Eigen::Map<const MatRM<S>> wm(w.data().data(), O, D);
          Eigen::Map<MatRM<S>> gx(x.node()->grad.data(), N, D);
          gx.noalias() += gy * wm;
        }
        if (w.requires_grad()) {
          w.node()->ensure_grad();
          Eigen::Map<const MatRM<S>> xm(x.data().data(), N, D);
          Eigen::Map<MatRM<S>> gw(w.node()->grad.data(), O, D);
          gw.noalias() += gy.transpose() * xm;
        }
        if (b.requires_grad()) {
          b.node()->ensure_grad();
          for (int n = 0; n < N; ++n)
            for (int o = 0; o < O; ++o)
              b.node()->grad[o] += self.grad[size_t(n) * O + o];
        }
      });
}

// Softmax over the last dimension.
template <class S>
Tensor<S> softmax(const Tensor<S>& x) {
  const int C = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / C;
  std::vector<S> out(x.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const S* in = x.data().data() + r * C;
    S* o = out.data() + r * C;
    S mx = *std::max_element(in, in + C);
    S denom = 0;
    for (int c = 0; c < C; ++c) {
      o[c] = std::exp(in[c] - mx);
      denom += o[c];
    }
    for (int c = 0; c < C; ++c) o[c] /= denom;
  }
  return make_result<S>(
      x.shape(), std::move(out), {x}, [x, C, rows](Node<S>& self) {
        x.node()->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const S* y = self.value.data() + r * C;
          const S* gy = self.grad.data() + r * C;
          S dot = 0;
          for (int c = 0; c < C; ++c) dot += y[c] * gy[c];
          S* gx = x.node()->grad.data() + r * C;
          for (int c = 0; c < C; ++c) gx[c] += y[c] * (gy[c] - dot);
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + GEMM)
// ---------------------------------------------------------------------------

enum class PadMode { kZero, kReplicate };

template <class S>
struct ConvWeights2D {
  Tensor<S> kernel;  // [out, in, kh, kw]
  Tensor<S> bias;    // [out]

  int out_channels() const { return kernel.dim(0); }
  int in_channels() const { return kernel.dim(1); }
  int kh() const { return kernel.dim(2); }
  int kw() const { return kernel.dim(3); }
};

template <class S>
struct ConvWeights3D {
  Tensor<S> kernel;  // [out, in, kt, kh, kw]
  Tensor<S> bias;    // [out]

  int out_channels() const { return kernel.dim(0); }
  int in_channels() const { return kernel.dim(1); }
  int kt() const { return kernel.dim(2); }
  int kh() const { return kernel.dim(3); }
  int kw() const { return kernel.dim(4); }
};

enum class InflateMode { kMean, kCenter };

// Expands 2D kernels along a new leading temporal axis. Mean mode spreads the
// kernel so that temporal slices sum to the original; center mode places the
// original at the middle slice with zeros elsewhere. Bias is copied.
template <class S>
ConvWeights3D<S> inflate_2d_to_3d(const ConvWeights2D<S>& w, int kt,
                                  InflateMode mode) {
  if (kt < 1) throw std::invalid_argument("inflate: kt must be >= 1");
  const int O = w.out_channels(), I = w.in_channels(), kh = w.kh(), kw = w.kw();
  std::vector<S> kernel(size_t(O) * I * kt * kh * kw, S(0));
  const int center = (kt - 1) / 2;
  for (int t = 0; t < kt; ++t) {
    S factor = (mode == InflateMode::kMean) ? S(1) / S(kt)
                                            : (t == center ? S(1) : S(0));
    if (factor == S(0)) continue;
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < I; ++i) {
        const S* s = w.kernel.data().data() + (size_t(o) * I + i) * kh * kw;
        S* d = kernel.data() + ((size_t(o) * I + i) * kt + t) * size_t(kh) * kw;
        for (int p = 0; p < kh * kw; ++p) d[p] = factor * s[p];
      }
  }
  ConvWeights3D<S> out;
  out.kernel = Tensor<S>::from_data({O, I, kt, kh, kw}, std::move(kernel),
                                    w.kernel.requires_grad());
  out.bias = Tensor<S>::from_data({O}, w.bias.data(), w.bias.requires_grad());
  return out;
}

namespace detail {

// Gathers conv2d receptive fields into a column-major [K x OHW] matrix for
// one sample. K = C*kh*kw.
template <class S>
void im2col_2d(const S* x, int C, int H, int W, int kh, int kw, int sh, int sw,
               int ph, int pw, int OH, int OW, S* cols) {
  const int K = C * kh * kw;
  for (int oh = 0; oh < OH; ++oh)
    for (int ow = 0; ow < OW; ++ow) {
      S* col = cols + (size_t(oh) * OW + ow) * K;
      int k = 0;
      for (int c = 0; c < C; ++c) {
        const S* xc = x + size_t(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oh * sh - ph + ky;
          for (int kx = 0; kx < kw; ++kx, ++k) {
            int ix = ow * sw - pw + kx;
            col[k] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                         ? xc[size_t(iy) * W + ix]
                         : S(0);
          }
        }
      }
    }
}

template <class S>
void col2im_2d(const S* cols, int C, int H, int W, int kh, int kw, int sh,
               int sw, int ph, int pw, int OH, int OW, S* gx) {
  const int K = C * kh * kw;
  for (int oh = 0; oh < OH; ++oh)
    for (int ow = 0; ow < OW; ++ow) {
      const S* col = cols + (size_t(oh) * OW + ow) * K;
      int k = 0;
      for (int c = 0; c < C; ++c) {
        S* xc = gx + size_t(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oh * sh - ph + ky;
          for (int kx = 0; kx < kw; ++kx, ++k) {
            int ix = ow * sw - pw + kx;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              xc[size_t(iy) * W + ix] += col[k];
          }
        }
      }
    }
}

// conv3d gather; temporal padding is either zero or edge-replicated,
// spatial padding is always zero.
template <class S>
void im2col_3d(const S* x, int C, int T, int H, int W, int kt, int kh, int kw,
               int st, int sh, int sw, int pt, int ph, int pw, int OT, int OH,
               int OW, PadMode tmode, S* cols) {
  const int K = C * kt * kh * kw;
  for (int ot = 0; ot < OT; ++ot)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        S* col = cols + ((size_t(ot) * OH + oh) * OW + ow) * K;
        int k = 0;
        for (int c = 0; c < C; ++c) {
          const S* xc = x + size_t(c) * T * H * W;
          for (int kz = 0; kz < kt; ++kz) {
            int it = ot * st - pt + kz;
            bool t_ok = true;
            if (it < 0 || it >= T) {
              if (tmode == PadMode::kReplicate)
                it = std::clamp(it, 0, T - 1);
              else
                t_ok = false;
            }
            for (int ky = 0; ky < kh; ++ky) {
              int iy = oh * sh - ph + ky;
              for (int kx = 0; kx < kw; ++kx, ++k) {
                int ix = ow * sw - pw + kx;
                col[k] = (t_ok && iy >= 0 && iy < H && ix >= 0 && ix < W)
                             ? xc[(size_t(it) * H + iy) * W + ix]
                             : S(0);
              }
            }
          }
        }
      }
}

template <class S>
void col2im_3d(const S* cols, int C, int T, int H, int W, int kt, int kh,
               int kw, int st, int sh, int sw, int pt, int ph, int pw, int OT,
               int OH, int OW, PadMode tmode, S* gx) {
  const int K = C * kt * kh * kw;
  for (int ot = 0; ot < OT; ++ot)
    for (int oh = 0; oh < OH; ++oh)
      for (int ow = 0; ow < OW; ++ow) {
        const S* col = cols + ((size_t(ot) * OH + oh) * OW + ow) * K;
        int k = 0;
        for (int c = 0; c < C; ++c) {
          S* xc = gx + size_t(c) * T * H * W;
          for (int kz = 0; kz < kt; ++kz) {
            int it = ot * st - pt + kz;
            bool t_ok = true;
            if (it < 0 || it >= T) {
              if (tmode == PadMode::kReplicate)
                it = std::clamp(it, 0, T - 1);
              else
                t_ok = false;
            }
            for (int ky = 0; ky < kh; ++ky) {
              int iy = oh * sh - ph + ky;
              for (int kx = 0; kx < kw; ++kx, ++k) {
                int ix = ow * sw - pw + kx;
                if (t_ok && iy >= 0 && iy < H && ix >= 0 && ix < W)
                  xc[(size_t(it) * H + iy) * W + ix] += col[k];
              }
            }
          }
        }
      }
}

}  // namespace detail

// x [N, C, H, W] -> [N, O, OH, OW]; standard cross-correlation, zero padding.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const ConvWeights2D<S>& w, int stride,
                 int padding) {
  detail::require(x.rank() == 4, "conv2d: input rank must be 4");
  detail::require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(C == w.in_channels(), "conv2d: channel mismatch");
  const int O = w.out_channels(), kh = w.kh(), kw = w.kw();
  const int OH = detail::conv_out(H, kh, stride, padding);
  const int OW = detail::conv_out(W, kw, stride, padding);
  detail::require(OH >= 1 && OW >= 1, "conv2d: output would be empty");

  const int K = C * kh * kw;
  const size_t ohw = size_t(OH) * OW;
  std::vector<S> out(size_t(N) * O * ohw);
  std::vector<S> cols(size_t(K) * ohw);
  Eigen::Map<const MatRM<S>> wm(w.kernel.data().data(), O, K);
  for (int n = 0; n < N; ++n) {
    detail::im2col_2d(x.data().data() + size_t(n) * C * H * W, C, H, W, kh, kw,
                      stride, stride, padding, padding, OH, OW, cols.data());
    Eigen::Map<const MatCM<S>> cm(cols.data(), K, Eigen::Index(ohw));
    Eigen::Map<MatCM<S>> ym(out.data() + size_t(n) * O * ohw, Eigen::Index(ohw), O);
    ym.noalias() = cm.transpose() * wm.transpose();
  }
  // ym above is [OHW x O] column-major == [O x OHW] row-major block.
  for (int n = 0; n < N; ++n) {
    S* base = out.data() + size_t(n) * O * ohw;
    for (int o = 0; o < O; ++o) {
      S bv = w.bias.data()[o];
      S* p = base + size_t(o) * ohw;
      for (size_t i = 0; i < ohw; ++i) p[i] += bv;
    }
  }

  Tensor<S> kernel = w.kernel, bias = w.bias;
  return make_result<S>(
      {N, O, OH, OW}, std::move(out), {x, kernel, bias},
      [x, kernel, bias, N, C, H, W, O, kh, kw, stride, padding, OH,
       OW](Node<S>& self) {
        const int K = C * kh * kw;
        const size_t ohw = size_t(OH) * OW;
        std::vector<S> cols(size_t(K) * ohw);
        const bool need_gx = x.requires_grad();
        const bool need_gw = kernel.requires_grad();
        const bool need_gb = bias.requires_grad();
        if (need_gx) x.node()->ensure_grad();
        if (need_gw) kernel.node()->ensure_grad();
        if (need_gb) bias.node()->ensure_grad();
        Eigen::Map<MatRM<S>> gw(
            need_gw ? kernel.node()->grad.data() : nullptr, need_gw ? O : 0,
            need_gw ? K : 0);
        for (int n = 0; n < N; ++n) {
          Eigen::Map<const MatCM<S>> gy(self.grad.data() + size_t(n) * O * ohw,
                                        Eigen::Index(ohw), O);
          if (need_gw || need_gx)
            detail::im2col_2d(x.data().data() + size_t(n) * C * H * W, C, H, W,
                              kh, kw, stride, stride, padding, padding, OH, OW,
                              cols.data());
          if (need_gw) {
            Eigen::Map<const MatCM<S>> cm(cols.data(), K, Eigen::Index(ohw));
            gw.noalias() += (cm * gy).transpose();
          }
          if (need_gb) {
            for (int o = 0; o < O; ++o) {
              const S* p = self.grad.data() + (size_t(n) * O + o) * ohw;
              S acc = 0;
              for (size_t i = 0; i < ohw; ++i) acc += p[i];
              bias.node()->grad[o] += acc;
            }
          }
          if (need_gx) {
            Eigen::Map<const MatRM<S>> wm(kernel.data().data(), O, K);
            Eigen::Map<MatCM<S>> gcols(cols.data(), K, Eigen::Index(ohw));
            gcols.noalias() = wm.transpose() * gy.transpose();
            detail::col2im_2d(cols.data(), C, H, W, kh, kw, stride, stride,
                              padding, padding, OH, OW,
                              x.node()->grad.data() + size_t(n) * C * H * W);
          }
        }
      });
}

// x [N, C, T, H, W] -> [N, O, OT, OH, OW]
template <class S>
Tensor<S> conv3d(const Tensor<S>& x, const ConvWeights3D<S>& w, int stride_t,
                 int stride_s, int pad_t, int pad_s,
                 PadMode temporal_pad = PadMode::kZero) {
  detail::require(x.rank() == 5, "conv3d: input rank must be 5");
  detail::require(stride_t >= 1 && stride_s >= 1 && pad_t >= 0 && pad_s >= 0,
                  "conv3d: bad stride/padding");
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3),
            W = x.dim(4);
  detail::require(C == w.in_channels(), "conv3d: channel mismatch");
  const int O = w.out_channels(), kt = w.kt(), kh = w.kh(), kw = w.kw();
  const int OT = detail::conv_out(T, kt, stride_t, pad_t);
  const int OH = detail::conv_out(H, kh, stride_s, pad_s);
  const int OW = detail::conv_out(W, kw, stride_s, pad_s);
  detail::require(OT >= 1 && OH >= 1 && OW >= 1,
                  "conv3d: output would be empty (clip too short?)");

  const int K = C * kt * kh * kw;
  const size_t vol = size_t(OT) * OH * OW;
  std::vector<S> out(size_t(N) * O * vol);
  std::vector<S> cols(size_t(K) * vol);
  Eigen::Map<const MatRM<S>> wm(w.kernel.data().data(), O, K);
  for (int n = 0; n < N; ++n) {
    detail::im2col_3d(x.data().data() + size_t(n) * C * T * H * W, C, T, H, W,
                      kt, kh, kw, stride_t, stride_s, stride_s, pad_t, pad_s,
                      pad_s, OT, OH, OW, temporal_pad, cols.data());
    Eigen::Map<MatCM<S>> ym(out.data() + size_t(n) * O * vol, Eigen::Index(vol), O);
    if (kt == 1) {
      // Per-frame GEMMs of the same shape conv2d uses, so a kt=1 kernel
      // reproduces the 2D convolution bit for bit.
      const size_t ohw = size_t(OH) * OW;
      for (int ot = 0; ot < OT; ++ot) {
        Eigen::Map<const MatCM<S>> cm(cols.data() + size_t(ot) * ohw * K, K,
                                      Eigen::Index(ohw));
        ym.middleRows(Eigen::Index(size_t(ot) * ohw), Eigen::Index(ohw))
            .noalias() = cm.transpose() * wm.transpose();
      }
    } else {
      Eigen::Map<const MatCM<S>> cm(cols.data(), K, Eigen::Index(vol));
      ym.noalias() = cm.transpose() * wm.transpose();
    }
  }
  for (int n = 0; n < N; ++n) {
    S* base = out.data() + size_t(n) * O * vol;
    for (int o = 0; o < O; ++o) {
      S bv = w.bias.data()[o];
      S* p = base + size_t(o) * vol;
      for (size_t i = 0; i < vol; ++i) p[i] += bv;
    }
  }

  Tensor<S> kernel = w.kernel, bias = w.bias;
  return make_result<S>(
      {N, O, OT, OH, OW}, std::move(out), {x, kernel, bias},
      [x, kernel, bias, N, C, T, H, W, O, kt, kh, kw, stride_t, stride_s,
       pad_t, pad_s, OT, OH, OW, temporal_pad](Node<S>& self) {
        const int K = C * kt * kh * kw;
        const size_t vol = size_t(OT) * OH * OW;
        std::vector<S> cols(size_t(K) * vol);
        const bool need_gx = x.requires_grad();
        const bool need_gw = kernel.requires_grad();
        const bool need_gb = bias.requires_grad();
        if (need_gx) x.node()->ensure_grad();
        if (need_gw) kernel.node()->ensure_grad();
        if (need_gb) bias.node()->ensure_grad();
        Eigen::Map<MatRM<S>> gw(
            need_gw ? kernel.node()->grad.data() : nullptr, need_gw ? O : 0,
            need_gw ? K : 0);
        for (int n = 0; n < N; ++n) {
          Eigen::Map<const MatCM<S>> gy(self.grad.data() + size_t(n) * O * vol,
                                        Eigen::Index(vol), O);
          if (need_gw || need_gx)
            detail::im2col_3d(x.data().data() + size_t(n) * C * T * H * W, C,
                              T, H, W, kt, kh, kw, stride_t, stride_s,
                              stride_s, pad_t, pad_s, pad_s, OT, OH, OW,
                              temporal_pad, cols.data());
          if (need_gw) {
            Eigen::Map<const MatCM<S>> cm(cols.data(), K, Eigen::Index(vol));
            gw.noalias() += (cm * gy).transpose();
          }
          if (need_gb) {
            for (int o = 0; o < O; ++o) {
              const S* p = self.grad.data() + (size_t(n) * O + o) * vol;
              S acc = 0;
              for (size_t i = 0; i < vol; ++i) acc += p[i];
              bias.node()->grad[o] += acc;
            }
          }
          if (need_gx) {
            Eigen::Map<const MatRM<S>> wm(kernel.data().data(), O, K);
            Eigen::Map<MatCM<S>> gcols(cols.data(), K, Eigen::Index(vol));
            gcols.noalias() = wm.transpose() * gy.transpose();
            detail::col2im_3d(cols.data(), C, T, H, W, kt, kh, kw, stride_t,
                              stride_s, stride_s, pad_t, pad_s, pad_s, OT, OH,
                              OW, temporal_pad,
                              x.node()->grad.data() + size_t(n) * C * T * H * W);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> max_pool2d(const Tensor<S>& x, int k, int stride) {
  detail::require(x.rank() == 4, "max_pool2d: rank must be 4");
  detail::require(k >= 1 && stride >= 1, "max_pool2d: bad kernel/stride");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
  detail::require(OH >= 1 && OW >= 1, "max_pool2d: output would be empty");

  std::vector<S> out(size_t(N) * C * OH * OW);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  size_t idx = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* xp = x.data().data() + (size_t(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++idx) {
          S best = -std::numeric_limits<S>::infinity();
          int64_t bi = 0;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int64_t i = int64_t(oh * stride + ky) * W + (ow * stride + kx);
              if (xp[i] > best) {
                best = xp[i];
                bi = i;
              }
            }
          out[idx] = best;
          (*argmax)[idx] = (size_t(n) * C + c) * H * W + bi;
        }
    }
  return make_result<S>({N, C, OH, OW}, std::move(out), {x},
                        [x, argmax](Node<S>& self) {
                          x.node()->ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i)
                            x.node()->grad[(*argmax)[i]] += self.grad[i];
                        });
}

template <class S>
Tensor<S> max_pool3d(const Tensor<S>& x, int kt, int ks, int stride_t,
                     int stride_s) {
  detail::require(x.rank() == 5, "max_pool3d: rank must be 5");
  detail::require(kt >= 1 && ks >= 1 && stride_t >= 1 && stride_s >= 1,
                  "max_pool3d: bad kernel/stride");
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3),
            W = x.dim(4);
  const int OT = (T - kt) / stride_t + 1;
  const int OH = (H - ks) / stride_s + 1, OW = (W - ks) / stride_s + 1;
  detail::require(OT >= 1 && OH >= 1 && OW >= 1,
                  "max_pool3d: output would be empty");

  std::vector<S> out(size_t(N) * C * OT * OH * OW);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  size_t idx = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* xp = x.data().data() + (size_t(n) * C + c) * T * H * W;
      for (int ot = 0; ot < OT; ++ot)
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow, ++idx) {
            S best = -std::numeric_limits<S>::infinity();
            int64_t bi = 0;
            for (int kz = 0; kz < kt; ++kz)
              for (int ky = 0; ky < ks; ++ky)
                for (int kx = 0; kx < ks; ++kx) {
                  int64_t i = (int64_t(ot * stride_t + kz) * H +
                               (oh * stride_s + ky)) *
                                  W +
                              (ow * stride_s + kx);
                  if (xp[i] > best) {
                    best = xp[i];
                    bi = i;
                  }
                }
            out[idx] = best;
            (*argmax)[idx] = (size_t(n) * C + c) * T * H * W + bi;
          }
    }
  return make_result<S>({N, C, OT, OH, OW}, std::move(out), {x},
                        [x, argmax](Node<S>& self) {
                          x.node()->ensure_grad();
                          for (size_t i = 0; i < self.grad.size(); ++i)
                            x.node()->grad[(*argmax)[i]] += self.grad[i];
                        });
}

// [N, C, ...spatial...] -> [N, C]; mean over every trailing dimension.
template <class S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  detail::require(x.rank() >= 3, "global_avg_pool: rank must be >= 3");
  const int N = x.dim(0), C = x.dim(1);
  int64_t inner = 1;
  for (size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  std::vector<S> out(size_t(N) * C, S(0));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* p = x.data().data() + (size_t(n) * C + c) * inner;
      S acc = 0;
      for (int64_t i = 0; i < inner; ++i) acc += p[i];
      out[size_t(n) * C + c] = acc / S(inner);
    }
  return make_result<S>(
      {N, C}, std::move(out), {x}, [x, N, C, inner](Node<S>& self) {
        x.node()->ensure_grad();
        const S inv = S(1) / S(inner);
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            S g = inv * self.grad[size_t(n) * C + c];
            S* p = x.node()->grad.data() + (size_t(n) * C + c) * inner;
            for (int64_t i = 0; i < inner; ++i) p[i] += g;
          }
      });
}

// ---------------------------------------------------------------------------
// Batch norm
// ---------------------------------------------------------------------------

// Per-channel batch norm over dim 1; works for [N,C,H,W] and [N,C,T,H,W].
// Training mode uses biased batch statistics and updates the running buffers
// in place: running = momentum * running + (1 - momentum) * batch.
template <class S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, Tensor<S>& running_mean,
                     Tensor<S>& running_var, bool training,
                     S momentum = S(0.9), S eps = S(1e-5)) {
  detail::require(x.rank() >= 2, "batch_norm: rank must be >= 2");
  const int C = x.dim(1);
  detail::require(gamma.rank() == 1 && gamma.dim(0) == C &&
                      beta.rank() == 1 && beta.dim(0) == C &&
                      running_mean.dim(0) == C && running_var.dim(0) == C,
                  "batch_norm: channel mismatch");
  const int N = x.dim(0);
  int64_t inner = 1;
  for (size_t i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const int64_t count = int64_t(N) * inner;

  std::vector<S> mean_c(C), var_c(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      S m = 0;
      for (int n = 0; n < N; ++n) {
        const S* p = x.data().data() + (size_t(n) * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) m += p[i];
      }
      m /= S(count);
      S v = 0;
      for (int n = 0; n < N; ++n) {
        const S* p = x.data().data() + (size_t(n) * C + c) * inner;
        for (int64_t i = 0; i < inner; ++i) {
          S d = p[i] - m;
          v += d * d;
        }
      }
      v /= S(count);
      mean_c[c] = m;
      var_c[c] = v;
      running_mean.data()[c] = momentum * running_mean.data()[c] + (S(1) - momentum) * m;
      running_var.data()[c] = momentum * running_var.data()[c] + (S(1) - momentum) * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean_c[c] = running_mean.data()[c];
      var_c[c] = running_var.data()[c];
    }
  }

  std::vector<S> inv_std(C);
  for (int c = 0; c < C; ++c) inv_std[c] = S(1) / std::sqrt(var_c[c] + eps);

  auto xhat = std::make_shared<std::vector<S>>(x.data().size());
  std::vector<S> out(x.data().size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* p = x.data().data() + (size_t(n) * C + c) * inner;
      S* xh = xhat->data() + (size_t(n) * C + c) * inner;
      S* o = out.data() + (size_t(n) * C + c) * inner;
      const S g = gamma.data()[c], b = beta.data()[c], m = mean_c[c],
              is = inv_std[c];
      for (int64_t i = 0; i < inner; ++i) {
        xh[i] = (p[i] - m) * is;
        o[i] = g * xh[i] + b;
      }
    }

  auto inv_std_sp = std::make_shared<std::vector<S>>(std::move(inv_std));
  return make_result<S>(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std_sp, N, C, inner, count,
       training](Node<S>& self) {
        const bool need_gx = x.requires_grad();
        if (gamma.requires_grad()) gamma.node()->ensure_grad();
        if (beta.requires_grad()) beta.node()->ensure_grad();
        if (need_gx) x.node()->ensure_grad();
        for (int c = 0; c < C; ++c) {
          S sum_gy = 0, sum_gy_xhat = 0;
          for (int n = 0; n < N; ++n) {
            const S* gy = self.grad.data() + (size_t(n) * C + c) * inner;
            const S* xh = xhat->data() + (size_t(n) * C + c) * inner;
            for (int64_t i = 0; i < inner; ++i) {
              sum_gy += gy[i];
              sum_gy_xhat += gy[i] * xh[i];
            }
          }
          if (gamma.requires_grad()) gamma.node()->grad[c] += sum_gy_xhat;
          if (beta.requires_grad()) beta.node()->grad[c] += sum_gy;
          if (!need_gx) continue;
          const S g = gamma.data()[c];
          const S is = (*inv_std_sp)[c];
          if (training) {
            const S inv_count = S(1) / S(count);
            for (int n = 0; n < N; ++n) {
              const S* gy = self.grad.data() + (size_t(n) * C + c) * inner;
              const S* xh = xhat->data() + (size_t(n) * C + c) * inner;
              S* gx = x.node()->grad.data() + (size_t(n) * C + c) * inner;
              for (int64_t i = 0; i < inner; ++i)
                gx[i] += g * is *
                         (gy[i] - inv_count * sum_gy -
                          xh[i] * inv_count * sum_gy_xhat);
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const S* gy = self.grad.data() + (size_t(n) * C + c) * inner;
              S* gx = x.node()->grad.data() + (size_t(n) * C + c) * inner;
              for (int64_t i = 0; i < inner; ++i) gx[i] += g * is * gy[i];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

template <class S>
struct SgdConfig {
  S lr = S(0.01);
  S momentum = S(0);
  S weight_decay = S(0);
};

// One momentum-SGD update for a single parameter:
//   v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v
template <class S>
void sgd_step(Tensor<S>& param, const std::vector<S>& grad,
              std::vector<S>& velocity, const SgdConfig<S>& cfg) {
  detail::require(grad.size() == param.data().size(),
                  "sgd_step: grad shape mismatch");
  if (velocity.size() != grad.size()) velocity.assign(grad.size(), S(0));
  for (size_t i = 0; i < grad.size(); ++i) {
    S g = grad[i] + cfg.weight_decay * param.data()[i];
    velocity[i] = cfg.momentum * velocity[i] + g;
    param.data()[i] -= cfg.lr * velocity[i];
  }
}

template <class S>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(std::vector<Tensor<S>> params)
      : params_(std::move(params)), velocity_(params_.size()) {}

  void step(const SgdConfig<S>& cfg) {
    for (size_t i = 0; i < params_.size(); ++i)
      sgd_step(params_[i], params_[i].grad(), velocity_[i], cfg);
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<S>> params_;
  std::vector<std::vector<S>> velocity_;
};

}  // namespace cvip::nn
