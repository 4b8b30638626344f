#include <doctest.h>

#include <cmath>

#include "cvip/nn/ops.hpp"
#include "cvip/nn/tensor.hpp"
#include "cvip/rng.hpp"
#include "gradcheck.hpp"

using namespace cvip;
using namespace cvip::nn;
using cvip_test::gradcheck_max_rel_err;

namespace {

template <class S>
Tensor<S> random_tensor(std::vector<int> shape, Rng& rng, bool rg = false,
                        double scale = 1.0) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<S> data(static_cast<size_t>(n));
  for (auto& v : data) v = S(rng.normal(0, scale));
  return Tensor<S>::from_data(std::move(shape), std::move(data), rg);
}

// Reference conv2d: six nested loops, zero padding.
template <class S>
std::vector<S> naive_conv2d(const std::vector<S>& x, int N, int C, int H,
                            int W, const std::vector<S>& w,
                            const std::vector<S>& b, int O, int kh, int kw,
                            int stride, int pad, int OH, int OW) {
  std::vector<S> out(size_t(N) * O * OH * OW, S(0));
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          S acc = b[o];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                int iy = oh * stride - pad + ky;
                int ix = ow * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += x[((size_t(n) * C + c) * H + iy) * W + ix] *
                       w[((size_t(o) * C + c) * kh + ky) * kw + kx];
              }
          out[((size_t(n) * O + o) * OH + oh) * OW + ow] = acc;
        }
  return out;
}

// Reference conv3d: eight nested loops.
template <class S>
std::vector<S> naive_conv3d(const std::vector<S>& x, int N, int C, int T,
                            int H, int W, const std::vector<S>& w,
                            const std::vector<S>& b, int O, int kt, int kh,
                            int kw, int st, int ss, int pt, int ps,
                            PadMode tmode, int OT, int OH, int OW) {
  std::vector<S> out(size_t(N) * O * OT * OH * OW, S(0));
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int ot = 0; ot < OT; ++ot)
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow) {
            S acc = b[o];
            for (int c = 0; c < C; ++c)
              for (int kz = 0; kz < kt; ++kz)
                for (int ky = 0; ky < kh; ++ky)
                  for (int kx = 0; kx < kw; ++kx) {
                    int it = ot * st - pt + kz;
                    int iy = oh * ss - ps + ky;
                    int ix = ow * ss - ps + kx;
                    if (it < 0 || it >= T) {
                      if (tmode == PadMode::kReplicate)
                        it = std::clamp(it, 0, T - 1);
                      else
                        continue;
                    }
                    if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                    acc += x[(((size_t(n) * C + c) * T + it) * H + iy) * W + ix] *
                           w[(((size_t(o) * C + c) * kt + kz) * kh + ky) * kw + kx];
                  }
            out[(((size_t(n) * O + o) * OT + ot) * OH + oh) * OW + ow] = acc;
          }
  return out;
}

template <class S>
ConvWeights2D<S> make_w2d(int O, int C, int k, Rng& rng, bool rg = false) {
  ConvWeights2D<S> w;
  w.kernel = random_tensor<S>({O, C, k, k}, rng, rg, 0.5);
  w.bias = random_tensor<S>({O}, rng, rg, 0.5);
  return w;
}

template <class S>
ConvWeights3D<S> make_w3d(int O, int C, int kt, int k, Rng& rng,
                          bool rg = false) {
  ConvWeights3D<S> w;
  w.kernel = random_tensor<S>({O, C, kt, k, k}, rng, rg, 0.5);
  w.bias = random_tensor<S>({O}, rng, rg, 0.5);
  return w;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel passes channels through") {
  Rng rng(1);
  auto x = random_tensor<float>({1, 1, 5, 5}, rng);
  ConvWeights2D<float> w;
  w.kernel = Tensor<float>::from_data({1, 1, 1, 1}, {1.f});
  w.bias = Tensor<float>::zeros({1});
  auto y = conv2d(x, w, 1, 0);
  CHECK(y.data() == x.data());
}

TEST_CASE("conv2d: all-ones 3x3 on all-ones 4x4 input, padding 1") {
  auto x = Tensor<float>::full({1, 1, 4, 4}, 1.f);
  ConvWeights2D<float> w;
  w.kernel = Tensor<float>::full({1, 1, 3, 3}, 1.f);
  w.bias = Tensor<float>::zeros({1});
  auto y = conv2d(x, w, 1, 1);
  REQUIRE(y.shape() == std::vector<int>{1, 1, 4, 4});
  // corners see a 2x2 window, center cells the full 3x3
  CHECK(y.data()[0] == 4.f);
  CHECK(y.data()[3] == 4.f);
  CHECK(y.data()[12] == 4.f);
  CHECK(y.data()[15] == 4.f);
  CHECK(y.data()[5] == 9.f);
  CHECK(y.data()[6] == 9.f);
}

TEST_CASE("conv2d: matches the naive loop reference") {
  Rng rng(2);
  for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}, {2, 0}}) {
    auto x = random_tensor<float>({2, 3, 9, 7}, rng);
    auto w = make_w2d<float>(4, 3, 3, rng);
    auto y = conv2d(x, w, stride, pad);
    int OH = (9 + 2 * pad - 3) / stride + 1, OW = (7 + 2 * pad - 3) / stride + 1;
    auto ref = naive_conv2d(x.data(), 2, 3, 9, 7, w.kernel.data(),
                            w.bias.data(), 4, 3, 3, stride, pad, OH, OW);
    REQUIRE(y.data().size() == ref.size());
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
}

TEST_CASE("conv2d: deterministic forward") {
  Rng rng(3);
  auto x = random_tensor<float>({1, 4, 12, 12}, rng);
  auto w = make_w2d<float>(6, 4, 3, rng);
  auto y1 = conv2d(x, w, 1, 1);
  auto y2 = conv2d(x, w, 1, 1);
  CHECK(y1.data() == y2.data());
}

TEST_CASE("conv3d: kt=1 equals conv2d applied per frame, exactly") {
  Rng rng(4);
  const int N = 1, C = 2, T = 3, H = 6, W = 5, O = 4;
  auto x = random_tensor<float>({N, C, T, H, W}, rng);
  auto w3 = make_w3d<float>(O, C, 1, 3, rng);
  ConvWeights2D<float> w2;
  w2.kernel = Tensor<float>::from_data({O, C, 3, 3}, w3.kernel.data());
  w2.bias = w3.bias;

  auto y3 = conv3d(x, w3, 1, 1, 0, 1);
  for (int t = 0; t < T; ++t) {
    std::vector<float> frame(size_t(C) * H * W);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H * W; ++i)
        frame[size_t(c) * H * W + i] =
            x.data()[((size_t(C) * 0 + c) * T + t) * H * W + i];
    auto xf = Tensor<float>::from_data({1, C, H, W}, frame);
    auto y2 = conv2d(xf, w2, 1, 1);
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < H * W; ++i)
        CHECK(y3.data()[((size_t(o)) * T + t) * H * W + i] ==
              y2.data()[size_t(o) * H * W + i]);
  }
}

TEST_CASE("conv3d: temporally constant input stays constant (replicate pad)") {
  Rng rng(5);
  const int T = 4;
  auto frame = random_tensor<float>({1, 2, 1, 6, 6}, rng);
  std::vector<float> clip_data;
  for (int c = 0; c < 2; ++c)
    for (int t = 0; t < T; ++t)
      clip_data.insert(clip_data.end(),
                       frame.data().begin() + c * 36,
                       frame.data().begin() + (c + 1) * 36);
  auto clip = Tensor<float>::from_data({1, 2, T, 6, 6}, clip_data);
  auto w = make_w3d<float>(3, 2, 3, 3, rng);
  auto y = conv3d(clip, w, 1, 1, 1, 1, PadMode::kReplicate);
  const int OT = y.dim(2), HW = y.dim(3) * y.dim(4);
  for (int o = 0; o < 3; ++o)
    for (int t = 1; t < OT; ++t)
      for (int i = 0; i < HW; ++i)
        CHECK(y.data()[(size_t(o) * OT + t) * HW + i] ==
              doctest::Approx(y.data()[size_t(o) * OT * HW + i]).epsilon(1e-6));
}

TEST_CASE("conv3d: matches the naive loop reference") {
  Rng rng(6);
  for (auto tmode : {PadMode::kZero, PadMode::kReplicate}) {
    auto x = random_tensor<float>({2, 2, 5, 7, 6}, rng);
    auto w = make_w3d<float>(3, 2, 3, 3, rng);
    int st = 2, ss = 1, pt = 1, ps = 1;
    auto y = conv3d(x, w, st, ss, pt, ps, tmode);
    int OT = (5 + 2 * pt - 3) / st + 1;
    int OH = (7 + 2 * ps - 3) / ss + 1, OW = (6 + 2 * ps - 3) / ss + 1;
    auto ref = naive_conv3d(x.data(), 2, 2, 5, 7, 6, w.kernel.data(),
                            w.bias.data(), 3, 3, 3, 3, st, ss, pt, ps, tmode,
                            OT, OH, OW);
    REQUIRE(y.data().size() == ref.size());
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
}

TEST_CASE("inflate_2d_to_3d: kt=1 keeps weights identical") {
  Rng rng(7);
  auto w2 = make_w2d<float>(3, 2, 3, rng);
  for (auto mode : {InflateMode::kMean, InflateMode::kCenter}) {
    auto w3 = inflate_2d_to_3d(w2, 1, mode);
    CHECK(w3.kernel.data() == w2.kernel.data());
    CHECK(w3.bias.data() == w2.bias.data());
  }
  CHECK_THROWS_AS(inflate_2d_to_3d(w2, 0, InflateMode::kMean),
                  std::invalid_argument);
}

TEST_CASE("inflate mean: constant clip through 3D equals per-frame 2D") {
  Rng rng(8);
  const int C = 3, O = 4, H = 8, W = 8, T = 5;
  auto w2 = make_w2d<float>(O, C, 3, rng);
  auto w3 = inflate_2d_to_3d(w2, 3, InflateMode::kMean);

  auto frame = random_tensor<float>({1, C, H, W}, rng);
  std::vector<float> clip_data;
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t)
      clip_data.insert(clip_data.end(), frame.data().begin() + c * H * W,
                       frame.data().begin() + (c + 1) * H * W);
  auto clip = Tensor<float>::from_data({1, C, T, H, W}, clip_data);

  auto y2 = conv2d(frame, w2, 1, 1);
  auto y3 = conv3d(clip, w3, 1, 1, 1, 1, PadMode::kReplicate);
  const int HW = H * W;
  for (int o = 0; o < O; ++o)
    for (int t = 0; t < T; ++t)
      for (int i = 0; i < HW; ++i)
        CHECK(y3.data()[(size_t(o) * T + t) * HW + i] ==
              doctest::Approx(y2.data()[size_t(o) * HW + i]).epsilon(1e-5));
}

TEST_CASE("inflate center: middle output frame equals 2D of middle frame") {
  Rng rng(9);
  const int C = 2, O = 3, H = 6, W = 6, T = 3;
  auto w2 = make_w2d<float>(O, C, 3, rng);
  auto w3 = inflate_2d_to_3d(w2, 3, InflateMode::kCenter);

  auto clip = random_tensor<float>({1, C, T, H, W}, rng);
  std::vector<float> mid(size_t(C) * H * W);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H * W; ++i)
      mid[size_t(c) * H * W + i] = clip.data()[(size_t(c) * T + 1) * H * W + i];
  auto xm = Tensor<float>::from_data({1, C, H, W}, mid);

  auto y2 = conv2d(xm, w2, 1, 1);
  auto y3 = conv3d(clip, w3, 1, 1, 1, 1, PadMode::kZero);
  const int HW = H * W;
  for (int o = 0; o < O; ++o)
    for (int i = 0; i < HW; ++i)
      CHECK(y3.data()[(size_t(o) * T + 1) * HW + i] ==
            y2.data()[size_t(o) * HW + i]);
}

TEST_CASE("backward: sum and sum of squares") {
  Rng rng(10);
  auto x = random_tensor<float>({2, 3}, rng, true);
  backward(sum(x));
  for (float g : x.grad()) CHECK(g == 1.f);

  x.zero_grad();
  backward(sum(mul(x, x)));
  for (size_t i = 0; i < x.data().size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.f * x.data()[i]));
}

TEST_CASE("backward: rejects non-scalar and untracked losses") {
  auto x = Tensor<float>::full({2, 2}, 1.f, true);
  CHECK_THROWS_AS(backward(mul(x, x)), std::invalid_argument);
  auto y = Tensor<float>::full({1}, 1.f, false);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("layer basics") {
  auto x = Tensor<float>::from_data({1, 3}, {-1.f, 0.f, 2.f});
  auto y = relu(x);
  CHECK(y.data() == std::vector<float>{0.f, 0.f, 2.f});

  auto c = Tensor<float>::full({2, 4, 3, 5, 5}, 2.5f);
  auto g = global_avg_pool(c);
  REQUIRE(g.shape() == std::vector<int>{2, 4});
  for (float v : g.data()) CHECK(v == doctest::Approx(2.5f));

  auto s = softmax(Tensor<float>::from_data({1, 2}, {0.f, 0.f}));
  CHECK(s.data()[0] == doctest::Approx(0.5f));
  CHECK(s.data()[1] == doctest::Approx(0.5f));
}

TEST_CASE("max_pool picks window maxima") {
  auto x = Tensor<float>::from_data(
      {1, 1, 4, 4},
      {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  auto y = max_pool2d(x, 2, 2);
  CHECK(y.data() == std::vector<float>{6, 8, 14, 16});
}

TEST_CASE("batch_norm: train normalizes batch, eval uses running stats") {
  Rng rng(11);
  auto x = random_tensor<float>({4, 2, 3, 3}, rng, false, 2.0);
  auto gamma = Tensor<float>::full({2}, 1.f);
  auto beta = Tensor<float>::zeros({2});
  auto rm = Tensor<float>::zeros({2});
  auto rv = Tensor<float>::full({2}, 1.f);

  auto y = batch_norm(x, gamma, beta, rm, rv, true);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    int cnt = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i, ++cnt)
        m += y.data()[(size_t(n) * 2 + c) * 9 + i];
    m /= cnt;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        double d = y.data()[(size_t(n) * 2 + c) * 9 + i] - m;
        v += d * d;
      }
    v /= cnt;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-2));
    // running = 0.9 * old + 0.1 * batch
    CHECK(rm.data()[c] != 0.f);
  }

  // eval mode must not touch the running buffers
  auto rm_before = rm.data();
  auto rv_before = rv.data();
  batch_norm(x, gamma, beta, rm, rv, false);
  CHECK(rm.data() == rm_before);
  CHECK(rv.data() == rv_before);
}

TEST_CASE("sgd_step") {
  SgdConfig<float> cfg;
  cfg.lr = 0.f;
  auto p = Tensor<float>::from_data({1}, {1.f});
  std::vector<float> vel;
  sgd_step(p, {0.5f}, vel, cfg);
  CHECK(p.data()[0] == 1.f);

  cfg.lr = 0.1f;
  vel.clear();
  sgd_step(p, {0.5f}, vel, cfg);
  CHECK(p.data()[0] == doctest::Approx(0.95f));

  // two steps with momentum 0.9 against the hand-unrolled recurrence
  cfg.momentum = 0.9f;
  auto q = Tensor<float>::from_data({1}, {1.f});
  std::vector<float> qv;
  sgd_step(q, {0.5f}, qv, cfg);   // v1 = 0.5,  p = 1 - 0.05
  sgd_step(q, {0.5f}, qv, cfg);   // v2 = 0.95, p = 0.95 - 0.095
  CHECK(q.data()[0] == doctest::Approx(1.f - 0.1f * 0.5f - 0.1f * 0.95f));
}

TEST_CASE("gradcheck: every differentiable op (float64)") {
  Rng rng(12);
  const double tol = 1e-4;

  SUBCASE("elementwise and reductions") {
    for (int trial = 0; trial < 5; ++trial) {
      auto a = random_tensor<double>({3, 4}, rng, true);
      auto b = random_tensor<double>({3, 4}, rng, true);
      auto make = [&]() {
        return mean(mul(add(a, b), sub(scale(a, 2.0), b)));
      };
      CHECK(gradcheck_max_rel_err<double>(make, {a, b}) < tol);
    }
  }

  SUBCASE("relu") {
    for (int trial = 0; trial < 5; ++trial) {
      auto a = random_tensor<double>({4, 5}, rng, true);
      // keep values away from the kink
      for (auto& v : a.data())
        if (std::abs(v) < 0.05) v += 0.1;
      auto make = [&]() { return mean(relu(a)); };
      CHECK(gradcheck_max_rel_err<double>(make, {a}) < tol);
    }
  }

  SUBCASE("linear") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_tensor<double>({3, 6}, rng, true);
      auto w = random_tensor<double>({4, 6}, rng, true);
      auto b = random_tensor<double>({4}, rng, true);
      auto make = [&]() { return mean(mul(linear(x, w, b), linear(x, w, b))); };
      CHECK(gradcheck_max_rel_err<double>(make, {x, w, b}) < tol);
    }
  }

  SUBCASE("softmax") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_tensor<double>({3, 5}, rng, true);
      auto t = random_tensor<double>({3, 5}, rng, false);
      auto make = [&]() { return mean(mul(softmax(x), t)); };
      CHECK(gradcheck_max_rel_err<double>(make, {x}) < tol);
    }
  }

  SUBCASE("conv2d") {
    for (int trial = 0; trial < 5; ++trial) {
      int stride = trial % 2 + 1;
      auto x = random_tensor<double>({2, 2, 6, 5}, rng, true);
      auto w = make_w2d<double>(3, 2, 3, rng, true);
      auto make = [&]() {
        auto y = conv2d(x, w, stride, 1);
        return mean(mul(y, y));
      };
      CHECK(gradcheck_max_rel_err<double>(make, {x, w.kernel, w.bias}) < tol);
    }
  }

  SUBCASE("conv3d, both temporal pad modes") {
    for (int trial = 0; trial < 5; ++trial) {
      auto tmode = trial % 2 ? PadMode::kReplicate : PadMode::kZero;
      int st = trial % 2 + 1;
      auto x = random_tensor<double>({1, 2, 4, 5, 5}, rng, true);
      auto w = make_w3d<double>(2, 2, 3, 3, rng, true);
      auto make = [&]() {
        auto y = conv3d(x, w, st, 1, 1, 1, tmode);
        return mean(mul(y, y));
      };
      CHECK(gradcheck_max_rel_err<double>(make, {x, w.kernel, w.bias}) < tol);
    }
  }

  SUBCASE("max pooling") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x2 = random_tensor<double>({2, 2, 6, 6}, rng, true);
      auto make2 = [&]() {
        auto y = max_pool2d(x2, 2, 2);
        return mean(mul(y, y));
      };
      CHECK(gradcheck_max_rel_err<double>(make2, {x2}) < tol);

      auto x3 = random_tensor<double>({1, 2, 4, 4, 4}, rng, true);
      auto make3 = [&]() {
        auto y = max_pool3d(x3, 2, 2, 2, 2);
        return mean(mul(y, y));
      };
      CHECK(gradcheck_max_rel_err<double>(make3, {x3}) < tol);
    }
  }

  SUBCASE("global_avg_pool") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_tensor<double>({2, 3, 4, 4}, rng, true);
      auto make = [&]() {
        auto y = global_avg_pool(x);
        return mean(mul(y, y));
      };
      CHECK(gradcheck_max_rel_err<double>(make, {x}) < tol);

      auto x5 = random_tensor<double>({1, 2, 3, 4, 4}, rng, true);
      auto make5 = [&]() {
        auto y = global_avg_pool(x5);
        return mean(mul(y, y));
      };
      CHECK(gradcheck_max_rel_err<double>(make5, {x5}) < tol);
    }
  }

  SUBCASE("batch_norm train and eval") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_tensor<double>({3, 2, 4, 4}, rng, true);
      auto gamma = random_tensor<double>({2}, rng, true, 0.5);
      auto beta = random_tensor<double>({2}, rng, true, 0.5);
      for (auto& v : gamma.data()) v += 1.0;
      bool training = trial % 2 == 0;
      auto rm = random_tensor<double>({2}, rng, false, 0.1);
      auto rv = Tensor<double>::full({2}, 1.0);
      auto make = [&]() {
        auto y = batch_norm(x, gamma, beta, rm, rv, training);
        return mean(mul(y, y));
      };
      CHECK(gradcheck_max_rel_err<double>(make, {x, gamma, beta}) < tol);
    }
  }

  SUBCASE("shape ops") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_tensor<double>({2, 3, 2, 4, 4}, rng, true);
      auto t = random_tensor<double>({4, 3, 4, 4}, rng, false);
      auto make = [&]() {
        auto m = merge_time_into_batch(x);
        return mean(mul(m, t));
      };
      CHECK(gradcheck_max_rel_err<double>(make, {x}) < tol);

      auto y = random_tensor<double>({6, 2, 3, 3}, rng, true);
      auto make2 = [&]() {
        auto s = split_batch_into_time(y, 2);
        return mean(mul(s, s));
      };
      CHECK(gradcheck_max_rel_err<double>(make2, {y}) < tol);

      auto z = random_tensor<double>({6, 4}, rng, true);
      auto make3 = [&]() {
        auto m = mean_over_groups(z, 3);
        return mean(mul(m, m));
      };
      CHECK(gradcheck_max_rel_err<double>(make3, {z}) < tol);
    }
  }
}

TEST_CASE("merge/split time round trip") {
  Rng rng(13);
  auto x = random_tensor<float>({2, 3, 4, 5, 5}, rng);
  auto merged = merge_time_into_batch(x);
  REQUIRE(merged.shape() == std::vector<int>{8, 3, 5, 5});
  auto back = split_batch_into_time(merged, 2);
  CHECK(back.data() == x.data());
}

TEST_CASE("shape validation errors") {
  auto a = Tensor<float>::full({2, 3}, 1.f);
  auto b = Tensor<float>::full({3, 2}, 1.f);
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(reshape(a, {4, 2}), std::invalid_argument);

  Rng rng(14);
  auto x = random_tensor<float>({1, 3, 5, 5}, rng);
  auto w = make_w2d<float>(2, 4, 3, rng);
  CHECK_THROWS_AS(conv2d(x, w, 1, 1), std::invalid_argument);
}
