#pragma once

#include <cmath>
#include <vector>

#include "cvip/nn/ops.hpp"
#include "cvip/nn/tensor.hpp"

namespace cvip::distill {

enum class FeatNorm { kL1, kL2 };

struct LossConfig {
  float lambda1 = 50.f;     // feature-loss weight
  float lambda2 = 0.f;      // soft-label weight
  float temperature = 8.f;
  FeatNorm norm = FeatNorm::kL1;
  bool scale_soft_by_t_squared = false;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0)
      throw std::invalid_argument("loss weights must be >= 0");
    if (temperature <= 0) throw std::invalid_argument("temperature must be > 0");
  }
};

// Mean -log softmax(logits)[label] over the batch. logits is [N, C] (or [C]
// with a single label).
template <class S>
nn::Tensor<S> cross_entropy(const nn::Tensor<S>& logits,
                            const std::vector<int>& labels) {
  const int C = logits.dim(logits.rank() - 1);
  const int64_t N = logits.numel() / C;
  if (int64_t(labels.size()) != N)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C)
      throw std::invalid_argument("cross_entropy: label out of range");

  auto probs = std::make_shared<std::vector<S>>(logits.data().size());
  S loss = 0;
  for (int64_t n = 0; n < N; ++n) {
    const S* in = logits.data().data() + n * C;
    S* p = probs->data() + n * C;
    S mx = *std::max_element(in, in + C);
    S denom = 0;
    for (int c = 0; c < C; ++c) {
      p[c] = std::exp(in[c] - mx);
      denom += p[c];
    }
    for (int c = 0; c < C; ++c) p[c] /= denom;
    loss -= std::log(p[labels[size_t(n)]]);
  }
  loss /= S(N);

  auto labels_sp = std::make_shared<std::vector<int>>(labels);
  return nn::make_result<S>(
      {1}, {loss}, {logits}, [logits, probs, labels_sp, N, C](nn::Node<S>& self) {
        logits.node()->ensure_grad();
        const S g = self.grad[0] / S(N);
        for (int64_t n = 0; n < N; ++n) {
          const S* p = probs->data() + n * C;
          S* gx = logits.node()->grad.data() + n * C;
          const int y = (*labels_sp)[size_t(n)];
          for (int c = 0; c < C; ++c)
            gx[c] += g * (p[c] - (c == y ? S(1) : S(0)));
        }
      });
}

template <class S>
nn::Tensor<S> cross_entropy(const nn::Tensor<S>& logits, int label) {
  return cross_entropy(logits, std::vector<int>{label});
}

// Mean over all elements of |a - b| (L1) or (a - b)^2 (L2).
template <class S>
nn::Tensor<S> feature_distance(const nn::Tensor<S>& a, const nn::Tensor<S>& b,
                               FeatNorm norm) {
  if (!a.same_shape(b))
    throw std::invalid_argument("feature_distance: shape mismatch");
  const int64_t n = a.numel();
  S acc = 0;
  if (norm == FeatNorm::kL1) {
    for (int64_t i = 0; i < n; ++i)
      acc += std::abs(a.data()[i] - b.data()[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) {
      S d = a.data()[i] - b.data()[i];
      acc += d * d;
    }
  }
  acc /= S(n);
  return nn::make_result<S>(
      {1}, {acc}, {a, b}, [a, b, n, norm](nn::Node<S>& self) {
        const S g = self.grad[0] / S(n);
        for (int side = 0; side < 2; ++side) {
          const auto& t = side == 0 ? a : b;
          if (!t.requires_grad()) continue;
          t.node()->ensure_grad();
          const S sgn = side == 0 ? S(1) : S(-1);
          for (int64_t i = 0; i < n; ++i) {
            S d = a.data()[i] - b.data()[i];
            S gd;
            if (norm == FeatNorm::kL1)
              gd = d > 0 ? S(1) : (d < 0 ? S(-1) : S(0));
            else
              gd = S(2) * d;
            t.node()->grad[i] += sgn * g * gd;
          }
        }
      });
}

// Cross-entropy between softened teacher and student distributions,
// mean over the batch. The teacher side is a constant: no gradient reaches
// it even if it is on the tape.
template <class S>
nn::Tensor<S> soft_label_ce(const nn::Tensor<S>& student_logits,
                            const nn::Tensor<S>& teacher_logits, S temperature,
                            bool scale_by_t_squared = false) {
  if (!student_logits.same_shape(teacher_logits))
    throw std::invalid_argument("soft_label_ce: shape mismatch");
  if (temperature <= 0)
    throw std::invalid_argument("soft_label_ce: temperature must be > 0");

  const int C = student_logits.dim(student_logits.rank() - 1);
  const int64_t N = student_logits.numel() / C;

  auto p_teacher = std::make_shared<std::vector<S>>(size_t(N) * C);
  auto p_student = std::make_shared<std::vector<S>>(size_t(N) * C);
  auto softmax_row = [C](const S* in, S invT, S* out) {
    S mx = -std::numeric_limits<S>::infinity();
    for (int c = 0; c < C; ++c) mx = std::max(mx, in[c] * invT);
    S denom = 0;
    for (int c = 0; c < C; ++c) {
      out[c] = std::exp(in[c] * invT - mx);
      denom += out[c];
    }
    for (int c = 0; c < C; ++c) out[c] /= denom;
  };

  const S invT = S(1) / temperature;
  S loss = 0;
  for (int64_t n = 0; n < N; ++n) {
    softmax_row(teacher_logits.data().data() + n * C, invT,
                p_teacher->data() + n * C);
    softmax_row(student_logits.data().data() + n * C, invT,
                p_student->data() + n * C);
    for (int c = 0; c < C; ++c)
      loss -= (*p_teacher)[n * C + c] * std::log((*p_student)[n * C + c]);
  }
  loss /= S(N);
  const S outer = scale_by_t_squared ? temperature * temperature : S(1);
  loss *= outer;

  return nn::make_result<S>(
      {1}, {loss}, {student_logits},
      [student_logits, p_teacher, p_student, N, C, invT,
       outer](nn::Node<S>& self) {
        student_logits.node()->ensure_grad();
        const S g = self.grad[0] * outer * invT / S(N);
        for (int64_t n = 0; n < N; ++n) {
          S* gx = student_logits.node()->grad.data() + n * C;
          for (int c = 0; c < C; ++c)
            gx[c] += g * ((*p_student)[n * C + c] - (*p_teacher)[n * C + c]);
        }
      });
}

// L_p = L_cls + lambda1 * L_d(f_p, f_OF) + lambda2 * L_s(logits, teacher).
// Teacher inputs are treated as constants. With both weights at zero this
// returns the plain cross-entropy node itself.
template <class S>
nn::Tensor<S> p_stream_loss(const nn::Tensor<S>& logits,
                            const std::vector<int>& labels,
                            const nn::Tensor<S>& f_p, const nn::Tensor<S>& f_of,
                            const nn::Tensor<S>& teacher_logits,
                            const LossConfig& cfg) {
  cfg.validate();
  nn::Tensor<S> loss = cross_entropy(logits, labels);
  if (cfg.lambda1 > 0) {
    auto ld = feature_distance(f_p, f_of.detach(), cfg.norm);
    loss = nn::add(loss, nn::scale(ld, S(cfg.lambda1)));
  }
  if (cfg.lambda2 > 0) {
    auto ls = soft_label_ce(logits, teacher_logits.detach(),
                            S(cfg.temperature), cfg.scale_soft_by_t_squared);
    loss = nn::add(loss, nn::scale(ls, S(cfg.lambda2)));
  }
  return loss;
}

}  // namespace cvip::distill
