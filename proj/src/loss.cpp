#include "al2/loss.hpp"

#include <cmath>

namespace al2 {

Tensor activation_l2(const Tensor& features, ActivationPenalty kind, Tape* tape) {
  if (!features.defined() || features.ndim() < 1 || features.dim(0) < 1) {
    throw ShapeError("activation_l2 requires at least one sample");
  }
  const int64_t n = features.dim(0);
  const int64_t d = features.size() / n;
  const real* x = features.data();
  constexpr double kEps = 1e-12;

  const bool taped = tape && features.requires_grad();
  std::vector<real> per_sample(static_cast<size_t>(n));
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const real* row = x + i * d;
    double sq = 0;
    for (int64_t j = 0; j < d; ++j) sq += static_cast<double>(row[j]) * row[j];
    double v = (kind == ActivationPenalty::Norm) ? std::sqrt(sq + kEps) : sq;
    per_sample[static_cast<size_t>(i)] = real(v);
    total += v;
  }
  Tensor out = Tensor::from({1}, {real(total / static_cast<double>(n))}, taped);
  check_finite(out, "activation_l2");

  if (taped) {
    tape->record([features, out, per_sample = std::move(per_sample), kind, n, d]() mutable {
      if (!out.has_grad()) return;
      const real g = out.grad_values()[0];
      const real* x = features.data();
      real* gf = features.grad();
      const real invn = real(1) / real(n);
      for (int64_t i = 0; i < n; ++i) {
        const real* row = x + i * d;
        real* grow = gf + i * d;
        if (kind == ActivationPenalty::Norm) {
          const real c = g * invn / per_sample[static_cast<size_t>(i)];
          for (int64_t j = 0; j < d; ++j) grow[j] += c * row[j];
        } else {
          const real c = g * invn * 2;
          for (int64_t j = 0; j < d; ++j) grow[j] += c * row[j];
        }
      }
    });
  }
  return out;
}

LossBreakdown combined_loss(const Tensor& logits, const std::vector<int>& labels,
                            const Tensor& features, double lambda,
                            ActivationPenalty kind, Tape* tape) {
  LossBreakdown bd;
  bd.lambda = lambda;
  Tensor lc = softmax_cross_entropy(logits, labels, tape);
  bd.classification = lc.item();
  if (lambda != 0) {
    Tensor lr = activation_l2(features, kind, tape);
    bd.regularization = lr.item();
    bd.total = add(lc, scale(lr, real(lambda), tape), tape);
  } else {
    bd.regularization = activation_l2(features, kind, nullptr).item();
    bd.total = lc;
  }
  return bd;
}

}  // namespace al2
