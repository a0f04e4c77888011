#pragma once

#include <cstdint>
#include <vector>

#include "al2/ops.hpp"

namespace al2 {

enum class ActivationPenalty { Norm, SquaredNorm };

struct LambdaParams {
  double lambda0 = 0.01;
  double low_factor = 1.1;
  double high_factor = 1.01;
  double threshold = 5.0;
};

// Epoch-indexed weight recurrence: starts at lambda0; each step multiplies by
// low_factor while current <= threshold, by high_factor above it. Exactly one
// branch fires per step, so the value is strictly increasing whenever both
// factors exceed 1.
class LambdaSchedule {
 public:
  LambdaSchedule() : LambdaSchedule(LambdaParams{}) {}

  explicit LambdaSchedule(LambdaParams p) : p_(p), current_(p.lambda0) {
    if (!(p.lambda0 > 0)) throw ShapeError("lambda0 must be positive");
    if (!(p.low_factor > 1) || !(p.high_factor > 1)) {
      throw ShapeError("lambda growth factors must exceed 1");
    }
    if (!(p.threshold > 0)) throw ShapeError("lambda threshold must be positive");
  }

  static LambdaSchedule restore(LambdaParams p, double current, int64_t epoch) {
    LambdaSchedule s(p);
    s.current_ = current;
    s.epoch_ = epoch;
    return s;
  }

  double current() const { return current_; }
  int64_t epoch() const { return epoch_; }
  const LambdaParams& params() const { return p_; }

  void step() {
    current_ *= (current_ <= p_.threshold) ? p_.low_factor : p_.high_factor;
    ++epoch_;
  }

 private:
  LambdaParams p_;
  double current_;
  int64_t epoch_ = 0;
};

struct LossBreakdown {
  Tensor total;
  double classification = 0;  // L_c
  double regularization = 0;  // L_r, pre-weighting
  double lambda = 0;          // weight applied to L_r this epoch
};

// Mean over the N samples of sqrt(sum_j feat_j^2 + 1e-12), or of the plain
// squared sum for the SquaredNorm variant. features is [N,...].
Tensor activation_l2(const Tensor& features, ActivationPenalty kind, Tape* tape);

// total = classification + lambda * regularization. With lambda == 0 the
// regularization term is still measured (for reporting) but kept off the tape.
LossBreakdown combined_loss(const Tensor& logits, const std::vector<int>& labels,
                            const Tensor& features, double lambda,
                            ActivationPenalty kind, Tape* tape);

}  // namespace al2
