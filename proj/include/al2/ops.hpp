#pragma once

#include <cstdint>
#include <vector>

#include "al2/rng.hpp"
#include "al2/tensor.hpp"

namespace al2 {

// Records one byte per branching decision (relu sign, maxpool argmax) made
// during a forward pass. Gradient checking runs perturbed evaluations under a
// trace and skips coordinates whose traces differ: those finite-difference
// paths cross a kink, where the analytic subgradient legitimately disagrees.
class KinkTrace {
 public:
  void push(uint8_t b) { bytes_.push_back(b); }
  const std::vector<uint8_t>& bytes() const { return bytes_; }
  void clear() { bytes_.clear(); }

 private:
  std::vector<uint8_t> bytes_;
};

KinkTrace* active_kink_trace();

class KinkTraceScope {
 public:
  explicit KinkTraceScope(KinkTrace* trace);
  ~KinkTraceScope();
  KinkTraceScope(const KinkTraceScope&) = delete;
  KinkTraceScope& operator=(const KinkTraceScope&) = delete;

 private:
  KinkTrace* prev_;
};

// All ops: pass tape=nullptr for a pure (untaped) forward evaluation.
// Outputs of taped ops are immutable; every op validates output finiteness.

// Cross-correlation (no kernel flip). input [N,C_in,H,W], weight
// [C_out,C_in,k,k], bias [C_out] -> [N,C_out,H',W'] with
// H' = (H + 2*padding - k)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, Tape* tape);

// 2x2 max pooling, stride 2. Ties route the gradient to the first cell in
// row-major scan order.
Tensor maxpool2(const Tensor& input, Tape* tape);

// Subgradient 0 at exactly 0.
Tensor relu(const Tensor& input, Tape* tape);

// input [N,D] x weight [D,M] + bias [M] -> [N,M].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias, Tape* tape);

// [N,...] -> [N,D].
Tensor flatten(const Tensor& input, Tape* tape);

// Mean over N of -log softmax(logits)[label]; max-subtraction stabilized.
// Gradient is (softmax - onehot)/N.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tape* tape);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape);
Tensor scale(const Tensor& a, real c, Tape* tape);
Tensor sum(const Tensor& a, Tape* tape);
Tensor sum_squares(const Tensor& a, Tape* tape);

// Per-channel normalization over [N,H,W]. Training uses biased batch variance
// for normalization and pushes an unbiased estimate into running_var
// (running <- (1-momentum)*running + momentum*batch). Eval uses the running
// buffers, which are the only tensors this op mutates.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   Tensor running_mean, Tensor running_var,
                   bool training, real momentum, real eps, Tape* tape);

// Inverted scaling: kept entries are divided by (1-rate) in training so the
// eval pass is the identity. Consumes exactly numel(input) draws from rng when
// training.
Tensor dropout(const Tensor& input, real rate, Rng& rng, bool training, Tape* tape);

}  // namespace al2
