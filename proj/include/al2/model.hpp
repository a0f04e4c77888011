#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "al2/ops.hpp"

namespace al2 {

enum class DatasetKind { MNIST, FashionMNIST, CIFAR10 };
enum class RegularizerKind { Bare, BatchNorm, Dropout, WeightDecay };

const char* to_string(DatasetKind k);
const char* to_string(RegularizerKind k);

struct RegularizerConfig {
  RegularizerKind kind = RegularizerKind::Bare;
  real dropout_rate = real(0.5);
  real weight_decay = real(5e-4);
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool trunk;      // trunk parameter set vs head parameter set
  bool decayable;  // weight matrices/kernels only; biases and norm affines excluded
};

struct DatasetGeometry {
  int64_t channels, height, width;
  int64_t pooled;  // spatial side of the feature map after the trunk
};

DatasetGeometry geometry(DatasetKind k);

// Trunk: conv5x5(C_in->32) -> [bn] -> relu -> maxpool2 -> conv5x5(32->50)
// -> [bn] -> relu -> maxpool2. Head: [dropout on flattened features] ->
// linear(50*s*s -> 128) -> relu -> linear(128 -> 10). No padding anywhere,
// so feature maps are 50x4x4 (28x28 inputs) and 50x5x5 (32x32 inputs).
class Model {
 public:
  static Model build(DatasetKind kind, RegularizerConfig reg, uint64_t init_seed);

  DatasetKind dataset_kind() const { return kind_; }
  const RegularizerConfig& regularizer() const { return reg_; }

  void set_training(bool b) { training_ = b; }
  bool training() const { return training_; }

  // Resets the dropout stream; training-mode forwards consume it.
  void seed_dropout(uint64_t seed) { dropout_rng_ = Rng(seed); }

  // Honors the mode flag. Training mode mutates batchnorm running buffers and
  // consumes dropout randomness; returns (features, logits) so the caller can
  // attach the activation penalty to the features.
  std::pair<Tensor, Tensor> forward(const Tensor& batch, Tape* tape);

  // Always the eval path (running statistics, no dropout); const and
  // deterministic regardless of the mode flag.
  std::pair<Tensor, Tensor> forward_eval(const Tensor& batch) const;
  Tensor trunk_eval(const Tensor& batch) const;
  // Accepts [N,50,s,s] or pre-flattened [N,50*s*s]; eval path of the head.
  Tensor head_logits_eval(const Tensor& features) const;

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  const Tensor* find_param(const std::string& name) const;
  std::vector<std::pair<std::string, Tensor>>& buffers() { return buffers_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }

  static constexpr real kBnMomentum = real(0.1);
  static constexpr real kBnEps = real(1e-5);

 private:
  Tensor trunk_impl(const Tensor& batch, Tape* tape, bool training) const;
  Tensor head_impl(const Tensor& features, Tape* tape, bool training, Rng* drop_rng) const;

  DatasetKind kind_ = DatasetKind::MNIST;
  RegularizerConfig reg_;
  bool training_ = true;
  Rng dropout_rng_{0};

  Tensor c1w_, c1b_, c2w_, c2b_, f1w_, f1b_, f2w_, f2b_;
  Tensor bn1g_, bn1b_, bn1rm_, bn1rv_;
  Tensor bn2g_, bn2b_, bn2rm_, bn2rv_;
  std::vector<NamedParam> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
};

// coefficient * 0.5 * sum of squared entries of every decayable parameter.
Tensor weight_decay_penalty(const std::vector<NamedParam>& params, real coefficient,
                            Tape* tape);

}  // namespace al2
