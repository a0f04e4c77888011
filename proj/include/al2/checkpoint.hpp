#pragma once

#include <cstdint>
#include <string>

#include "al2/loss.hpp"
#include "al2/model.hpp"

namespace al2 {

// Everything needed to rebuild a model for evaluation/analysis plus the
// schedule state and the seeds that drove the run.
struct CheckpointMeta {
  DatasetKind dataset = DatasetKind::MNIST;
  RegularizerKind regularizer = RegularizerKind::Bare;
  double dropout_rate = 0.5;
  double weight_decay = 5e-4;
  bool al2_enabled = false;
  ActivationPenalty penalty = ActivationPenalty::Norm;
  LambdaParams lambda_params;
  double lambda_current = 0.01;
  int64_t lambda_epoch = 0;
  int64_t epoch = 0;
  uint64_t seed_init = 0, seed_shuffle = 0, seed_corruption = 0, seed_dropout = 0;
};

// Layout (little-endian): "AL2CKPT1", u32 version, meta fields in declaration
// order (enums as u8, bool as u8), u32 tensor count, then per tensor:
// u32 name length, name bytes, u8 kind (0 parameter, 1 buffer), u32 ndims,
// i64 dims, f64 values.
void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace al2
