#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "al2/checkpoint.hpp"
#include "al2/data.hpp"
#include "al2/loss.hpp"
#include "al2/model.hpp"

namespace al2 {

struct TrainConfig {
  DatasetKind dataset = DatasetKind::MNIST;
  std::string data_root;
  std::string sidecar;  // optional pre-made corruption sidecar
  double corruption_fraction = 0.75;
  uint64_t seed_corruption = 3;
  RegularizerConfig regularizer;
  bool al2_enabled = false;
  ActivationPenalty penalty = ActivationPenalty::Norm;
  LambdaParams lambda;
  int64_t epochs = 700;
  int64_t batch_size = 100;
  double learning_rate = 0.01;
  double momentum = 0.9;
  uint64_t seed_init = 1;
  uint64_t seed_shuffle = 2;
  uint64_t seed_dropout = 4;
  int64_t metric_every = 1;
  int64_t checkpoint_every = 100;
  int64_t train_subset = 0;  // 0 = full split
  bool record_wall_time = true;
  std::string out_dir;  // empty = keep everything in memory
};

struct MetricRecord {
  int64_t epoch = 0;        // epochs completed when the record was taken
  double test_accuracy = 0; // percent
  double train_loss_c = 0;  // epoch mean, sample weighted
  double train_loss_r = 0;  // epoch mean, pre-weighting
  double lambda = 0;        // weight applied during the epoch (0 when disabled)
  double wall_time = 0;     // seconds for the epoch; diagnostic only
};

// Equality over the experiment-determined fields; wall_time is excluded.
bool deterministic_equal(const MetricRecord& a, const MetricRecord& b);

struct TrainResult {
  Model model;
  std::vector<MetricRecord> metrics;
  std::vector<int64_t> checkpoint_epochs;
};

class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), mu_(momentum) {}
  // v <- mu*v + grad; p <- p - lr*v. Zeroes the gradients it consumed.
  void step(std::vector<NamedParam>& params);

 private:
  double lr_, mu_;
  std::vector<std::vector<real>> velocity_;
};

// Percent of argmax(logits) == label; ties go to the lowest class index.
double accuracy_from_logits(const Tensor& logits, const std::vector<int>& labels);

// Eval-mode accuracy against ds.labels, in percent.
double evaluate(const Model& model, const LabeledDataset& ds);
double evaluate_against(const Model& model, const LabeledDataset& ds,
                        const std::vector<int>& labels);

// Runs the loop on prepared datasets. When cfg.out_dir is set, writes
// metrics.csv, epoch0_eval.csv, the corruption sidecar, and checkpoints
// (epoch 0 always, then every checkpoint_every epochs, then the final epoch).
// on_metric fires after each record is taken; it sees what metrics.csv will
// contain and must not mutate anything the run depends on.
using MetricHook = std::function<void(const MetricRecord&)>;
TrainResult train(const TrainConfig& cfg, const LabeledDataset& train_ds,
                  const LabeledDataset& test_ds, const MetricHook& on_metric = {});

std::string checkpoint_path(const std::string& out_dir, int64_t epoch);

struct SuiteRun {
  RegularizerKind regularizer;
  bool al2;
  std::string dir;
  std::vector<MetricRecord> metrics;
};

// 4 baselines x {without, with} AL2, all sharing the initialization seed and
// one corrupted label set. Directories land under base.out_dir.
std::vector<SuiteRun> run_randomization_suite(const TrainConfig& base,
                                              const LabeledDataset& train_pristine,
                                              const LabeledDataset& test_ds,
                                              const std::vector<RegularizerKind>& regularizers);

}  // namespace al2
