#include "al2/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "al2/report.hpp"

namespace al2 {

bool deterministic_equal(const MetricRecord& a, const MetricRecord& b) {
  return a.epoch == b.epoch && a.test_accuracy == b.test_accuracy &&
         a.train_loss_c == b.train_loss_c && a.train_loss_r == b.train_loss_r &&
         a.lambda == b.lambda;
}

void SgdMomentum::step(std::vector<NamedParam>& params) {
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      velocity_[i].assign(static_cast<size_t>(params[i].tensor.size()), real(0));
    }
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    std::vector<real>& v = velocity_[i];
    const int64_t m = p.size();
    real* pv = p.data();
    if (p.has_grad()) {
      const real* g = p.grad_values().data();
      for (int64_t j = 0; j < m; ++j) {
        v[static_cast<size_t>(j)] = real(mu_) * v[static_cast<size_t>(j)] + g[j];
        pv[j] -= real(lr_) * v[static_cast<size_t>(j)];
      }
      p.zero_grad();
    } else {
      for (int64_t j = 0; j < m; ++j) {
        v[static_cast<size_t>(j)] *= real(mu_);
        pv[j] -= real(lr_) * v[static_cast<size_t>(j)];
      }
    }
  }
}

namespace {

int64_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("accuracy check got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  int64_t correct = 0;
  const real* x = logits.data();
  for (int64_t i = 0; i < n; ++i) {
    const real* row = x + i * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;  // strict > keeps the lowest index on ties
    }
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return correct;
}

constexpr int64_t kEvalChunk = 500;

double chunked_accuracy(const Model& model, const LabeledDataset& ds,
                        const std::vector<int>& labels) {
  const int64_t n = ds.size();
  int64_t correct = 0;
  for (int64_t start = 0; start < n; start += kEvalChunk) {
    const int64_t end = std::min(n, start + kEvalChunk);
    std::vector<int64_t> idx(static_cast<size_t>(end - start));
    for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
    Tensor logits = model.forward_eval(gather_images(ds, idx)).second;
    correct += count_correct(logits, gather_labels(labels, idx));
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

double accuracy_from_logits(const Tensor& logits, const std::vector<int>& labels) {
  return 100.0 * static_cast<double>(count_correct(logits, labels)) /
         static_cast<double>(logits.dim(0));
}

double evaluate(const Model& model, const LabeledDataset& ds) {
  return chunked_accuracy(model, ds, ds.labels);
}

double evaluate_against(const Model& model, const LabeledDataset& ds,
                        const std::vector<int>& labels) {
  return chunked_accuracy(model, ds, labels);
}

std::string checkpoint_path(const std::string& out_dir, int64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06lld.al2", static_cast<long long>(epoch));
  return (std::filesystem::path(out_dir) / buf).string();
}

TrainResult train(const TrainConfig& cfg, const LabeledDataset& train_ds,
                  const LabeledDataset& test_ds, const MetricHook& on_metric) {
  namespace fs = std::filesystem;
  const bool persist = !cfg.out_dir.empty();
  if (persist) fs::create_directories(cfg.out_dir);

  Model model = Model::build(cfg.dataset, cfg.regularizer, cfg.seed_init);
  model.seed_dropout(derive_seed(cfg.seed_dropout, "dropout"));
  LambdaSchedule schedule(cfg.lambda);
  SgdMomentum opt(cfg.learning_rate, cfg.momentum);
  const int64_t n = train_ds.size();

  CheckpointMeta meta;
  meta.dataset = cfg.dataset;
  meta.regularizer = cfg.regularizer.kind;
  meta.dropout_rate = cfg.regularizer.dropout_rate;
  meta.weight_decay = cfg.regularizer.weight_decay;
  meta.al2_enabled = cfg.al2_enabled;
  meta.penalty = cfg.penalty;
  meta.lambda_params = cfg.lambda;
  meta.seed_init = cfg.seed_init;
  meta.seed_shuffle = cfg.seed_shuffle;
  meta.seed_corruption = train_ds.corruption_seed;
  meta.seed_dropout = cfg.seed_dropout;

  TrainResult result{std::move(model), {}, {}};
  Model& net = result.model;

  auto write_ckpt = [&](int64_t epoch) {
    if (!persist) return;
    meta.lambda_current = schedule.current();
    meta.lambda_epoch = schedule.epoch();
    meta.epoch = epoch;
    save_checkpoint(checkpoint_path(cfg.out_dir, epoch), net, meta);
    result.checkpoint_epochs.push_back(epoch);
  };

  // Pre-training artifacts: paired runs must agree on these byte for byte.
  if (persist) {
    write_corruption_sidecar((fs::path(cfg.out_dir) / "labels.sidecar").string(), train_ds);
    const double ta0 = evaluate(net, test_ds);
    const auto first = first_batch_indices(n, std::min(cfg.batch_size, n), cfg.seed_shuffle);
    auto [f0, logits0] = net.forward_eval(gather_images(train_ds, first));
    LossBreakdown bd0 = combined_loss(logits0, gather_labels(train_ds.labels, first), f0, 0.0,
                                      cfg.penalty, nullptr);
    std::ofstream e0((fs::path(cfg.out_dir) / "epoch0_eval.csv").string(), std::ios::trunc);
    if (!e0) throw IoError("cannot write epoch0_eval.csv in " + cfg.out_dir);
    char line[160];
    std::snprintf(line, sizeof(line), "epoch,ta,loss_c,loss_r\n0,%.6f,%.12g,%.12g\n", ta0,
                  bd0.classification, bd0.regularization);
    e0 << line;
  }
  write_ckpt(0);

  for (int64_t e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lambda_used = cfg.al2_enabled ? schedule.current() : 0.0;
    double lc_sum = 0, lr_sum = 0;

    const auto batches = epoch_batches(n, {std::min(cfg.batch_size, n), cfg.seed_shuffle, e});
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      try {
        Tape tape;
        net.set_training(true);
        auto [features, logits] = net.forward(gather_images(train_ds, idx), &tape);
        LossBreakdown bd = combined_loss(logits, gather_labels(train_ds.labels, idx), features,
                                         lambda_used, cfg.penalty, &tape);
        Tensor total = bd.total;
        if (cfg.regularizer.kind == RegularizerKind::WeightDecay) {
          total = add(total, weight_decay_penalty(net.params(), cfg.regularizer.weight_decay, &tape),
                      &tape);
        }
        if (!std::isfinite(total.item())) throw NonFiniteError("loss is non-finite");
        tape.backward(total);
        lc_sum += bd.classification * static_cast<double>(idx.size());
        lr_sum += bd.regularization * static_cast<double>(idx.size());
      } catch (const NonFiniteError& err) {
        throw TrainError("aborted at epoch " + std::to_string(e + 1) + ", batch " +
                         std::to_string(bi + 1) + ": " + err.what());
      }
      opt.step(net.params());
    }

    const int64_t done = e + 1;
    schedule.step();

    if (done % cfg.metric_every == 0 || done == cfg.epochs) {
      MetricRecord rec;
      rec.epoch = done;
      rec.test_accuracy = evaluate(net, test_ds);
      rec.train_loss_c = lc_sum / static_cast<double>(n);
      rec.train_loss_r = lr_sum / static_cast<double>(n);
      rec.lambda = lambda_used;
      if (cfg.record_wall_time) {
        rec.wall_time =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      result.metrics.push_back(rec);
      if (on_metric) on_metric(rec);
    }
    if ((cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.epochs) {
      write_ckpt(done);
    }
  }

  if (persist) {
    write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), result.metrics);
  }
  return result;
}

std::vector<SuiteRun> run_randomization_suite(const TrainConfig& base,
                                              const LabeledDataset& train_pristine,
                                              const LabeledDataset& test_ds,
                                              const std::vector<RegularizerKind>& regularizers) {
  namespace fs = std::filesystem;
  LabeledDataset corrupted =
      corrupt_labels(train_pristine, base.corruption_fraction, base.seed_corruption);
  std::vector<SuiteRun> runs;
  for (RegularizerKind reg : regularizers) {
    for (bool al2 : {false, true}) {
      TrainConfig cfg = base;
      cfg.regularizer.kind = reg;
      cfg.al2_enabled = al2;
      if (!base.out_dir.empty()) {
        cfg.out_dir = (fs::path(base.out_dir) /
                       (std::string(to_string(reg)) + (al2 ? "_al2" : "_noal2")))
                          .string();
      }
      TrainResult r = train(cfg, corrupted, test_ds);
      runs.push_back({reg, al2, cfg.out_dir, std::move(r.metrics)});
    }
  }
  return runs;
}

}  // namespace al2
