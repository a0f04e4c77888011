#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "al2/data.hpp"
#include "al2/report.hpp"
#include "al2/synth.hpp"
#include "al2/trainer.hpp"
#include "doctest.h"

using namespace al2;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("al2_trainer_") + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

Tensor make_param(std::vector<real> v) {
  Tensor t = Tensor::from({static_cast<int64_t>(v.size())}, v, true);
  return t;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.size(); ++i) {
    if (a.values()[i] != b.values()[i]) return false;
  }
  return true;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.dataset = DatasetKind::MNIST;
  cfg.corruption_fraction = 0.5;
  cfg.epochs = 2;
  cfg.batch_size = 50;
  cfg.learning_rate = 0.01;
  cfg.momentum = 0.9;
  cfg.metric_every = 1;
  cfg.checkpoint_every = 1;
  cfg.record_wall_time = false;
  return cfg;
}

}  // namespace

TEST_CASE("momentum update matches the closed-form recurrence") {
  // v <- mu*v + g; p <- p - lr*v, checked over several steps on two params.
  const double lr = 0.1, mu = 0.9;
  std::vector<NamedParam> params;
  params.push_back({"a", make_param({1.0, -2.0}), true, true});
  params.push_back({"b", make_param({0.5}), false, false});

  double va[2] = {0, 0}, vb[1] = {0};
  double pa[2] = {1.0, -2.0}, pb[1] = {0.5};

  SgdMomentum opt(lr, mu);
  for (int step = 0; step < 4; ++step) {
    const double ga[2] = {0.3 * (step + 1), -0.1};
    const double gb[1] = {1.0 / (step + 1)};
    params[0].tensor.grad()[0] = real(ga[0]);
    params[0].tensor.grad()[1] = real(ga[1]);
    params[1].tensor.grad()[0] = real(gb[0]);
    opt.step(params);

    for (int i = 0; i < 2; ++i) {
      va[i] = mu * va[i] + ga[i];
      pa[i] -= lr * va[i];
      CHECK(params[0].tensor.values()[i] == doctest::Approx(pa[i]).epsilon(1e-12));
    }
    vb[0] = mu * vb[0] + gb[0];
    pb[0] -= lr * vb[0];
    CHECK(params[1].tensor.values()[0] == doctest::Approx(pb[0]).epsilon(1e-12));
  }
}

TEST_CASE("step consumes gradients") {
  std::vector<NamedParam> params;
  params.push_back({"a", make_param({1.0}), true, true});
  params[0].tensor.grad()[0] = real(2.0);
  SgdMomentum opt(0.5, 0.0);
  opt.step(params);
  CHECK(params[0].tensor.values()[0] == doctest::Approx(0.0));
  CHECK(params[0].tensor.grad_values()[0] == real(0));
}

TEST_CASE("a param with no gradient still sees its velocity decay") {
  // One step with a gradient builds velocity; the next step without any
  // gradient must keep coasting by mu*v, matching momentum-SGD semantics.
  std::vector<NamedParam> params;
  params.push_back({"a", make_param({0.0}), true, true});
  SgdMomentum opt(1.0, 0.5);

  params[0].tensor.grad()[0] = real(1.0);
  opt.step(params);  // v=1, p=-1
  CHECK(params[0].tensor.values()[0] == doctest::Approx(-1.0));

  params[0].tensor.drop_grad();
  opt.step(params);  // v=0.5, p=-1.5
  CHECK(params[0].tensor.values()[0] == doctest::Approx(-1.5));
}

TEST_CASE("accuracy_from_logits counts argmax hits, ties to the lowest class") {
  Tensor logits = Tensor::from({3, 4},
                               {
                                   0.1, 0.9, 0.0, 0.0,  // argmax 1
                                   2.0, 2.0, 0.0, 0.0,  // tie 0/1 -> 0
                                   0.0, 0.0, 0.0, 3.0,  // argmax 3
                               },
                               false);
  CHECK(accuracy_from_logits(logits, {1, 0, 3}) == doctest::Approx(100.0));
  CHECK(accuracy_from_logits(logits, {1, 1, 3}) == doctest::Approx(200.0 / 3.0));
  CHECK(accuracy_from_logits(logits, {0, 0, 0}) == doctest::Approx(100.0 / 3.0));
}

TEST_CASE("evaluate agrees with evaluate_against on the dataset's own labels") {
  LabeledDataset ds = synth_dataset(40, 7, "eval");
  Model m = Model::build(DatasetKind::MNIST, {}, 3);
  CHECK(evaluate(m, ds) == doctest::Approx(evaluate_against(m, ds, ds.labels)));
}

TEST_CASE("checkpoint_path layout") {
  CHECK(checkpoint_path("/x/y", 0) == "/x/y/ckpt_000000.al2");
  CHECK(checkpoint_path("run", 150) == "run/ckpt_000150.al2");
  CHECK(checkpoint_path("run", 1234567) == "run/ckpt_1234567.al2");
}

TEST_CASE("deterministic_equal ignores wall time only") {
  MetricRecord a{5, 90.0, 1.5, 0.25, 0.01, 3.0};
  MetricRecord b = a;
  b.wall_time = 99.0;
  CHECK(deterministic_equal(a, b));
  b.test_accuracy += 1e-9;
  CHECK_FALSE(deterministic_equal(a, b));
  b = a;
  b.lambda = 0.011;
  CHECK_FALSE(deterministic_equal(a, b));
}

TEST_CASE("training with epochs=0 returns the untouched initialization") {
  LabeledDataset tr = corrupt_labels(synth_dataset(60, 11, "train"), 0.5, 3);
  LabeledDataset te = synth_dataset(30, 11, "test");
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  TrainResult r = train(cfg, tr, te);
  CHECK(r.metrics.empty());

  Model fresh = Model::build(cfg.dataset, cfg.regularizer, cfg.seed_init);
  REQUIRE(r.model.params().size() == fresh.params().size());
  for (size_t i = 0; i < fresh.params().size(); ++i) {
    CHECK(same_values(r.model.params()[i].tensor, fresh.params()[i].tensor));
  }
}

TEST_CASE("learning_rate=0 keeps parameters bit-identical through an epoch") {
  LabeledDataset tr = corrupt_labels(synth_dataset(60, 11, "train"), 0.5, 3);
  LabeledDataset te = synth_dataset(30, 11, "test");
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  TrainResult r = train(cfg, tr, te);

  Model fresh = Model::build(cfg.dataset, cfg.regularizer, cfg.seed_init);
  for (size_t i = 0; i < fresh.params().size(); ++i) {
    CHECK(same_values(r.model.params()[i].tensor, fresh.params()[i].tensor));
  }
}

TEST_CASE("repeated runs are deterministic record for record") {
  LabeledDataset tr = corrupt_labels(synth_dataset(80, 5, "train"), 0.75, 3);
  LabeledDataset te = synth_dataset(40, 5, "test");
  TrainConfig cfg = tiny_config();

  TrainResult a = train(cfg, tr, te);
  TrainResult b = train(cfg, tr, te);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(deterministic_equal(a.metrics[i], b.metrics[i]));
  }
  CHECK(format_metrics_csv(a.metrics) == format_metrics_csv(b.metrics));
}

TEST_CASE("dropout variant trains deterministically too") {
  LabeledDataset tr = corrupt_labels(synth_dataset(60, 6, "train"), 0.5, 3);
  LabeledDataset te = synth_dataset(30, 6, "test");
  TrainConfig cfg = tiny_config();
  cfg.regularizer.kind = RegularizerKind::Dropout;
  cfg.epochs = 1;

  TrainResult a = train(cfg, tr, te);
  TrainResult b = train(cfg, tr, te);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(deterministic_equal(a.metrics[i], b.metrics[i]));
  }
}

TEST_CASE("a large activation penalty drives the representation loss down") {
  LabeledDataset tr = corrupt_labels(synth_dataset(100, 9, "train"), 0.75, 3);
  LabeledDataset te = synth_dataset(30, 9, "test");
  TrainConfig cfg = tiny_config();
  cfg.epochs = 4;
  cfg.al2_enabled = true;
  cfg.lambda.lambda0 = 50.0;

  TrainResult r = train(cfg, tr, te);
  REQUIRE(r.metrics.size() == 4);
  CHECK(r.metrics.back().train_loss_r < 0.1 * r.metrics.front().train_loss_r);
  CHECK(r.metrics.front().lambda == doctest::Approx(50.0));
  // Lambda steps once per epoch: 50 -> 50.5 (above the threshold, 1.01 branch).
  CHECK(r.metrics[1].lambda == doctest::Approx(50.0 * 1.01));
}

TEST_CASE("al2 disabled records lambda 0 but still measures the loss") {
  LabeledDataset tr = corrupt_labels(synth_dataset(60, 9, "train"), 0.5, 3);
  LabeledDataset te = synth_dataset(30, 9, "test");
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.al2_enabled = false;
  TrainResult r = train(cfg, tr, te);
  REQUIRE(r.metrics.size() == 1);
  CHECK(r.metrics[0].lambda == 0.0);
  CHECK(r.metrics[0].train_loss_r > 0.0);
}

TEST_CASE("metric cadence and hook") {
  LabeledDataset tr = corrupt_labels(synth_dataset(60, 13, "train"), 0.5, 3);
  LabeledDataset te = synth_dataset(30, 13, "test");
  TrainConfig cfg = tiny_config();
  cfg.epochs = 5;
  cfg.metric_every = 2;

  std::vector<int64_t> seen;
  TrainResult r = train(cfg, tr, te, [&](const MetricRecord& rec) { seen.push_back(rec.epoch); });
  // Epochs 2 and 4 by cadence, 5 because it is final.
  CHECK(seen == std::vector<int64_t>{2, 4, 5});
  REQUIRE(r.metrics.size() == 3);
  for (size_t i = 0; i < seen.size(); ++i) CHECK(r.metrics[i].epoch == seen[i]);
}

TEST_CASE("persistence writes the full artifact set") {
  TempDir dir("persist");
  LabeledDataset tr = corrupt_labels(synth_dataset(60, 17, "train"), 0.5, 3);
  LabeledDataset te = synth_dataset(30, 17, "test");
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.checkpoint_every = 2;
  cfg.out_dir = dir.str();

  TrainResult r = train(cfg, tr, te);
  CHECK(fs::exists(dir.path / "metrics.csv"));
  CHECK(fs::exists(dir.path / "epoch0_eval.csv"));
  CHECK(fs::exists(dir.path / "labels.sidecar"));
  // Epoch 0 always, epoch 2 by cadence, epoch 3 because it is final.
  CHECK(r.checkpoint_epochs == std::vector<int64_t>{0, 2, 3});
  for (int64_t e : r.checkpoint_epochs) CHECK(fs::exists(checkpoint_path(dir.str(), e)));
  CHECK_FALSE(fs::exists(checkpoint_path(dir.str(), 1)));

  // The file holds exactly the rendering of the in-memory records; parsing it
  // back is lossy only within print precision.
  std::ifstream mf((dir.path / "metrics.csv").string(), std::ios::binary);
  std::stringstream mbuf;
  mbuf << mf.rdbuf();
  CHECK(mbuf.str() == format_metrics_csv(r.metrics));
  auto metrics = read_metrics_csv((dir.path / "metrics.csv").string());
  REQUIRE(metrics.size() == 3);
  for (size_t i = 0; i < metrics.size(); ++i) {
    CHECK(metrics[i].epoch == r.metrics[i].epoch);
    CHECK(metrics[i].test_accuracy ==
          doctest::Approx(r.metrics[i].test_accuracy).epsilon(1e-7));
    CHECK(metrics[i].train_loss_c == doctest::Approx(r.metrics[i].train_loss_c).epsilon(1e-11));
    CHECK(metrics[i].train_loss_r == doctest::Approx(r.metrics[i].train_loss_r).epsilon(1e-11));
    CHECK(metrics[i].lambda == doctest::Approx(r.metrics[i].lambda).epsilon(1e-11));
  }

  // The sidecar restores the corrupted labels onto a pristine copy.
  LabeledDataset pristine = synth_dataset(60, 17, "train");
  LabeledDataset restored =
      apply_corruption_sidecar(pristine, (dir.path / "labels.sidecar").string());
  CHECK(restored.labels == tr.labels);

  // epoch0_eval.csv holds the header and the single pre-training row.
  std::ifstream e0((dir.path / "epoch0_eval.csv").string());
  std::string header, row;
  REQUIRE(std::getline(e0, header));
  REQUIRE(std::getline(e0, row));
  CHECK(header == "epoch,ta,loss_c,loss_r");
  CHECK(row.substr(0, 2) == "0,");
}

TEST_CASE("randomization suite pairs runs per regularizer") {
  TempDir dir("suite");
  LabeledDataset tr = synth_dataset(60, 19, "train");
  LabeledDataset te = synth_dataset(30, 19, "test");
  TrainConfig base = tiny_config();
  base.epochs = 1;
  base.out_dir = dir.str();

  auto runs = run_randomization_suite(base, tr, te, {RegularizerKind::Bare});
  REQUIRE(runs.size() == 2);
  CHECK_FALSE(runs[0].al2);
  CHECK(runs[1].al2);
  CHECK(runs[0].regularizer == RegularizerKind::Bare);
  CHECK(fs::exists(fs::path(runs[0].dir) / "metrics.csv"));
  CHECK(fs::exists(fs::path(runs[1].dir) / "metrics.csv"));
  CHECK(runs[0].dir != runs[1].dir);

  // Paired runs share one corrupted label set byte for byte.
  LabeledDataset a = apply_corruption_sidecar(tr, (fs::path(runs[0].dir) / "labels.sidecar").string());
  LabeledDataset b = apply_corruption_sidecar(tr, (fs::path(runs[1].dir) / "labels.sidecar").string());
  CHECK(a.labels == b.labels);
}
