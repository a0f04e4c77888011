// Experiment driver: label-randomization training runs, representation
// similarity trajectories, cumulative feature ablation, and gradient checks,
// all from one binary so results stay reproducible from the shell.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "al2/analysis.hpp"
#include "al2/checkpoint.hpp"
#include "al2/config.hpp"
#include "al2/data.hpp"
#include "al2/errors.hpp"
#include "al2/gradcheck.hpp"
#include "al2/report.hpp"
#include "al2/trainer.hpp"

namespace fs = std::filesystem;
using namespace al2;

namespace {

int g_exit = 0;

std::string resolve_root(const std::string& configured) {
  if (!configured.empty()) return configured;
  const char* env = std::getenv("AL2LAB_DATA_ROOT");
  if (env && *env) return env;
  throw std::invalid_argument(
      "no data root given: set data_root in the config (or --data-root) or export "
      "AL2LAB_DATA_ROOT");
}

// Train-split samples exactly as a run sees them: subset first, then either
// the sidecar's labels or a fresh corruption draw.
LabeledDataset prepare_train_set(const ExperimentConfig& cfg) {
  LabeledDataset raw = load_dataset(cfg.train.dataset, Split::Train, cfg.train.data_root);
  if (cfg.train.train_subset > 0) raw = subset_dataset(raw, cfg.train.train_subset);
  if (!cfg.train.sidecar.empty()) return apply_corruption_sidecar(raw, cfg.train.sidecar);
  return corrupt_labels(raw, cfg.train.corruption_fraction, cfg.train.seed_corruption);
}

bool on_checkpoint_grid(const TrainConfig& t, int64_t e) {
  if (e == 0 || e == t.epochs) return true;
  return e > 0 && e < t.epochs && t.checkpoint_every > 0 && e % t.checkpoint_every == 0;
}

std::vector<int64_t> discover_checkpoints(const std::string& dir) {
  std::vector<int64_t> epochs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() != 15 || name.rfind("ckpt_", 0) != 0 || name.substr(11) != ".al2") continue;
    const std::string digits = name.substr(5, 6);
    if (digits.find_first_not_of("0123456789") != std::string::npos) continue;
    epochs.push_back(std::stoll(digits));
  }
  std::sort(epochs.begin(), epochs.end());
  return epochs;
}

Tensor reference_batch(const LabeledDataset& test_ds, int64_t cca_batch) {
  const int64_t nb = std::min<int64_t>(cca_batch, test_ds.size());
  std::vector<int64_t> idx(static_cast<size_t>(nb));
  std::iota(idx.begin(), idx.end(), int64_t{0});
  return gather_images(test_ds, idx);
}

void write_cca_trajectory(const std::string& out_dir, const std::vector<int64_t>& epochs,
                          const Tensor& batch) {
  const LoadedCheckpoint ref = load_checkpoint(checkpoint_path(out_dir, 0));
  const RepresentationMatrix ref_rep = extract_representation(ref.model, batch);
  std::vector<CcaTrajectoryRow> rows;
  for (int64_t e : epochs) {
    const LoadedCheckpoint ck = load_checkpoint(checkpoint_path(out_dir, e));
    const CcaResult res = cca_coefficients(ref_rep, extract_representation(ck.model, batch));
    for (size_t d = 0; d < res.rho.size(); ++d) {
      rows.push_back({e, static_cast<int>(d + 1), res.rho[d]});
    }
    std::printf("cca epoch %lld vs 0: mean rho %.6f\n", static_cast<long long>(e), res.mean());
  }
  write_cca_csv((fs::path(out_dir) / "cca_trajectory.csv").string(), rows);
}

void run_ablation_pass(const std::string& out_dir, const ExperimentConfig& cfg,
                       const LabeledDataset& train_ds, const std::vector<int64_t>& epochs) {
  std::vector<uint64_t> seeds(static_cast<size_t>(cfg.mask_seeds));
  for (size_t i = 0; i < seeds.size(); ++i) seeds[i] = cfg.mask_seed_base + i;
  for (int64_t e : epochs) {
    const LoadedCheckpoint ck = load_checkpoint(checkpoint_path(out_dir, e));
    const AblationCurve curve = cumulative_ablation(ck.model, train_ds, seeds,
                                                    cfg.ablation_labels, cfg.ablation_granularity);
    write_ablation_csv((fs::path(out_dir) / ablation_csv_name(e)).string(), curve);
    std::printf("ablation epoch %lld: auc %.4f\n", static_cast<long long>(e), curve.auc);
  }
}

void cmd_train(const std::string& config_path, bool force) {
  ExperimentConfig cfg = parse_config_file(config_path);
  if (cfg.train.out_dir.empty()) {
    throw std::invalid_argument(config_path + ": config must set out_dir");
  }
  cfg.train.data_root = resolve_root(cfg.train.data_root);
  const fs::path out(cfg.train.out_dir);
  if (!force && fs::exists(out / "config.echo")) {
    throw std::invalid_argument("out_dir '" + cfg.train.out_dir +
                                "' already holds a run; pass --force to overwrite it");
  }
  for (int64_t e : cfg.cca_epochs) {
    if (!on_checkpoint_grid(cfg.train, e)) {
      throw std::invalid_argument("cca_epochs entry " + std::to_string(e) +
                                  " will have no checkpoint");
    }
  }
  for (int64_t e : cfg.ablation_epochs) {
    if (!on_checkpoint_grid(cfg.train, e)) {
      throw std::invalid_argument("ablation_epochs entry " + std::to_string(e) +
                                  " will have no checkpoint");
    }
  }

  const LabeledDataset train_ds = prepare_train_set(cfg);
  const LabeledDataset test_ds = load_dataset(cfg.train.dataset, Split::Test, cfg.train.data_root);

  fs::create_directories(out);
  write_config_echo((out / "config.echo").string(), cfg);

  std::printf("training: %s, %s%s, %lld train / %lld test samples, %lld epochs\n",
              to_string(cfg.train.dataset), to_string(cfg.train.regularizer.kind),
              cfg.train.al2_enabled ? " + activation penalty" : "",
              static_cast<long long>(train_ds.size()), static_cast<long long>(test_ds.size()),
              static_cast<long long>(cfg.train.epochs));
  std::fflush(stdout);

  train(cfg.train, train_ds, test_ds, [](const MetricRecord& r) {
    std::printf("epoch %lld  ta %.3f  loss_c %.6g  loss_r %.6g  lambda %.6g\n",
                static_cast<long long>(r.epoch), r.test_accuracy, r.train_loss_c, r.train_loss_r,
                r.lambda);
    std::fflush(stdout);
  });

  if (!cfg.cca_epochs.empty()) {
    write_cca_trajectory(cfg.train.out_dir, cfg.cca_epochs, reference_batch(test_ds, cfg.cca_batch));
  }
  if (!cfg.ablation_epochs.empty()) {
    run_ablation_pass(cfg.train.out_dir, cfg, train_ds, cfg.ablation_epochs);
  }
  std::printf("run complete: %s\n", cfg.train.out_dir.c_str());
}

void cmd_table(const std::vector<std::string>& dirs, const std::string& csv_out, bool auc_mode) {
  if (auc_mode) {
    std::vector<AucRow> rows;
    for (const std::string& dir : dirs) {
      const RunSummary s = summarize_run(dir);
      for (int64_t e : discover_checkpoints(dir)) {
        const fs::path p = fs::path(dir) / ablation_csv_name(e);
        if (!fs::exists(p)) continue;
        rows.push_back({s.regularizer, s.al2, e, read_ablation_csv(p.string()).auc});
      }
    }
    if (rows.empty()) throw IoError("no ablation files found under the given run dirs");
    std::fputs(render_auc_table(rows).c_str(), stdout);
    if (!csv_out.empty()) {
      std::ofstream f(csv_out, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot write " + csv_out);
      f << render_auc_csv(rows);
    }
    return;
  }
  std::vector<RunSummary> runs;
  runs.reserve(dirs.size());
  for (const std::string& dir : dirs) runs.push_back(summarize_run(dir));
  std::fputs(render_memorization_table(runs).c_str(), stdout);
  if (!csv_out.empty()) {
    std::ofstream f(csv_out, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + csv_out);
    f << render_memorization_csv(runs);
  }
}

void cmd_plot_cca(const std::string& run_dir, std::string out_path) {
  if (out_path.empty()) out_path = (fs::path(run_dir) / "cca_trajectory.svg").string();
  const auto rows = read_cca_csv((fs::path(run_dir) / "cca_trajectory.csv").string());
  if (rows.empty()) throw IoError(run_dir + ": cca_trajectory.csv has no rows");
  std::map<int64_t, std::vector<std::pair<int, double>>> by_epoch;
  for (const CcaTrajectoryRow& r : rows) by_epoch[r.epoch].push_back({r.dim, r.rho});
  std::vector<CcaCurve> curves;
  for (auto& [epoch, dims] : by_epoch) {
    std::sort(dims.begin(), dims.end());
    CcaCurve c;
    c.epoch = epoch;
    for (const auto& [dim, rho] : dims) c.rho.push_back(rho);
    curves.push_back(std::move(c));
  }
  write_cca_svg(out_path, curves);
  std::printf("wrote %s (%zu curves)\n", out_path.c_str(), curves.size());
}

void cmd_ablate(const std::string& run_dir, const std::vector<int64_t>& epochs_flag,
                int64_t seeds_flag, int64_t seed_base_flag, const std::string& labels_flag,
                const std::string& gran_flag) {
  ExperimentConfig cfg = parse_config_file((fs::path(run_dir) / "config.echo").string());
  if (seeds_flag > 0) cfg.mask_seeds = seeds_flag;
  if (seed_base_flag >= 0) cfg.mask_seed_base = static_cast<uint64_t>(seed_base_flag);
  if (!labels_flag.empty()) cfg.ablation_labels = parse_ablation_labels(labels_flag);
  if (!gran_flag.empty()) cfg.ablation_granularity = parse_ablation_granularity(gran_flag);
  cfg.train.data_root = resolve_root(cfg.train.data_root);
  cfg.train.sidecar = (fs::path(run_dir) / "labels.sidecar").string();

  std::vector<int64_t> epochs = epochs_flag;
  if (epochs.empty()) epochs = cfg.ablation_epochs;
  if (epochs.empty()) epochs = discover_checkpoints(run_dir);
  if (epochs.empty()) throw IoError(run_dir + ": no checkpoints to ablate");

  run_ablation_pass(run_dir, cfg, prepare_train_set(cfg), epochs);
}

void cmd_corrupt(const std::string& dataset_s, const std::string& root_flag, double fraction,
                 uint64_t seed, int64_t subset, const std::string& out_path, bool force) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw std::invalid_argument("--fraction must be in [0,1]");
  }
  if (!force && fs::exists(out_path)) {
    throw std::invalid_argument("'" + out_path + "' exists; pass --force to overwrite it");
  }
  const std::string root = resolve_root(root_flag);
  LabeledDataset ds = load_dataset(parse_dataset(dataset_s), Split::Train, root);
  if (subset > 0) ds = subset_dataset(ds, subset);
  ds = corrupt_labels(ds, fraction, seed);
  write_corruption_sidecar(out_path, ds);
  int64_t changed = 0;
  for (uint8_t m : ds.corrupted_mask) changed += m;
  std::printf("corrupted %lld of %lld labels (fraction %g, seed %llu) -> %s\n",
              static_cast<long long>(changed), static_cast<long long>(ds.size()), fraction,
              static_cast<unsigned long long>(seed), out_path.c_str());
}

void cmd_grad_check(const std::string& reg_s, int64_t coords, double h, double tolerance,
                    uint64_t seed, int64_t batch, double lambda) {
  std::vector<RegularizerKind> kinds;
  if (reg_s == "all") {
    kinds = {RegularizerKind::Bare, RegularizerKind::BatchNorm, RegularizerKind::Dropout,
             RegularizerKind::WeightDecay};
  } else {
    kinds = {parse_regularizer(reg_s)};
  }
  bool all_ok = true;
  for (RegularizerKind k : kinds) {
    GradCheckConfig cfg;
    cfg.regularizer = k;
    cfg.coords = coords;
    cfg.h = h;
    cfg.tolerance = tolerance;
    cfg.seed = seed;
    cfg.batch = batch;
    cfg.lambda = lambda;
    const GradCheckResult res = grad_check_model(cfg);
    const bool ok = res.ok(coords);
    all_ok = all_ok && ok;
    std::printf("%-12s checked %lld  passed %lld  kink-skipped %lld  max rel err %.3g  %s\n",
                to_string(k), static_cast<long long>(res.checked),
                static_cast<long long>(res.passed), static_cast<long long>(res.skipped_kinks),
                res.max_rel_error, ok ? "ok" : "FAILED");
    for (const auto& f : res.failures) {
      std::printf("  %s[%lld]: analytic %.10g vs numeric %.10g (rel %.3g)\n", f.param.c_str(),
                  static_cast<long long>(f.index), f.analytic, f.numeric, f.rel_error);
    }
  }
  if (!all_ok) g_exit = 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"activation-norm regularization lab"};
  app.require_subcommand(1);

  // train
  std::string train_config;
  bool train_force = false;
  CLI::App* train_cmd = app.add_subcommand("train", "run one training experiment from a config");
  train_cmd->add_option("-c,--config", train_config, "experiment config file")->required();
  train_cmd->add_flag("--force", train_force, "overwrite an existing run directory");
  train_cmd->callback([&] { cmd_train(train_config, train_force); });

  // table
  std::vector<std::string> table_dirs;
  std::string table_csv;
  bool table_auc = false;
  CLI::App* table_cmd = app.add_subcommand("table", "summarize finished runs side by side");
  table_cmd->add_option("dirs", table_dirs, "run directories")->required()->expected(-1);
  table_cmd->add_option("--csv", table_csv, "also write the table as CSV to this path");
  table_cmd->add_flag("--auc", table_auc, "tabulate ablation AUC per checkpoint instead");
  table_cmd->callback([&] { cmd_table(table_dirs, table_csv, table_auc); });

  // plot-cca
  std::string plot_run, plot_out;
  CLI::App* plot_cmd = app.add_subcommand("plot-cca", "render a run's correlation trajectory as SVG");
  plot_cmd->add_option("-r,--run", plot_run, "run directory with cca_trajectory.csv")->required();
  plot_cmd->add_option("-o,--out", plot_out, "output SVG path (default: inside the run dir)");
  plot_cmd->callback([&] { cmd_plot_cca(plot_run, plot_out); });

  // ablate
  std::string ab_run, ab_labels, ab_gran;
  std::vector<int64_t> ab_epochs;
  int64_t ab_seeds = 0, ab_seed_base = -1;
  CLI::App* ab_cmd = app.add_subcommand("ablate", "cumulative feature ablation from checkpoints");
  ab_cmd->add_option("-r,--run", ab_run, "run directory")->required();
  ab_cmd->add_option("-e,--epochs", ab_epochs, "checkpoint epochs (default: from the run config)");
  ab_cmd->add_option("--seeds", ab_seeds, "number of mask seeds");
  ab_cmd->add_option("--seed-base", ab_seed_base, "first mask seed");
  ab_cmd->add_option("--labels", ab_labels, "score against: pristine|current");
  ab_cmd->add_option("--granularity", ab_gran, "zero out: channel|unit");
  ab_cmd->callback(
      [&] { cmd_ablate(ab_run, ab_epochs, ab_seeds, ab_seed_base, ab_labels, ab_gran); });

  // corrupt
  std::string co_dataset = "mnist", co_root, co_out;
  double co_fraction = 0.75;
  uint64_t co_seed = 3;
  int64_t co_subset = 0;
  bool co_force = false;
  CLI::App* co_cmd = app.add_subcommand("corrupt", "draw a label corruption and save it as a sidecar");
  co_cmd->add_option("-d,--dataset", co_dataset, "mnist|fashion_mnist|cifar10");
  co_cmd->add_option("--data-root", co_root, "dataset directory (default: AL2LAB_DATA_ROOT)");
  co_cmd->add_option("-f,--fraction", co_fraction, "fraction of labels to corrupt");
  co_cmd->add_option("-s,--seed", co_seed, "corruption seed");
  co_cmd->add_option("--subset", co_subset, "keep only the first N training samples");
  co_cmd->add_option("-o,--out", co_out, "sidecar output path")->required();
  co_cmd->add_flag("--force", co_force, "overwrite an existing sidecar");
  co_cmd->callback(
      [&] { cmd_corrupt(co_dataset, co_root, co_fraction, co_seed, co_subset, co_out, co_force); });

  // grad-check
  std::string gc_reg = "all";
  int64_t gc_coords = 120, gc_batch = 2;
  double gc_h = 1e-5, gc_tol = 1e-4, gc_lambda = 0.7;
  uint64_t gc_seed = 1;
  CLI::App* gc_cmd = app.add_subcommand("grad-check", "finite-difference check of the backward pass");
  gc_cmd->add_option("--regularizer", gc_reg, "all|bare|batchnorm|dropout|weight_decay");
  gc_cmd->add_option("--coords", gc_coords, "parameter coordinates to verify");
  gc_cmd->add_option("--step", gc_h, "finite-difference step");
  gc_cmd->add_option("--tolerance", gc_tol, "relative error bound");
  gc_cmd->add_option("--seed", gc_seed, "seed for weights, data, and coordinate choice");
  gc_cmd->add_option("--batch", gc_batch, "batch size");
  gc_cmd->add_option("--lambda", gc_lambda, "activation penalty weight during the check");
  gc_cmd->callback(
      [&] { cmd_grad_check(gc_reg, gc_coords, gc_h, gc_tol, gc_seed, gc_batch, gc_lambda); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return g_exit;
}
