#include "al2/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "al2/loss.hpp"
#include "al2/ops.hpp"
#include "al2/rng.hpp"
#include "al2/tensor.hpp"

namespace al2 {
namespace {

// Absolute floor under the relative-error test. Central differences at a
// fixed step carry O(h^2) truncation error regardless of the gradient's size,
// so near-zero coordinates cannot meet a purely relative bound; 1e-7 sits two
// orders above the worst truncation observed on this architecture while any
// coordinate with |grad| >= 1e-3 is still held to the full relative bound.
constexpr double kAbsFloor = 1e-7;

// One training-mode evaluation of the full objective. The dropout stream is
// reseeded on every call so repeated evaluations see the same mask; batchnorm
// running buffers drift across calls but the training-mode loss never reads
// them. When a tape is supplied the backward pass runs before returning.
double objective(Model& model, const Tensor& images, const std::vector<int>& labels,
                 const GradCheckConfig& cfg, uint64_t dropout_seed, Tape* tape) {
  model.seed_dropout(dropout_seed);
  model.set_training(true);
  auto [features, logits] = model.forward(images, tape);
  LossBreakdown bd =
      combined_loss(logits, labels, features, cfg.lambda, ActivationPenalty::Norm, tape);
  Tensor total = bd.total;
  if (cfg.regularizer == RegularizerKind::WeightDecay) {
    total = add(total, weight_decay_penalty(model.params(), model.regularizer().weight_decay, tape),
                tape);
  }
  if (tape) tape->backward(total);
  return static_cast<double>(total.item());
}

struct TracedValue {
  double value;
  std::vector<uint8_t> trace;
};

TracedValue traced_objective(Model& model, const Tensor& images, const std::vector<int>& labels,
                             const GradCheckConfig& cfg, uint64_t dropout_seed) {
  KinkTrace trace;
  TracedValue out;
  {
    KinkTraceScope scope(&trace);
    out.value = objective(model, images, labels, cfg, dropout_seed, nullptr);
  }
  out.trace = trace.bytes();
  return out;
}

}  // namespace

GradCheckResult grad_check_model(const GradCheckConfig& cfg) {
  RegularizerConfig reg;
  reg.kind = cfg.regularizer;
  Model model = Model::build(cfg.dataset, reg, derive_seed(cfg.seed, "gradcheck-init"));
  const DatasetGeometry geo = geometry(cfg.dataset);

  Rng data_rng(derive_seed(cfg.seed, "gradcheck-data"));
  std::vector<real> pix(static_cast<size_t>(cfg.batch * geo.channels * geo.height * geo.width));
  for (auto& p : pix) p = static_cast<real>(data_rng.uniform());
  const Tensor images = Tensor::from({cfg.batch, geo.channels, geo.height, geo.width},
                                     std::move(pix));
  std::vector<int> labels(static_cast<size_t>(cfg.batch));
  for (auto& l : labels) l = static_cast<int>(data_rng.below(10));

  const uint64_t dropout_seed = derive_seed(cfg.seed, "gradcheck-dropout");

  // Reference pass: analytic gradients plus the branch trace they are valid
  // for. Perturbed evaluations whose trace deviates from this one crossed a
  // relu sign or pool argmax boundary and are excluded from the comparison.
  KinkTrace base_trace;
  std::vector<std::vector<real>> analytic(model.params().size());
  {
    KinkTraceScope scope(&base_trace);
    Tape tape;
    (void)objective(model, images, labels, cfg, dropout_seed, &tape);
  }
  for (size_t i = 0; i < model.params().size(); ++i) {
    const Tensor& t = model.params()[i].tensor;
    const auto& g = t.grad_values();
    if (g.empty()) {
      analytic[i].assign(static_cast<size_t>(t.size()), real(0));
    } else {
      analytic[i].assign(g.begin(), g.end());
    }
  }

  std::vector<int64_t> prefix(model.params().size() + 1, 0);
  for (size_t i = 0; i < model.params().size(); ++i) {
    prefix[i + 1] = prefix[i] + model.params()[i].tensor.size();
  }
  const int64_t universe = prefix.back();

  Rng coord_rng(derive_seed(cfg.seed, "gradcheck-coords"));
  const std::vector<int64_t> order = coord_rng.permutation(universe);
  const int64_t attempt_cap = std::min<int64_t>(universe, cfg.coords * 10);

  GradCheckResult result;
  for (int64_t a = 0; a < attempt_cap && result.checked < cfg.coords; ++a) {
    const int64_t flat = order[static_cast<size_t>(a)];
    const size_t pi = static_cast<size_t>(
        std::upper_bound(prefix.begin(), prefix.end(), flat) - prefix.begin() - 1);
    const int64_t off = flat - prefix[pi];
    NamedParam& param = model.params()[pi];
    real* slot = param.tensor.data() + off;
    const real orig = *slot;

    *slot = orig + static_cast<real>(cfg.h);
    const TracedValue plus = traced_objective(model, images, labels, cfg, dropout_seed);
    *slot = orig - static_cast<real>(cfg.h);
    const TracedValue minus = traced_objective(model, images, labels, cfg, dropout_seed);
    *slot = orig;

    if (plus.trace != base_trace.bytes() || minus.trace != base_trace.bytes()) {
      ++result.skipped_kinks;
      continue;
    }

    const double numeric = (plus.value - minus.value) / (2.0 * cfg.h);
    const double a_val = static_cast<double>(analytic[pi][static_cast<size_t>(off)]);
    const double diff = std::abs(a_val - numeric);
    const double mag = std::max(std::abs(a_val), std::abs(numeric));
    const double rel = diff / std::max(mag, kAbsFloor);

    ++result.checked;
    result.max_rel_error = std::max(result.max_rel_error, rel);
    if (diff <= std::max(cfg.tolerance * mag, kAbsFloor)) {
      ++result.passed;
    } else {
      result.failures.push_back({param.name, off, a_val, numeric, rel});
    }
  }
  return result;
}

}  // namespace al2
