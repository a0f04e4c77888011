#include "al2/model.hpp"

#include <cmath>

namespace al2 {

const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::MNIST: return "mnist";
    case DatasetKind::FashionMNIST: return "fashion_mnist";
    case DatasetKind::CIFAR10: return "cifar10";
  }
  return "?";
}

const char* to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::Bare: return "bare";
    case RegularizerKind::BatchNorm: return "batchnorm";
    case RegularizerKind::Dropout: return "dropout";
    case RegularizerKind::WeightDecay: return "weight_decay";
  }
  return "?";
}

DatasetGeometry geometry(DatasetKind k) {
  switch (k) {
    case DatasetKind::MNIST:
    case DatasetKind::FashionMNIST:
      return {1, 28, 28, 4};
    case DatasetKind::CIFAR10:
      return {3, 32, 32, 5};
  }
  throw ShapeError("unknown dataset kind");
}

namespace {

// U[-1/sqrt(fan_in), +1/sqrt(fan_in)], one independent stream per parameter
// name: adding or removing other parameters never shifts a parameter's draw,
// so every regularizer variant starts from the same conv/linear weights.
Tensor init_uniform(Shape shape, int64_t fan_in, uint64_t init_seed, const std::string& name) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  Rng rng(derive_seed(init_seed, name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (real& v : t.values()) v = real(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

Model Model::build(DatasetKind kind, RegularizerConfig reg, uint64_t init_seed) {
  switch (kind) {
    case DatasetKind::MNIST:
    case DatasetKind::FashionMNIST:
    case DatasetKind::CIFAR10:
      break;
    default:
      throw ShapeError("unknown dataset kind");
  }
  Model m;
  m.kind_ = kind;
  m.reg_ = reg;
  const DatasetGeometry g = geometry(kind);
  const int64_t k = 5, c1 = 32, c2 = 50, hidden = 128, classes = 10;
  const int64_t flat = c2 * g.pooled * g.pooled;

  m.c1w_ = init_uniform({c1, g.channels, k, k}, g.channels * k * k, init_seed, "conv1.weight");
  m.c1b_ = init_uniform({c1}, g.channels * k * k, init_seed, "conv1.bias");
  m.c2w_ = init_uniform({c2, c1, k, k}, c1 * k * k, init_seed, "conv2.weight");
  m.c2b_ = init_uniform({c2}, c1 * k * k, init_seed, "conv2.bias");
  m.f1w_ = init_uniform({flat, hidden}, flat, init_seed, "fc1.weight");
  m.f1b_ = init_uniform({hidden}, flat, init_seed, "fc1.bias");
  m.f2w_ = init_uniform({hidden, classes}, hidden, init_seed, "fc2.weight");
  m.f2b_ = init_uniform({classes}, hidden, init_seed, "fc2.bias");

  m.params_ = {
      {"conv1.weight", m.c1w_, true, true},   {"conv1.bias", m.c1b_, true, false},
      {"conv2.weight", m.c2w_, true, true},   {"conv2.bias", m.c2b_, true, false},
      {"fc1.weight", m.f1w_, false, true},    {"fc1.bias", m.f1b_, false, false},
      {"fc2.weight", m.f2w_, false, true},    {"fc2.bias", m.f2b_, false, false},
  };

  if (reg.kind == RegularizerKind::BatchNorm) {
    m.bn1g_ = Tensor::full({c1}, real(1), true);
    m.bn1b_ = Tensor::zeros({c1}, true);
    m.bn1rm_ = Tensor::zeros({c1});
    m.bn1rv_ = Tensor::full({c1}, real(1));
    m.bn2g_ = Tensor::full({c2}, real(1), true);
    m.bn2b_ = Tensor::zeros({c2}, true);
    m.bn2rm_ = Tensor::zeros({c2});
    m.bn2rv_ = Tensor::full({c2}, real(1));
    m.params_.push_back({"bn1.gamma", m.bn1g_, true, false});
    m.params_.push_back({"bn1.beta", m.bn1b_, true, false});
    m.params_.push_back({"bn2.gamma", m.bn2g_, true, false});
    m.params_.push_back({"bn2.beta", m.bn2b_, true, false});
    m.buffers_ = {{"bn1.running_mean", m.bn1rm_},
                  {"bn1.running_var", m.bn1rv_},
                  {"bn2.running_mean", m.bn2rm_},
                  {"bn2.running_var", m.bn2rv_}};
  }
  return m;
}

const Tensor* Model::find_param(const std::string& name) const {
  for (const NamedParam& p : params_) {
    if (p.name == name) return &p.tensor;
  }
  return nullptr;
}

Tensor Model::trunk_impl(const Tensor& batch, Tape* tape, bool training) const {
  const DatasetGeometry g = geometry(kind_);
  if (!batch.defined() || batch.ndim() != 4 || batch.dim(1) != g.channels ||
      batch.dim(2) != g.height || batch.dim(3) != g.width) {
    throw ShapeError("forward batch shape " +
                     (batch.defined() ? shape_str(batch.shape()) : std::string("undefined")) +
                     " does not match " + std::string(to_string(kind_)) + " geometry [N," +
                     std::to_string(g.channels) + "," + std::to_string(g.height) + "," +
                     std::to_string(g.width) + "]");
  }
  Tensor x = conv2d(batch, c1w_, c1b_, 1, 0, tape);
  if (reg_.kind == RegularizerKind::BatchNorm) {
    x = batchnorm2d(x, bn1g_, bn1b_, bn1rm_, bn1rv_, training, kBnMomentum, kBnEps, tape);
  }
  x = relu(x, tape);
  x = maxpool2(x, tape);
  x = conv2d(x, c2w_, c2b_, 1, 0, tape);
  if (reg_.kind == RegularizerKind::BatchNorm) {
    x = batchnorm2d(x, bn2g_, bn2b_, bn2rm_, bn2rv_, training, kBnMomentum, kBnEps, tape);
  }
  x = relu(x, tape);
  return maxpool2(x, tape);
}

Tensor Model::head_impl(const Tensor& features, Tape* tape, bool training,
                        Rng* drop_rng) const {
  Tensor h = features.ndim() > 2 ? flatten(features, tape) : features;
  if (h.dim(1) != f1w_.dim(0)) {
    throw ShapeError("head input feature dimension " + std::to_string(h.dim(1)) +
                     " does not match expected " + std::to_string(f1w_.dim(0)));
  }
  if (reg_.kind == RegularizerKind::Dropout && training) {
    h = dropout(h, reg_.dropout_rate, *drop_rng, true, tape);
  }
  h = linear(h, f1w_, f1b_, tape);
  h = relu(h, tape);
  return linear(h, f2w_, f2b_, tape);
}

std::pair<Tensor, Tensor> Model::forward(const Tensor& batch, Tape* tape) {
  Tensor features = trunk_impl(batch, tape, training_);
  Tensor logits = head_impl(features, tape, training_, &dropout_rng_);
  return {features, logits};
}

std::pair<Tensor, Tensor> Model::forward_eval(const Tensor& batch) const {
  Tensor features = trunk_impl(batch, nullptr, false);
  Tensor logits = head_impl(features, nullptr, false, nullptr);
  return {features, logits};
}

Tensor Model::trunk_eval(const Tensor& batch) const { return trunk_impl(batch, nullptr, false); }

Tensor Model::head_logits_eval(const Tensor& features) const {
  return head_impl(features, nullptr, false, nullptr);
}

Tensor weight_decay_penalty(const std::vector<NamedParam>& params, real coefficient,
                            Tape* tape) {
  Tensor total;
  for (const NamedParam& p : params) {
    if (!p.decayable) continue;
    Tensor s = sum_squares(p.tensor, tape);
    total = total.defined() ? add(total, s, tape) : s;
  }
  if (!total.defined()) return Tensor::zeros({1});
  return scale(total, real(0.5) * coefficient, tape);
}

}  // namespace al2
