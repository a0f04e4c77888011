#include "al2/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "al2/errors.hpp"

namespace al2 {

const char* to_string(ActivationPenalty p) {
  return p == ActivationPenalty::Norm ? "norm" : "squared_norm";
}

const char* to_string(AblationLabels l) {
  return l == AblationLabels::Pristine ? "pristine" : "current";
}

const char* to_string(AblationGranularity g) {
  return g == AblationGranularity::Channel ? "channel" : "unit";
}

DatasetKind parse_dataset(const std::string& s) {
  if (s == "mnist") return DatasetKind::MNIST;
  if (s == "fashion_mnist") return DatasetKind::FashionMNIST;
  if (s == "cifar10") return DatasetKind::CIFAR10;
  throw std::invalid_argument("unknown dataset '" + s +
                              "' (expected mnist, fashion_mnist, or cifar10)");
}

RegularizerKind parse_regularizer(const std::string& s) {
  if (s == "bare") return RegularizerKind::Bare;
  if (s == "batchnorm") return RegularizerKind::BatchNorm;
  if (s == "dropout") return RegularizerKind::Dropout;
  if (s == "weight_decay") return RegularizerKind::WeightDecay;
  throw std::invalid_argument("unknown regularizer '" + s +
                              "' (expected bare, batchnorm, dropout, or weight_decay)");
}

ActivationPenalty parse_penalty(const std::string& s) {
  if (s == "norm") return ActivationPenalty::Norm;
  if (s == "squared_norm") return ActivationPenalty::SquaredNorm;
  throw std::invalid_argument("unknown activation_penalty '" + s +
                              "' (expected norm or squared_norm)");
}

AblationLabels parse_ablation_labels(const std::string& s) {
  if (s == "pristine") return AblationLabels::Pristine;
  if (s == "current") return AblationLabels::Current;
  throw std::invalid_argument("unknown ablation_labels '" + s +
                              "' (expected pristine or current)");
}

AblationGranularity parse_ablation_granularity(const std::string& s) {
  if (s == "channel") return AblationGranularity::Channel;
  if (s == "unit") return AblationGranularity::Unit;
  throw std::invalid_argument("unknown ablation_granularity '" + s +
                              "' (expected channel or unit)");
}

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

int64_t parse_i64(const std::string& v) {
  size_t used = 0;
  int64_t out;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected an integer, got '" + v + "'");
  }
  if (used != v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& v) {
  if (!v.empty() && v[0] == '-') throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  size_t used = 0;
  uint64_t out;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  }
  if (used != v.size()) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_f64(const std::string& v) {
  size_t used = 0;
  double out;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<int64_t> parse_i64_list(const std::string& v) {
  std::vector<int64_t> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_i64(trim(item)));
  }
  return out;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s = {
      {"dataset", [](ExperimentConfig& c, const std::string& v) { c.train.dataset = parse_dataset(v); }},
      {"data_root", [](ExperimentConfig& c, const std::string& v) { c.train.data_root = v; }},
      {"out_dir", [](ExperimentConfig& c, const std::string& v) { c.train.out_dir = v; }},
      {"sidecar", [](ExperimentConfig& c, const std::string& v) { c.train.sidecar = v; }},
      {"corruption_fraction",
       [](ExperimentConfig& c, const std::string& v) {
         double f = parse_f64(v);
         require(f >= 0.0 && f <= 1.0, "corruption_fraction must be in [0,1]");
         c.train.corruption_fraction = f;
       }},
      {"corruption_seed",
       [](ExperimentConfig& c, const std::string& v) { c.train.seed_corruption = parse_u64(v); }},
      {"regularizer",
       [](ExperimentConfig& c, const std::string& v) { c.train.regularizer.kind = parse_regularizer(v); }},
      {"dropout_rate",
       [](ExperimentConfig& c, const std::string& v) {
         double r = parse_f64(v);
         require(r >= 0.0 && r < 1.0, "dropout_rate must be in [0,1)");
         c.train.regularizer.dropout_rate = static_cast<real>(r);
       }},
      {"weight_decay",
       [](ExperimentConfig& c, const std::string& v) {
         double w = parse_f64(v);
         require(w >= 0.0, "weight_decay must be non-negative");
         c.train.regularizer.weight_decay = static_cast<real>(w);
       }},
      {"al2_enabled",
       [](ExperimentConfig& c, const std::string& v) { c.train.al2_enabled = parse_bool(v); }},
      {"activation_penalty",
       [](ExperimentConfig& c, const std::string& v) { c.train.penalty = parse_penalty(v); }},
      {"lambda0",
       [](ExperimentConfig& c, const std::string& v) {
         double x = parse_f64(v);
         require(x > 0.0, "lambda0 must be positive");
         c.train.lambda.lambda0 = x;
       }},
      {"lambda_low_factor",
       [](ExperimentConfig& c, const std::string& v) {
         double x = parse_f64(v);
         require(x > 1.0, "lambda_low_factor must exceed 1");
         c.train.lambda.low_factor = x;
       }},
      {"lambda_high_factor",
       [](ExperimentConfig& c, const std::string& v) {
         double x = parse_f64(v);
         require(x > 1.0, "lambda_high_factor must exceed 1");
         c.train.lambda.high_factor = x;
       }},
      {"lambda_threshold",
       [](ExperimentConfig& c, const std::string& v) {
         double x = parse_f64(v);
         require(x > 0.0, "lambda_threshold must be positive");
         c.train.lambda.threshold = x;
       }},
      {"epochs",
       [](ExperimentConfig& c, const std::string& v) {
         int64_t e = parse_i64(v);
         require(e >= 0, "epochs must be non-negative");
         c.train.epochs = e;
       }},
      {"batch_size",
       [](ExperimentConfig& c, const std::string& v) {
         int64_t b = parse_i64(v);
         require(b >= 1, "batch_size must be at least 1");
         c.train.batch_size = b;
       }},
      {"learning_rate",
       [](ExperimentConfig& c, const std::string& v) {
         double lr = parse_f64(v);
         require(lr > 0.0, "learning_rate must be positive");
         c.train.learning_rate = lr;
       }},
      {"momentum",
       [](ExperimentConfig& c, const std::string& v) {
         double m = parse_f64(v);
         require(m >= 0.0 && m < 1.0, "momentum must be in [0,1)");
         c.train.momentum = m;
       }},
      {"seed_init", [](ExperimentConfig& c, const std::string& v) { c.train.seed_init = parse_u64(v); }},
      {"seed_shuffle",
       [](ExperimentConfig& c, const std::string& v) { c.train.seed_shuffle = parse_u64(v); }},
      {"seed_dropout",
       [](ExperimentConfig& c, const std::string& v) { c.train.seed_dropout = parse_u64(v); }},
      {"metric_every",
       [](ExperimentConfig& c, const std::string& v) {
         int64_t m = parse_i64(v);
         require(m >= 1, "metric_every must be at least 1");
         c.train.metric_every = m;
       }},
      {"checkpoint_every",
       [](ExperimentConfig& c, const std::string& v) {
         int64_t m = parse_i64(v);
         require(m >= 1, "checkpoint_every must be at least 1");
         c.train.checkpoint_every = m;
       }},
      {"train_subset",
       [](ExperimentConfig& c, const std::string& v) {
         int64_t n = parse_i64(v);
         require(n >= 0, "train_subset must be non-negative (0 = full split)");
         c.train.train_subset = n;
       }},
      {"record_wall_time",
       [](ExperimentConfig& c, const std::string& v) { c.train.record_wall_time = parse_bool(v); }},
      {"cca_batch",
       [](ExperimentConfig& c, const std::string& v) {
         int64_t b = parse_i64(v);
         require(b >= 1, "cca_batch must be at least 1");
         c.cca_batch = b;
       }},
      {"cca_epochs",
       [](ExperimentConfig& c, const std::string& v) { c.cca_epochs = parse_i64_list(v); }},
      {"ablation_epochs",
       [](ExperimentConfig& c, const std::string& v) { c.ablation_epochs = parse_i64_list(v); }},
      {"mask_seeds",
       [](ExperimentConfig& c, const std::string& v) {
         int64_t m = parse_i64(v);
         require(m >= 1, "mask_seeds must be at least 1");
         c.mask_seeds = m;
       }},
      {"mask_seed_base",
       [](ExperimentConfig& c, const std::string& v) { c.mask_seed_base = parse_u64(v); }},
      {"ablation_labels",
       [](ExperimentConfig& c, const std::string& v) { c.ablation_labels = parse_ablation_labels(v); }},
      {"ablation_granularity",
       [](ExperimentConfig& c, const std::string& v) {
         c.ablation_granularity = parse_ablation_granularity(v);
       }},
  };
  return s;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line_no, "expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, "missing key before '='");
    const auto& table = setters();
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError(line_no, "unknown key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line_no, key + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(e.line, path + ": " + e.message);
  }
}

namespace {

std::string join_i64(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string render_config(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::string s;
  auto put = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  put("dataset", to_string(t.dataset));
  put("data_root", t.data_root);
  put("out_dir", t.out_dir);
  put("sidecar", t.sidecar);
  put("corruption_fraction", fmt_f64(t.corruption_fraction));
  put("corruption_seed", std::to_string(t.seed_corruption));
  put("regularizer", to_string(t.regularizer.kind));
  put("dropout_rate", fmt_f64(t.regularizer.dropout_rate));
  put("weight_decay", fmt_f64(t.regularizer.weight_decay));
  put("al2_enabled", t.al2_enabled ? "true" : "false");
  put("activation_penalty", to_string(t.penalty));
  put("lambda0", fmt_f64(t.lambda.lambda0));
  put("lambda_low_factor", fmt_f64(t.lambda.low_factor));
  put("lambda_high_factor", fmt_f64(t.lambda.high_factor));
  put("lambda_threshold", fmt_f64(t.lambda.threshold));
  put("epochs", std::to_string(t.epochs));
  put("batch_size", std::to_string(t.batch_size));
  put("learning_rate", fmt_f64(t.learning_rate));
  put("momentum", fmt_f64(t.momentum));
  put("seed_init", std::to_string(t.seed_init));
  put("seed_shuffle", std::to_string(t.seed_shuffle));
  put("seed_dropout", std::to_string(t.seed_dropout));
  put("metric_every", std::to_string(t.metric_every));
  put("checkpoint_every", std::to_string(t.checkpoint_every));
  put("train_subset", std::to_string(t.train_subset));
  put("record_wall_time", t.record_wall_time ? "true" : "false");
  put("cca_batch", std::to_string(cfg.cca_batch));
  put("cca_epochs", join_i64(cfg.cca_epochs));
  put("ablation_epochs", join_i64(cfg.ablation_epochs));
  put("mask_seeds", std::to_string(cfg.mask_seeds));
  put("mask_seed_base", std::to_string(cfg.mask_seed_base));
  put("ablation_labels", to_string(cfg.ablation_labels));
  put("ablation_granularity", to_string(cfg.ablation_granularity));
  return s;
}

void write_config_echo(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write config echo: " + path);
  out << render_config(cfg);
  if (!out) throw IoError("short write on config echo: " + path);
}

}  // namespace al2
