#pragma once

#include <string>
#include <vector>

#include "al2/analysis.hpp"
#include "al2/trainer.hpp"

namespace al2 {

const char* to_string(ActivationPenalty p);
const char* to_string(AblationLabels l);
const char* to_string(AblationGranularity g);

// A full experiment: one training run plus the analysis passes driven off its
// checkpoints.
struct ExperimentConfig {
  TrainConfig train;

  int64_t cca_batch = 1000;         // reference batch drawn from the test split
  std::vector<int64_t> cca_epochs;  // checkpoint epochs compared against epoch 0
  std::vector<int64_t> ablation_epochs;
  int64_t mask_seeds = 5;           // ablation curves averaged over this many masks
  uint64_t mask_seed_base = 99;
  AblationLabels ablation_labels = AblationLabels::Pristine;
  AblationGranularity ablation_granularity = AblationGranularity::Channel;
};

// Plain-text config: one `key = value` per line, `#` starts a comment, blank
// lines ignored, later assignments win. Unknown keys, malformed values, and
// out-of-range values raise ConfigError carrying the 1-based line number.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Every setting in parseable form; the train command drops this next to its
// outputs so a run directory records exactly what produced it.
std::string render_config(const ExperimentConfig& cfg);
void write_config_echo(const std::string& path, const ExperimentConfig& cfg);

// Enum value parsers shared with the command line; throw std::invalid_argument
// naming the offending value and the accepted spellings.
DatasetKind parse_dataset(const std::string& s);
RegularizerKind parse_regularizer(const std::string& s);
ActivationPenalty parse_penalty(const std::string& s);
AblationLabels parse_ablation_labels(const std::string& s);
AblationGranularity parse_ablation_granularity(const std::string& s);

}  // namespace al2
