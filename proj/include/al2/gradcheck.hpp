#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "al2/model.hpp"

namespace al2 {

struct GradCheckConfig {
  RegularizerKind regularizer = RegularizerKind::Bare;
  DatasetKind dataset = DatasetKind::MNIST;
  int64_t coords = 120;      // sampled parameter coordinates
  int64_t batch = 2;
  double h = 1e-5;           // central-difference step
  double tolerance = 1e-4;   // relative error bound
  double lambda = 0.7;       // activation-penalty weight during the check
  uint64_t seed = 1;
};

struct GradCheckResult {
  int64_t checked = 0;
  int64_t passed = 0;
  int64_t skipped_kinks = 0;  // coordinates whose difference path crossed a kink
  double max_rel_error = 0;

  struct Failure {
    std::string param;
    int64_t index;
    double analytic, numeric, rel_error;
  };
  std::vector<Failure> failures;

  bool ok(int64_t min_coords) const { return failures.empty() && checked >= min_coords; }
};

// Full trunk+head model under the combined loss (plus the weight-decay term
// for that variant): analytic gradients against central finite differences on
// randomly sampled parameter coordinates. A coordinate passes when
// |analytic - numeric| <= max(tolerance * max(|analytic|, |numeric|), 1e-7);
// the absolute floor covers the difference quotient's truncation error, which
// does not shrink with the gradient.
GradCheckResult grad_check_model(const GradCheckConfig& cfg);

}  // namespace al2
