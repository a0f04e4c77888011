#pragma once

#include <cstdint>
#include <vector>

#include "al2/data.hpp"
#include "al2/model.hpp"

namespace al2 {

// a x n, row-major; rows are feature channels, columns are (sample, spatial)
// positions with column index sample*s*s + spatial.
struct RepresentationMatrix {
  int64_t a = 0, n = 0;
  std::vector<double> data;
  double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * n + j)]; }
  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * n + j)]; }
};

// Eval-mode trunk features of the batch, reshaped channels-by-samples:
// [N,50,s,s] -> 50 x (N*s*s).
RepresentationMatrix extract_representation(const Model& model, const Tensor& batch);

struct CcaResult {
  std::vector<double> rho;  // descending, in [0,1]
  double mean() const;
};

// Canonical correlations via the whitened cross-covariance SVD: rows are
// mean-centered, a ridge of 1e-10 * trace/dim conditions each covariance, and
// the rho sequence is the singular values of S11^{-1/2} S12 S22^{-1/2}.
// Requires n > max(a, b) and finite inputs.
CcaResult cca_coefficients(const RepresentationMatrix& r1, const RepresentationMatrix& r2);

// cca_coefficients(extract(reference), extract(checkpoint)) per checkpoint.
std::vector<CcaResult> cca_trajectory(const Model& reference,
                                      const std::vector<const Model*>& checkpoints,
                                      const Tensor& batch);

enum class AblationLabels { Pristine, Current };
enum class AblationGranularity { Channel, Unit };

struct AblationCurve {
  std::vector<double> rates;     // 0.0, 0.1, ..., 1.0
  std::vector<double> accuracy;  // percent, averaged over mask seeds
  double auc = 0;                // trapezoid over rate in [0,1]
};

// For each rate, zeroes round(rate * #channels) feature channels (or
// round(rate * #units) scalar units) chosen uniformly per (rate, seed), runs
// the head, and measures train-set accuracy against the chosen label set.
AblationCurve cumulative_ablation(const Model& model, const LabeledDataset& dataset,
                                  const std::vector<uint64_t>& mask_seeds,
                                  AblationLabels labels = AblationLabels::Pristine,
                                  AblationGranularity granularity = AblationGranularity::Channel);

// Closed-form rate-1.0 accuracy: the head's constant prediction at zero
// features, from the linear-layer parameters alone.
double zero_feature_prediction_accuracy(const Model& model, const LabeledDataset& dataset,
                                        AblationLabels labels = AblationLabels::Pristine);

double trapezoid_auc(const std::vector<double>& rates, const std::vector<double>& accuracy);

}  // namespace al2
