#include "al2/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "al2/rng.hpp"

namespace al2 {

namespace {

constexpr int64_t kChunk = 250;

std::vector<int64_t> iota_range(int64_t start, int64_t end) {
  std::vector<int64_t> idx(static_cast<size_t>(end - start));
  for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
  return idx;
}

using Mat = Eigen::MatrixXd;

// Pseudo inverse square root of a symmetric PSD matrix; eigenvalues below
// dmax*1e-12 are treated as exact zeros (rank-deficient views stay finite).
Mat inv_sqrt_psd(const Mat& s) {
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  Eigen::VectorXd d = es.eigenvalues();
  const double dmax = std::max(d.maxCoeff(), 0.0);
  Eigen::VectorXd inv(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    inv[i] = d[i] > dmax * 1e-12 && d[i] > 0 ? 1.0 / std::sqrt(d[i]) : 0.0;
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double CcaResult::mean() const {
  if (rho.empty()) return 0;
  double s = 0;
  for (double v : rho) s += v;
  return s / static_cast<double>(rho.size());
}

RepresentationMatrix extract_representation(const Model& model, const Tensor& batch) {
  const int64_t n = batch.dim(0);
  const DatasetGeometry g = geometry(model.dataset_kind());
  const int64_t s2 = g.pooled * g.pooled;

  RepresentationMatrix r;
  r.a = 50;
  r.n = n * s2;
  r.data.assign(static_cast<size_t>(r.a * r.n), 0.0);

  for (int64_t start = 0; start < n; start += kChunk) {
    const int64_t end = std::min(n, start + kChunk);
    std::vector<int64_t> idx = iota_range(start, end);
    std::vector<real> vals(static_cast<size_t>((end - start) * batch.size() / n));
    const int64_t per = batch.size() / n;
    for (int64_t i = start; i < end; ++i) {
      std::copy_n(batch.data() + i * per, per, vals.begin() + (i - start) * per);
    }
    Shape shape = batch.shape();
    shape[0] = end - start;
    Tensor feats = model.trunk_eval(Tensor::from(std::move(shape), std::move(vals)));
    const real* f = feats.data();
    for (int64_t i = 0; i < end - start; ++i) {
      for (int64_t c = 0; c < r.a; ++c) {
        const real* plane = f + (i * r.a + c) * s2;
        double* row = r.data.data() + c * r.n + (start + i) * s2;
        for (int64_t p = 0; p < s2; ++p) row[p] = plane[p];
      }
    }
  }
  return r;
}

CcaResult cca_coefficients(const RepresentationMatrix& r1, const RepresentationMatrix& r2) {
  if (r1.n != r2.n) {
    throw ShapeError("cca views must share the sample dimension, got " + std::to_string(r1.n) +
                     " and " + std::to_string(r2.n));
  }
  const int64_t n = r1.n;
  if (n <= std::max(r1.a, r2.a)) {
    throw ShapeError("cca requires more samples than dimensions, got n=" + std::to_string(n) +
                     " for a=" + std::to_string(r1.a) + ", b=" + std::to_string(r2.a));
  }
  for (double v : r1.data) {
    if (!std::isfinite(v)) throw NonFiniteError("cca input R1 contains a non-finite value");
  }
  for (double v : r2.data) {
    if (!std::isfinite(v)) throw NonFiniteError("cca input R2 contains a non-finite value");
  }

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> m1(r1.data.data(), r1.a, n);
  Eigen::Map<const RowMat> m2(r2.data.data(), r2.a, n);
  Mat x = m1;
  Mat y = m2;
  x.colwise() -= x.rowwise().mean();
  y.colwise() -= y.rowwise().mean();

  const double denom = static_cast<double>(n - 1);
  Mat s11 = x * x.transpose() / denom;
  Mat s22 = y * y.transpose() / denom;
  Mat s12 = x * y.transpose() / denom;
  // Relative ridge: scale-invariant by construction, and small enough that
  // well-conditioned directions keep rho to ~1e-10 of the exact value (the
  // self-comparison deficit is ridge/eigenvalue). Directions that are
  // numerically null get zeroed by the pseudo-inverse cutoff instead.
  s11.diagonal().array() += 1e-10 * s11.trace() / static_cast<double>(r1.a);
  s22.diagonal().array() += 1e-10 * s22.trace() / static_cast<double>(r2.a);

  Mat t = inv_sqrt_psd(s11) * s12 * inv_sqrt_psd(s22);
  Eigen::JacobiSVD<Mat> svd(t);
  Eigen::VectorXd sv = svd.singularValues();

  CcaResult out;
  out.rho.resize(static_cast<size_t>(std::min(r1.a, r2.a)));
  for (size_t i = 0; i < out.rho.size(); ++i) {
    out.rho[i] = std::clamp(sv[static_cast<Eigen::Index>(i)], 0.0, 1.0);
  }
  std::sort(out.rho.begin(), out.rho.end(), std::greater<>());
  return out;
}

std::vector<CcaResult> cca_trajectory(const Model& reference,
                                      const std::vector<const Model*>& checkpoints,
                                      const Tensor& batch) {
  RepresentationMatrix ref = extract_representation(reference, batch);
  std::vector<CcaResult> out;
  out.reserve(checkpoints.size());
  for (const Model* m : checkpoints) {
    out.push_back(cca_coefficients(ref, extract_representation(*m, batch)));
  }
  return out;
}

double trapezoid_auc(const std::vector<double>& rates, const std::vector<double>& accuracy) {
  double auc = 0;
  for (size_t i = 0; i + 1 < rates.size(); ++i) {
    auc += 0.5 * (accuracy[i] + accuracy[i + 1]) * (rates[i + 1] - rates[i]);
  }
  return auc;
}

AblationCurve cumulative_ablation(const Model& model, const LabeledDataset& dataset,
                                  const std::vector<uint64_t>& mask_seeds,
                                  AblationLabels labels, AblationGranularity granularity) {
  if (mask_seeds.empty()) throw ShapeError("cumulative_ablation needs at least one mask seed");
  const DatasetGeometry g = geometry(model.dataset_kind());
  const int64_t s2 = g.pooled * g.pooled;
  const int64_t channels = 50;
  const int64_t units = granularity == AblationGranularity::Channel ? channels : channels * s2;
  const int64_t n = dataset.size();
  const std::vector<int>& lab =
      labels == AblationLabels::Pristine ? dataset.pristine_labels : dataset.labels;

  AblationCurve curve;
  for (int i = 0; i <= 10; ++i) curve.rates.push_back(static_cast<double>(i) / 10.0);

  // Masks are drawn once per (rate, seed) and shared by every sample.
  const size_t passes = curve.rates.size() * mask_seeds.size();
  std::vector<std::vector<uint8_t>> masks(passes);
  for (size_t ri = 0; ri < curve.rates.size(); ++ri) {
    const int64_t zeroed = llround(curve.rates[ri] * static_cast<double>(units));
    for (size_t si = 0; si < mask_seeds.size(); ++si) {
      std::vector<uint8_t>& mask = masks[ri * mask_seeds.size() + si];
      mask.assign(static_cast<size_t>(units), 0);
      Rng rng(derive_seed(mask_seeds[si], "ablation", ri));
      std::vector<int64_t> perm = rng.permutation(units);
      for (int64_t j = 0; j < zeroed; ++j) mask[static_cast<size_t>(perm[j])] = 1;
    }
  }

  std::vector<int64_t> correct(passes, 0);
  for (int64_t start = 0; start < n; start += kChunk) {
    const int64_t end = std::min(n, start + kChunk);
    std::vector<int64_t> idx = iota_range(start, end);
    Tensor feats = model.trunk_eval(gather_images(dataset, idx));
    std::vector<int> chunk_labels = gather_labels(lab, idx);
    const int64_t b = end - start;

    for (size_t p = 0; p < passes; ++p) {
      Tensor masked = Tensor::from(feats.shape(), feats.values());
      real* f = masked.data();
      const std::vector<uint8_t>& mask = masks[p];
      if (granularity == AblationGranularity::Channel) {
        for (int64_t i = 0; i < b; ++i) {
          for (int64_t c = 0; c < channels; ++c) {
            if (mask[static_cast<size_t>(c)]) {
              std::fill_n(f + (i * channels + c) * s2, s2, real(0));
            }
          }
        }
      } else {
        for (int64_t i = 0; i < b; ++i) {
          real* row = f + i * units;
          for (int64_t u = 0; u < units; ++u) {
            if (mask[static_cast<size_t>(u)]) row[u] = real(0);
          }
        }
      }
      Tensor logits = model.head_logits_eval(masked);
      const real* x = logits.data();
      const int64_t k = logits.dim(1);
      for (int64_t i = 0; i < b; ++i) {
        const real* row = x + i * k;
        int best = 0;
        for (int j = 1; j < k; ++j) {
          if (row[j] > row[best]) best = j;
        }
        if (best == chunk_labels[static_cast<size_t>(i)]) ++correct[p];
      }
    }
  }

  // Counts are pooled before the one division so that rates whose masks agree
  // across seeds (0.0, 1.0) reproduce the single-evaluation percentage bit for
  // bit.
  curve.accuracy.resize(curve.rates.size());
  for (size_t ri = 0; ri < curve.rates.size(); ++ri) {
    int64_t total = 0;
    for (size_t si = 0; si < mask_seeds.size(); ++si) {
      total += correct[ri * mask_seeds.size() + si];
    }
    curve.accuracy[ri] = 100.0 * static_cast<double>(total) /
                         (static_cast<double>(n) * static_cast<double>(mask_seeds.size()));
  }
  curve.auc = trapezoid_auc(curve.rates, curve.accuracy);
  return curve;
}

double zero_feature_prediction_accuracy(const Model& model, const LabeledDataset& dataset,
                                        AblationLabels labels) {
  const Tensor* f1w = model.find_param("fc1.weight");
  const Tensor* f1b = model.find_param("fc1.bias");
  const Tensor* f2w = model.find_param("fc2.weight");
  const Tensor* f2b = model.find_param("fc2.bias");
  if (!f1w || !f1b || !f2w || !f2b) throw ShapeError("model is missing head parameters");

  const int64_t hidden = f1b->dim(0), classes = f2b->dim(0);
  std::vector<double> h(static_cast<size_t>(hidden));
  for (int64_t i = 0; i < hidden; ++i) h[static_cast<size_t>(i)] = std::max(real(0), f1b->data()[i]);
  std::vector<double> logits(static_cast<size_t>(classes));
  for (int64_t c = 0; c < classes; ++c) {
    double acc = f2b->data()[c];
    for (int64_t i = 0; i < hidden; ++i) acc += h[static_cast<size_t>(i)] * f2w->data()[i * classes + c];
    logits[static_cast<size_t>(c)] = acc;
  }
  int best = 0;
  for (int c = 1; c < classes; ++c) {
    if (logits[static_cast<size_t>(c)] > logits[static_cast<size_t>(best)]) best = c;
  }
  const std::vector<int>& lab =
      labels == AblationLabels::Pristine ? dataset.pristine_labels : dataset.labels;
  int64_t count = 0;
  for (int v : lab) {
    if (v == best) ++count;
  }
  return 100.0 * static_cast<double>(count) / static_cast<double>(lab.size());
}

}  // namespace al2
