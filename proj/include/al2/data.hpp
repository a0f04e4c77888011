#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "al2/model.hpp"
#include "al2/tensor.hpp"

namespace al2 {

enum class Split { Train, Test };

struct LabeledDataset {
  DatasetKind kind = DatasetKind::MNIST;
  Tensor images;  // [N,C,H,W], pixel bytes / 255
  std::vector<int> labels;           // current, possibly corrupted
  std::vector<int> pristine_labels;  // never mutated after load
  std::vector<uint8_t> corrupted_mask;
  double corruption_fraction = 0.0;
  uint64_t corruption_seed = 0;

  int64_t size() const { return images.defined() ? images.dim(0) : 0; }
};

// MNIST/FashionMNIST from IDX files (train-images-idx3-ubyte etc. under root),
// CIFAR-10 from its binary batches (data_batch_*.bin / test_batch.bin, found
// either in root or root/cifar-10-batches-bin). Pixels are divided by 255;
// nothing else is done to them.
LabeledDataset load_dataset(DatasetKind kind, Split split, const std::string& root);

// Keeps the first n samples; deterministic and independent of any seed.
LabeledDataset subset_dataset(const LabeledDataset& ds, int64_t n);

// Replaces labels at exactly round(fraction*N) uniformly chosen indices with a
// uniform draw over the 9 incorrect classes. Always corrupts from the pristine
// labels, so re-corruption with the same (fraction, seed) is idempotent.
LabeledDataset corrupt_labels(const LabeledDataset& ds, double fraction, uint64_t seed);

struct BatchPlan {
  int64_t batch_size = 100;
  uint64_t shuffle_seed = 0;
  int64_t epoch = 0;
};

// Seeded per-epoch permutation cut into batches; the final short batch is kept.
std::vector<std::vector<int64_t>> epoch_batches(int64_t n, const BatchPlan& plan);

// The first batch under epoch-0 ordering; feeds representation extraction.
std::vector<int64_t> first_batch_indices(int64_t n, int64_t batch_size, uint64_t shuffle_seed);

Tensor gather_images(const LabeledDataset& ds, const std::vector<int64_t>& idx);
std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int64_t>& idx);

// Corruption sidecar: "AL2LBLS1", u32 version, u64 seed, f64 fraction, i64 N,
// then N (current, pristine) byte pairs. Little-endian throughout.
void write_corruption_sidecar(const std::string& path, const LabeledDataset& ds);

// Applies a sidecar's current labels onto a pristine-loaded dataset; rejects
// sidecars whose size or pristine labels disagree with the dataset.
LabeledDataset apply_corruption_sidecar(const LabeledDataset& ds, const std::string& path);

}  // namespace al2
