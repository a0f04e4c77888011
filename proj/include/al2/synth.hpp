#pragma once

#include <cstdint>
#include <string>

#include "al2/data.hpp"

namespace al2 {

// Deterministic procedural 10-class digit corpus in the MNIST IDX layout:
// stroke glyphs rendered at 28x28 with per-sample affine jitter, stroke-width
// and intensity variation, and additive noise. A hermetic stand-in that
// exercises the exact loader path of the real files.
void write_synth_idx_corpus(const std::string& root, int64_t train_n, int64_t test_n,
                            uint64_t seed);

// Same corpus generated in memory; split_tag keeps train/test draws disjoint.
LabeledDataset synth_dataset(int64_t n, uint64_t seed, const std::string& split_tag = "train");

}  // namespace al2
