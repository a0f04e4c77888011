// Writes the procedural digit corpus as IDX files so experiments have a
// hermetic dataset in the exact on-disk format the loader expects.

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "al2/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"procedural digit corpus writer (MNIST IDX layout)"};
  std::string out_root;
  int64_t train_n = 12000, test_n = 10000;
  uint64_t seed = 7;
  app.add_option("-o,--out", out_root, "directory for the four IDX files")->required();
  app.add_option("--train-n", train_n, "training images to generate");
  app.add_option("--test-n", test_n, "test images to generate");
  app.add_option("--seed", seed, "corpus seed");
  CLI11_PARSE(app, argc, argv);

  try {
    al2::write_synth_idx_corpus(out_root, train_n, test_n, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::printf("wrote %lld train / %lld test images under %s\n",
              static_cast<long long>(train_n), static_cast<long long>(test_n), out_root.c_str());
  return 0;
}
