#include "al2/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "al2/rng.hpp"

namespace al2 {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size()) {
    throw IoError(path + ": truncated at offset " + std::to_string(off));
  }
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) |
         (uint32_t(b[off + 2]) << 8) | uint32_t(b[off + 3]);
}

struct IdxImages {
  int64_t n, rows, cols;
  const uint8_t* pixels;
  std::vector<uint8_t> storage;
};

IdxImages parse_idx_images(const std::string& path) {
  IdxImages r;
  r.storage = read_file(path);
  const auto& b = r.storage;
  const uint32_t magic = read_be32(b, 0, path);
  if (magic != 0x00000803) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%08X", magic);
    throw IoError(path + ": bad image magic " + buf + " at offset 0");
  }
  r.n = read_be32(b, 4, path);
  r.rows = read_be32(b, 8, path);
  r.cols = read_be32(b, 12, path);
  const size_t need = 16 + size_t(r.n) * size_t(r.rows) * size_t(r.cols);
  if (b.size() < need) {
    throw IoError(path + ": truncated at offset " + std::to_string(b.size()) +
                  " (expected " + std::to_string(need) + " bytes)");
  }
  r.pixels = b.data() + 16;
  return r;
}

std::vector<int> parse_idx_labels(const std::string& path, int64_t expect_n) {
  const auto b = read_file(path);
  const uint32_t magic = read_be32(b, 0, path);
  if (magic != 0x00000801) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%08X", magic);
    throw IoError(path + ": bad label magic " + buf + " at offset 0");
  }
  const int64_t n = read_be32(b, 4, path);
  if (expect_n >= 0 && n != expect_n) {
    throw IoError(path + ": label count " + std::to_string(n) +
                  " does not match image count " + std::to_string(expect_n));
  }
  if (b.size() < 8 + size_t(n)) {
    throw IoError(path + ": truncated at offset " + std::to_string(b.size()));
  }
  std::vector<int> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t v = b[8 + size_t(i)];
    if (v >= 10) {
      throw IoError(path + ": label " + std::to_string(int(v)) + " >= 10 at offset " +
                    std::to_string(8 + i));
    }
    labels[static_cast<size_t>(i)] = v;
  }
  return labels;
}

LabeledDataset load_idx_pair(DatasetKind kind, const std::string& images_path,
                             const std::string& labels_path) {
  IdxImages im = parse_idx_images(images_path);
  LabeledDataset ds;
  ds.kind = kind;
  ds.labels = parse_idx_labels(labels_path, im.n);
  ds.pristine_labels = ds.labels;
  ds.corrupted_mask.assign(static_cast<size_t>(im.n), 0);
  std::vector<real> vals(static_cast<size_t>(im.n * im.rows * im.cols));
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = real(im.pixels[i]) / real(255);
  ds.images = Tensor::from({im.n, 1, im.rows, im.cols}, std::move(vals));
  return ds;
}

LabeledDataset load_cifar(Split split, const std::string& root) {
  namespace fs = std::filesystem;
  std::string base = root;
  if (!fs::exists(fs::path(base) / (split == Split::Train ? "data_batch_1.bin" : "test_batch.bin"))) {
    base = (fs::path(root) / "cifar-10-batches-bin").string();
  }
  std::vector<std::string> files;
  if (split == Split::Train) {
    for (int i = 1; i <= 5; ++i) {
      files.push_back((fs::path(base) / ("data_batch_" + std::to_string(i) + ".bin")).string());
    }
  } else {
    files.push_back((fs::path(base) / "test_batch.bin").string());
  }

  constexpr int64_t kRecord = 1 + 3072;
  std::vector<real> vals;
  std::vector<int> labels;
  for (const auto& f : files) {
    const auto b = read_file(f);
    if (b.size() % kRecord != 0) {
      throw IoError(f + ": truncated at offset " + std::to_string(b.size()) +
                    " (records are " + std::to_string(kRecord) + " bytes)");
    }
    const int64_t n = static_cast<int64_t>(b.size()) / kRecord;
    for (int64_t i = 0; i < n; ++i) {
      const uint8_t* rec = b.data() + i * kRecord;
      if (rec[0] >= 10) {
        throw IoError(f + ": label " + std::to_string(int(rec[0])) + " >= 10 at offset " +
                      std::to_string(i * kRecord));
      }
      labels.push_back(rec[0]);
      for (int64_t j = 0; j < 3072; ++j) vals.push_back(real(rec[1 + j]) / real(255));
    }
  }
  LabeledDataset ds;
  ds.kind = DatasetKind::CIFAR10;
  ds.labels = labels;
  ds.pristine_labels = std::move(labels);
  ds.corrupted_mask.assign(ds.labels.size(), 0);
  ds.images = Tensor::from({static_cast<int64_t>(ds.labels.size()), 3, 32, 32}, std::move(vals));
  return ds;
}

template <class T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(path + ": truncated sidecar");
  return v;
}

}  // namespace

LabeledDataset load_dataset(DatasetKind kind, Split split, const std::string& root) {
  namespace fs = std::filesystem;
  if (kind == DatasetKind::CIFAR10) return load_cifar(split, root);
  const char* img = split == Split::Train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
  const char* lab = split == Split::Train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
  return load_idx_pair(kind, (fs::path(root) / img).string(), (fs::path(root) / lab).string());
}

LabeledDataset subset_dataset(const LabeledDataset& ds, int64_t n) {
  if (n <= 0 || n >= ds.size()) return ds;
  LabeledDataset out;
  out.kind = ds.kind;
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  out.pristine_labels.assign(ds.pristine_labels.begin(), ds.pristine_labels.begin() + n);
  out.corrupted_mask.assign(ds.corrupted_mask.begin(), ds.corrupted_mask.begin() + n);
  out.corruption_fraction = ds.corruption_fraction;
  out.corruption_seed = ds.corruption_seed;
  const int64_t per = ds.images.size() / ds.size();
  std::vector<real> vals(ds.images.values().begin(), ds.images.values().begin() + n * per);
  Shape shape = ds.images.shape();
  shape[0] = n;
  out.images = Tensor::from(std::move(shape), std::move(vals));
  return out;
}

LabeledDataset corrupt_labels(const LabeledDataset& ds, double fraction, uint64_t seed) {
  if (fraction < 0 || fraction > 1) {
    throw ShapeError("corruption fraction must be in [0,1], got " + std::to_string(fraction));
  }
  const int64_t n = ds.size();
  const int64_t m = llround(fraction * static_cast<double>(n));

  LabeledDataset out = ds;
  out.labels = ds.pristine_labels;
  out.corrupted_mask.assign(static_cast<size_t>(n), 0);
  out.corruption_fraction = fraction;
  out.corruption_seed = seed;
  if (m == 0) return out;

  Rng select(derive_seed(seed, "select"));
  std::vector<int64_t> perm = select.permutation(n);
  std::vector<int64_t> chosen(perm.begin(), perm.begin() + m);
  std::sort(chosen.begin(), chosen.end());

  // Uniform over the 9 incorrect classes: draw in [0,9) and skip the pristine class.
  Rng replace(derive_seed(seed, "replace"));
  for (int64_t idx : chosen) {
    const int pristine = out.pristine_labels[static_cast<size_t>(idx)];
    int k = static_cast<int>(replace.below(9));
    if (k >= pristine) ++k;
    out.labels[static_cast<size_t>(idx)] = k;
    out.corrupted_mask[static_cast<size_t>(idx)] = 1;
  }
  return out;
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t n, const BatchPlan& plan) {
  if (plan.batch_size < 1 || plan.batch_size > n) {
    throw ShapeError("batch size " + std::to_string(plan.batch_size) +
                     " must be in [1," + std::to_string(n) + "]");
  }
  Rng rng(derive_seed(plan.shuffle_seed, "epoch", static_cast<uint64_t>(plan.epoch)));
  std::vector<int64_t> perm = rng.permutation(n);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < n; start += plan.batch_size) {
    const int64_t end = std::min(n, start + plan.batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

std::vector<int64_t> first_batch_indices(int64_t n, int64_t batch_size, uint64_t shuffle_seed) {
  return epoch_batches(n, {batch_size, shuffle_seed, 0}).front();
}

Tensor gather_images(const LabeledDataset& ds, const std::vector<int64_t>& idx) {
  const Shape& s = ds.images.shape();
  const int64_t per = ds.images.size() / s[0];
  Shape out_shape = s;
  out_shape[0] = static_cast<int64_t>(idx.size());
  Tensor out = Tensor::zeros(out_shape);
  const real* src = ds.images.data();
  real* dst = out.data();
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= s[0]) {
      throw ShapeError("gather index " + std::to_string(idx[i]) + " outside dataset of " +
                       std::to_string(s[0]));
    }
    std::memcpy(dst + i * per, src + idx[i] * per, sizeof(real) * static_cast<size_t>(per));
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int64_t>& idx) {
  std::vector<int> out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= static_cast<int64_t>(labels.size())) {
      throw ShapeError("gather index " + std::to_string(idx[i]) + " outside label set of " +
                       std::to_string(labels.size()));
    }
    out[i] = labels[static_cast<size_t>(idx[i])];
  }
  return out;
}

void write_corruption_sidecar(const std::string& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write("AL2LBLS1", 8);
  write_raw(out, uint32_t(1));
  write_raw(out, ds.corruption_seed);
  write_raw(out, ds.corruption_fraction);
  write_raw(out, static_cast<int64_t>(ds.size()));
  for (int64_t i = 0; i < ds.size(); ++i) {
    const uint8_t pair[2] = {static_cast<uint8_t>(ds.labels[static_cast<size_t>(i)]),
                             static_cast<uint8_t>(ds.pristine_labels[static_cast<size_t>(i)])};
    out.write(reinterpret_cast<const char*>(pair), 2);
  }
  if (!out) throw IoError("failed writing " + path);
}

LabeledDataset apply_corruption_sidecar(const LabeledDataset& ds, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "AL2LBLS1", 8) != 0) {
    throw IoError(path + ": bad sidecar magic at offset 0");
  }
  const uint32_t version = read_raw<uint32_t>(in, path);
  if (version != 1) throw IoError(path + ": unsupported sidecar version " + std::to_string(version));
  LabeledDataset out = ds;
  out.corruption_seed = read_raw<uint64_t>(in, path);
  out.corruption_fraction = read_raw<double>(in, path);
  const int64_t n = read_raw<int64_t>(in, path);
  if (n != ds.size()) {
    throw IoError(path + ": sidecar has " + std::to_string(n) + " labels but dataset has " +
                  std::to_string(ds.size()));
  }
  out.corrupted_mask.assign(static_cast<size_t>(n), 0);
  for (int64_t i = 0; i < n; ++i) {
    uint8_t pair[2];
    in.read(reinterpret_cast<char*>(pair), 2);
    if (!in) throw IoError(path + ": truncated sidecar");
    if (pair[1] != ds.pristine_labels[static_cast<size_t>(i)]) {
      throw IoError(path + ": pristine label mismatch at index " + std::to_string(i));
    }
    out.labels[static_cast<size_t>(i)] = pair[0];
    out.corrupted_mask[static_cast<size_t>(i)] = pair[0] != pair[1];
  }
  return out;
}

}  // namespace al2
