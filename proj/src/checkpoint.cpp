#include "al2/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace al2 {

namespace {

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(path + ": truncated checkpoint");
  return v;
}

void put_tensor(std::ofstream& out, const std::string& name, uint8_t kind, const Tensor& t) {
  put(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put(out, kind);
  put(out, static_cast<uint32_t>(t.shape().size()));
  for (int64_t d : t.shape()) put(out, d);
  for (real v : t.values()) put(out, static_cast<double>(v));
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write("AL2CKPT1", 8);
  put(out, uint32_t(1));
  put(out, static_cast<uint8_t>(meta.dataset));
  put(out, static_cast<uint8_t>(meta.regularizer));
  put(out, meta.dropout_rate);
  put(out, meta.weight_decay);
  put(out, static_cast<uint8_t>(meta.al2_enabled));
  put(out, static_cast<uint8_t>(meta.penalty));
  put(out, meta.lambda_params.lambda0);
  put(out, meta.lambda_params.low_factor);
  put(out, meta.lambda_params.high_factor);
  put(out, meta.lambda_params.threshold);
  put(out, meta.lambda_current);
  put(out, meta.lambda_epoch);
  put(out, meta.epoch);
  put(out, meta.seed_init);
  put(out, meta.seed_shuffle);
  put(out, meta.seed_corruption);
  put(out, meta.seed_dropout);

  const auto& params = model.params();
  const auto& buffers = model.buffers();
  put(out, static_cast<uint32_t>(params.size() + buffers.size()));
  for (const NamedParam& p : params) put_tensor(out, p.name, 0, p.tensor);
  for (const auto& [name, t] : buffers) put_tensor(out, name, 1, t);
  if (!out) throw IoError("failed writing " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "AL2CKPT1", 8) != 0) {
    throw IoError(path + ": bad checkpoint magic at offset 0");
  }
  const uint32_t version = get<uint32_t>(in, path);
  if (version != 1) {
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  }

  CheckpointMeta meta;
  meta.dataset = static_cast<DatasetKind>(get<uint8_t>(in, path));
  meta.regularizer = static_cast<RegularizerKind>(get<uint8_t>(in, path));
  meta.dropout_rate = get<double>(in, path);
  meta.weight_decay = get<double>(in, path);
  meta.al2_enabled = get<uint8_t>(in, path) != 0;
  meta.penalty = static_cast<ActivationPenalty>(get<uint8_t>(in, path));
  meta.lambda_params.lambda0 = get<double>(in, path);
  meta.lambda_params.low_factor = get<double>(in, path);
  meta.lambda_params.high_factor = get<double>(in, path);
  meta.lambda_params.threshold = get<double>(in, path);
  meta.lambda_current = get<double>(in, path);
  meta.lambda_epoch = get<int64_t>(in, path);
  meta.epoch = get<int64_t>(in, path);
  meta.seed_init = get<uint64_t>(in, path);
  meta.seed_shuffle = get<uint64_t>(in, path);
  meta.seed_corruption = get<uint64_t>(in, path);
  meta.seed_dropout = get<uint64_t>(in, path);

  RegularizerConfig reg;
  reg.kind = meta.regularizer;
  reg.dropout_rate = real(meta.dropout_rate);
  reg.weight_decay = real(meta.weight_decay);
  LoadedCheckpoint lc{Model::build(meta.dataset, reg, meta.seed_init), meta};

  const uint32_t count = get<uint32_t>(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError(path + ": truncated checkpoint");
    const uint8_t kind = get<uint8_t>(in, path);
    const uint32_t ndims = get<uint32_t>(in, path);
    Shape shape(ndims);
    for (uint32_t d = 0; d < ndims; ++d) shape[d] = get<int64_t>(in, path);

    Tensor* target = nullptr;
    if (kind == 0) {
      for (NamedParam& p : lc.model.params()) {
        if (p.name == name) target = &p.tensor;
      }
    } else {
      for (auto& [bname, t] : lc.model.buffers()) {
        if (bname == name) target = &t;
      }
    }
    if (!target) throw IoError(path + ": unknown tensor '" + name + "' in checkpoint");
    if (target->shape() != shape) {
      throw IoError(path + ": shape mismatch for '" + name + "': file has " + shape_str(shape) +
                    ", model has " + shape_str(target->shape()));
    }
    for (real& v : target->values()) v = real(get<double>(in, path));
  }
  return lc;
}

}  // namespace al2
