#include "al2/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "al2/rng.hpp"

namespace al2 {

namespace {

struct P {
  double x, y;
};

using Stroke = std::vector<P>;

// Digit skeletons as polylines on the unit square, y growing downward.
const std::vector<std::vector<Stroke>>& glyphs() {
  static const std::vector<std::vector<Stroke>> g = {
      // 0
      {{{.30, .20}, {.70, .20}, {.74, .50}, {.70, .80}, {.30, .80}, {.26, .50}, {.30, .20}}},
      // 1
      {{{.40, .30}, {.55, .16}, {.55, .84}}, {{.40, .84}, {.68, .84}}},
      // 2
      {{{.28, .32}, {.38, .18}, {.62, .16}, {.72, .30}, {.68, .46}, {.30, .82}, {.72, .82}}},
      // 3
      {{{.28, .22}, {.55, .16}, {.70, .28}, {.58, .46}, {.44, .49}},
       {{.44, .49}, {.64, .54}, {.72, .68}, {.55, .84}, {.28, .76}}},
      // 4
      {{{.62, .84}, {.62, .16}, {.26, .62}, {.78, .62}}},
      // 5
      {{{.70, .18}, {.32, .18}, {.30, .46}, {.58, .44}, {.72, .58}, {.68, .76}, {.50, .84}, {.30, .78}}},
      // 6
      {{{.64, .16}, {.42, .28}, {.31, .52}, {.32, .74}, {.50, .84}, {.66, .74}, {.66, .58}, {.50, .50}, {.33, .58}}},
      // 7
      {{{.26, .18}, {.74, .18}, {.48, .84}}, {{.38, .52}, {.64, .52}}},
      // 8
      {{{.50, .16}, {.32, .27}, {.50, .46}, {.68, .27}, {.50, .16}},
       {{.50, .46}, {.28, .63}, {.50, .86}, {.72, .63}, {.50, .46}}},
      // 9
      {{{.36, .84}, {.58, .72}, {.69, .48}, {.68, .26}, {.50, .16}, {.34, .26}, {.34, .42}, {.50, .50}, {.67, .42}}},
  };
  return g;
}

double dist_to_segment(P q, P a, P b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = q.x - a.x, wy = q.y - a.y;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0 ? (wx * vx + wy * vy) / vv : 0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = q.x - (a.x + t * vx), dy = q.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void render_digit(uint8_t* out28x28, int digit, Rng& rng) {
  const double angle = rng.uniform(-0.22, 0.22);
  const double sc = rng.uniform(0.85, 1.18);
  const double dx = rng.uniform(-2.2, 2.2) / 28.0;
  const double dy = rng.uniform(-2.2, 2.2) / 28.0;
  const double width = rng.uniform(0.10, 0.14);
  const double amp = rng.uniform(0.90, 1.0);
  const double ca = std::cos(-angle), sa = std::sin(-angle);
  const auto& strokes = glyphs()[static_cast<size_t>(digit)];

  for (int py = 0; py < 28; ++py) {
    for (int px = 0; px < 28; ++px) {
      const double u = (px + 0.5) / 28.0 - 0.5 - dx;
      const double v = (py + 0.5) / 28.0 - 0.5 - dy;
      // inverse of (rotate by angle, scale by sc, translate) about the center
      const P q{(ca * u - sa * v) / sc + 0.5, (sa * u + ca * v) / sc + 0.5};
      double d = 1e9;
      for (const Stroke& s : strokes) {
        for (size_t i = 0; i + 1 < s.size(); ++i) {
          d = std::min(d, dist_to_segment(q, s[i], s[i + 1]));
        }
      }
      double intensity = amp * std::max(0.0, 1.0 - d / width);
      intensity += rng.uniform(0.0, 0.06);
      out28x28[py * 28 + px] =
          static_cast<uint8_t>(std::lround(std::clamp(intensity, 0.0, 1.0) * 255.0));
    }
  }
}

void generate(int64_t n, uint64_t seed, const std::string& split_tag,
              std::vector<uint8_t>& pixels, std::vector<uint8_t>& labels) {
  pixels.resize(static_cast<size_t>(n) * 784);
  labels.resize(static_cast<size_t>(n));
  Rng label_rng(derive_seed(seed, "synth-labels-" + split_tag));
  Rng jitter_rng(derive_seed(seed, "synth-jitter-" + split_tag));
  for (int64_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(label_rng.below(10));
    labels[static_cast<size_t>(i)] = static_cast<uint8_t>(digit);
    render_digit(pixels.data() + i * 784, digit, jitter_rng);
  }
}

void write_be32(std::ofstream& out, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_pair(const std::string& images_path, const std::string& labels_path,
                    const std::vector<uint8_t>& pixels, const std::vector<uint8_t>& labels) {
  {
    std::ofstream out(images_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + images_path);
    write_be32(out, 0x00000803);
    write_be32(out, static_cast<uint32_t>(labels.size()));
    write_be32(out, 28);
    write_be32(out, 28);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("failed writing " + images_path);
  }
  {
    std::ofstream out(labels_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + labels_path);
    write_be32(out, 0x00000801);
    write_be32(out, static_cast<uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw IoError("failed writing " + labels_path);
  }
}

}  // namespace

void write_synth_idx_corpus(const std::string& root, int64_t train_n, int64_t test_n,
                            uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::vector<uint8_t> pixels, labels;
  generate(train_n, seed, "train", pixels, labels);
  write_idx_pair((fs::path(root) / "train-images-idx3-ubyte").string(),
                 (fs::path(root) / "train-labels-idx1-ubyte").string(), pixels, labels);
  generate(test_n, seed, "test", pixels, labels);
  write_idx_pair((fs::path(root) / "t10k-images-idx3-ubyte").string(),
                 (fs::path(root) / "t10k-labels-idx1-ubyte").string(), pixels, labels);
}

LabeledDataset synth_dataset(int64_t n, uint64_t seed, const std::string& split_tag) {
  std::vector<uint8_t> pixels, labels;
  generate(n, seed, split_tag, pixels, labels);
  LabeledDataset ds;
  ds.kind = DatasetKind::MNIST;
  ds.labels.assign(labels.begin(), labels.end());
  ds.pristine_labels = ds.labels;
  ds.corrupted_mask.assign(static_cast<size_t>(n), 0);
  std::vector<real> vals(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) vals[i] = real(pixels[i]) / real(255);
  ds.images = Tensor::from({n, 1, 28, 28}, std::move(vals));
  return ds;
}

}  // namespace al2
