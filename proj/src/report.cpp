#include "al2/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "al2/config.hpp"
#include "al2/errors.hpp"

namespace fs = std::filesystem;

namespace al2 {
namespace {

constexpr const char* kMetricsHeader = "epoch,ta,loss_c,loss_r,lambda,wall_time";

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << body;
  if (!out) throw IoError("short write on " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

double field_f64(const std::string& s, const std::string& path, int line_no) {
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != s.size()) {
    throw IoError(path + " line " + std::to_string(line_no) + ": bad numeric field '" + s + "'");
  }
  return v;
}

int64_t field_i64(const std::string& s, const std::string& path, int line_no) {
  size_t used = 0;
  int64_t v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != s.size()) {
    throw IoError(path + " line " + std::to_string(line_no) + ": bad integer field '" + s + "'");
  }
  return v;
}

// Lines of a CSV body after validating the exact header; strips a trailing
// blank line, keeps 1-based line numbers aligned with the file.
std::vector<std::pair<int, std::string>> csv_rows(const std::string& path,
                                                  const char* expected_header) {
  std::stringstream ss(read_text_file(path));
  std::string line;
  if (!std::getline(ss, line) || line != expected_header) {
    throw IoError(path + ": expected header '" + std::string(expected_header) + "'");
  }
  std::vector<std::pair<int, std::string>> rows;
  int line_no = 1;
  while (std::getline(ss, line)) {
    ++line_no;
    if (line.empty()) continue;
    rows.emplace_back(line_no, line);
  }
  return rows;
}

}  // namespace

std::string format_metrics_csv(const std::vector<MetricRecord>& records) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[256];
  for (const MetricRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.12g,%.12g,%.12g,%.3f\n",
                  static_cast<long long>(r.epoch), r.test_accuracy, r.train_loss_c,
                  r.train_loss_r, r.lambda, r.wall_time);
    out += buf;
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRecord>& records) {
  write_text_file(path, format_metrics_csv(records));
}

std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
  std::vector<MetricRecord> out;
  for (const auto& [line_no, line] : csv_rows(path, kMetricsHeader)) {
    const auto f = split(line, ',');
    if (f.size() != 6) {
      throw IoError(path + " line " + std::to_string(line_no) + ": expected 6 fields, got " +
                    std::to_string(f.size()));
    }
    MetricRecord r;
    r.epoch = field_i64(f[0], path, line_no);
    r.test_accuracy = field_f64(f[1], path, line_no);
    r.train_loss_c = field_f64(f[2], path, line_no);
    r.train_loss_r = field_f64(f[3], path, line_no);
    r.lambda = field_f64(f[4], path, line_no);
    r.wall_time = field_f64(f[5], path, line_no);
    out.push_back(r);
  }
  return out;
}

void write_cca_csv(const std::string& path, const std::vector<CcaTrajectoryRow>& rows) {
  std::string out = "epoch,dim,rho\n";
  char buf[96];
  for (const CcaTrajectoryRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.12g\n", static_cast<long long>(r.epoch), r.dim,
                  r.rho);
    out += buf;
  }
  write_text_file(path, out);
}

std::vector<CcaTrajectoryRow> read_cca_csv(const std::string& path) {
  std::vector<CcaTrajectoryRow> out;
  for (const auto& [line_no, line] : csv_rows(path, "epoch,dim,rho")) {
    const auto f = split(line, ',');
    if (f.size() != 3) {
      throw IoError(path + " line " + std::to_string(line_no) + ": expected 3 fields");
    }
    CcaTrajectoryRow r;
    r.epoch = field_i64(f[0], path, line_no);
    r.dim = static_cast<int>(field_i64(f[1], path, line_no));
    r.rho = field_f64(f[2], path, line_no);
    out.push_back(r);
  }
  return out;
}

std::string ablation_csv_name(int64_t epoch) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "ablation_%06lld.csv", static_cast<long long>(epoch));
  return buf;
}

void write_ablation_csv(const std::string& path, const AblationCurve& curve) {
  if (curve.rates.size() != curve.accuracy.size()) {
    throw std::invalid_argument("ablation curve rate/accuracy length mismatch");
  }
  std::string out = "rate,accuracy,auc\n";
  char buf[96];
  for (size_t i = 0; i < curve.rates.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.12g,%.12g\n", curve.rates[i], curve.accuracy[i],
                  curve.auc);
    out += buf;
  }
  write_text_file(path, out);
}

AblationCurve read_ablation_csv(const std::string& path) {
  AblationCurve curve;
  bool have_auc = false;
  for (const auto& [line_no, line] : csv_rows(path, "rate,accuracy,auc")) {
    const auto f = split(line, ',');
    if (f.size() != 3) {
      throw IoError(path + " line " + std::to_string(line_no) + ": expected 3 fields");
    }
    curve.rates.push_back(field_f64(f[0], path, line_no));
    curve.accuracy.push_back(field_f64(f[1], path, line_no));
    if (!have_auc) {
      curve.auc = field_f64(f[2], path, line_no);
      have_auc = true;
    }
  }
  return curve;
}

RunSummary summarize_run(const std::string& run_dir) {
  RunSummary s;
  s.dir = run_dir;
  const ExperimentConfig cfg = parse_config_file((fs::path(run_dir) / "config.echo").string());
  s.regularizer = cfg.train.regularizer.kind;
  s.al2 = cfg.train.al2_enabled;
  const auto metrics = read_metrics_csv((fs::path(run_dir) / "metrics.csv").string());
  if (metrics.empty()) throw IoError(run_dir + ": metrics.csv has no rows");
  const MetricRecord& last = metrics.back();
  s.final_epoch = last.epoch;
  s.final_ta = last.test_accuracy;
  s.final_loss_c = last.train_loss_c;
  s.final_loss_r = last.train_loss_r;
  s.peak_ta = 0;
  for (const MetricRecord& r : metrics) s.peak_ta = std::max(s.peak_ta, r.test_accuracy);
  return s;
}

namespace {

constexpr RegularizerKind kTableOrder[] = {RegularizerKind::Bare, RegularizerKind::BatchNorm,
                                           RegularizerKind::Dropout, RegularizerKind::WeightDecay};

struct Pair {
  const RunSummary* without = nullptr;
  const RunSummary* with = nullptr;
};

std::map<RegularizerKind, Pair> pair_runs(const std::vector<RunSummary>& runs) {
  std::map<RegularizerKind, Pair> grouped;
  for (const RunSummary& r : runs) {
    Pair& p = grouped[r.regularizer];
    (r.al2 ? p.with : p.without) = &r;  // last run wins on duplicates
  }
  return grouped;
}

std::string fmt_or_dash(const char* fmt, double v, bool present, int width) {
  char buf[64];
  if (present) {
    std::snprintf(buf, sizeof(buf), fmt, v);
  } else {
    std::snprintf(buf, sizeof(buf), "%*s", width, "-");
  }
  return buf;
}

}  // namespace

std::string render_memorization_table(const std::vector<RunSummary>& runs) {
  const auto grouped = pair_runs(runs);
  std::string out;
  out += "final test accuracy and representation loss, without vs with the penalty\n";
  out += "regularizer    ta_without      ta_with    lr_without  lr_with_x100\n";
  char buf[256];
  for (RegularizerKind k : kTableOrder) {
    auto it = grouped.find(k);
    if (it == grouped.end()) continue;
    const Pair& p = it->second;
    std::snprintf(buf, sizeof(buf), "%-12s", to_string(k));
    out += buf;
    out += fmt_or_dash(" %13.3f", p.without ? p.without->final_ta : 0, p.without != nullptr, 13);
    out += fmt_or_dash(" %12.3f", p.with ? p.with->final_ta : 0, p.with != nullptr, 12);
    out += fmt_or_dash(" %13.6f", p.without ? p.without->final_loss_r : 0, p.without != nullptr, 13);
    out += fmt_or_dash(" %13.6f", p.with ? p.with->final_loss_r * 100.0 : 0, p.with != nullptr, 13);
    out += "\n";
  }
  return out;
}

std::string render_memorization_csv(const std::vector<RunSummary>& runs) {
  const auto grouped = pair_runs(runs);
  std::string out = "regularizer,ta_without,ta_with,lr_without,lr_with_x100\n";
  char buf[64];
  for (RegularizerKind k : kTableOrder) {
    auto it = grouped.find(k);
    if (it == grouped.end()) continue;
    const Pair& p = it->second;
    out += to_string(k);
    auto field = [&](double v, bool present, const char* fmt) {
      out += ",";
      if (!present) return;
      std::snprintf(buf, sizeof(buf), fmt, v);
      out += buf;
    };
    field(p.without ? p.without->final_ta : 0, p.without != nullptr, "%.6f");
    field(p.with ? p.with->final_ta : 0, p.with != nullptr, "%.6f");
    field(p.without ? p.without->final_loss_r : 0, p.without != nullptr, "%.12g");
    field(p.with ? p.with->final_loss_r * 100.0 : 0, p.with != nullptr, "%.12g");
    out += "\n";
  }
  return out;
}

std::string render_auc_table(const std::vector<AucRow>& rows) {
  std::map<std::pair<int, int64_t>, std::pair<const AucRow*, const AucRow*>> grouped;
  for (const AucRow& r : rows) {
    auto& slot = grouped[{static_cast<int>(r.regularizer), r.epoch}];
    (r.al2 ? slot.second : slot.first) = &r;
  }
  std::string out;
  out += "ablation area under the accuracy curve, without vs with the penalty\n";
  out += "regularizer       epoch   auc_without      auc_with\n";
  char buf[160];
  for (const auto& [key, slot] : grouped) {
    std::snprintf(buf, sizeof(buf), "%-12s %10lld",
                  to_string(static_cast<RegularizerKind>(key.first)),
                  static_cast<long long>(key.second));
    out += buf;
    out += fmt_or_dash(" %13.4f", slot.first ? slot.first->auc : 0, slot.first != nullptr, 13);
    out += fmt_or_dash(" %13.4f", slot.second ? slot.second->auc : 0, slot.second != nullptr, 13);
    out += "\n";
  }
  return out;
}

std::string render_auc_csv(const std::vector<AucRow>& rows) {
  std::map<std::pair<int, int64_t>, std::pair<const AucRow*, const AucRow*>> grouped;
  for (const AucRow& r : rows) {
    auto& slot = grouped[{static_cast<int>(r.regularizer), r.epoch}];
    (r.al2 ? slot.second : slot.first) = &r;
  }
  std::string out = "regularizer,epoch,auc_without,auc_with\n";
  char buf[64];
  for (const auto& [key, slot] : grouped) {
    out += to_string(static_cast<RegularizerKind>(key.first));
    out += "," + std::to_string(key.second);
    auto field = [&](const AucRow* r) {
      out += ",";
      if (!r) return;
      std::snprintf(buf, sizeof(buf), "%.6f", r->auc);
      out += buf;
    };
    field(slot.first);
    field(slot.second);
    out += "\n";
  }
  return out;
}

std::string render_cca_svg(const std::vector<CcaCurve>& curves) {
  if (curves.empty()) throw std::invalid_argument("no correlation curves to plot");
  const size_t k = curves.front().rho.size();
  if (k < 2) throw std::invalid_argument("need at least 2 correlation values per curve");
  for (const CcaCurve& c : curves) {
    if (c.rho.size() != k) throw std::invalid_argument("correlation curves differ in length");
    for (double v : c.rho) {
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite correlation value");
    }
  }

  constexpr double W = 640, H = 420, L = 52, R = 620, T = 24, B = 372;
  auto xmap = [&](size_t i) { return L + (R - L) * static_cast<double>(i) / static_cast<double>(k - 1); };
  auto ymap = [&](double rho) {
    const double r = std::min(1.0, std::max(0.0, rho));
    return B - (B - T) * r;
  };

  char buf[256];
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 %.0f %.0f\" "
                "font-family=\"sans-serif\" font-size=\"11\">\n",
                W, H);
  s += buf;
  s += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"420\" fill=\"white\"/>\n";

  for (int tick = 0; tick <= 4; ++tick) {
    const double rho = tick / 4.0;
    const double y = ymap(rho);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#cccccc\" "
                  "stroke-width=\"0.5\"/>\n",
                  L, y, R, y);
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n", L - 6, y + 4,
                  rho);
    s += buf;
  }
  for (int tick = 0; tick <= 4; ++tick) {
    const size_t i = static_cast<size_t>(std::llround(tick / 4.0 * static_cast<double>(k - 1)));
    const double x = xmap(i);
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%zu</text>\n", x, B + 18,
                  i + 1);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", L, T,
                L, B);
  s += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", L, B,
                R, B);
  s += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">correlation rank</text>\n",
                (L + R) / 2, H - 10);
  s += buf;
  s += "<text x=\"14\" y=\"198\" text-anchor=\"middle\" transform=\"rotate(-90 14 198)\">"
       "canonical correlation</text>\n";

  const size_t n = curves.size();
  for (size_t ci = 0; ci < n; ++ci) {
    const double opacity = n == 1 ? 1.0 : 0.25 + 0.75 * static_cast<double>(ci) / static_cast<double>(n - 1);
    std::snprintf(buf, sizeof(buf),
                  "<polyline fill=\"none\" stroke=\"#20639b\" stroke-width=\"1.6\" "
                  "stroke-opacity=\"%.3f\" points=\"",
                  opacity);
    s += buf;
    for (size_t i = 0; i < k; ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "", xmap(i),
                    ymap(curves[ci].rho[i]));
      s += buf;
    }
    s += "\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" fill=\"#20639b\" fill-opacity=\"%.3f\">epoch "
                  "%lld</text>\n",
                  R - 80.0, T + 16.0 * static_cast<double>(ci + 1), opacity,
                  static_cast<long long>(curves[ci].epoch));
    s += buf;
  }
  s += "</svg>\n";
  return s;
}

void write_cca_svg(const std::string& path, const std::vector<CcaCurve>& curves) {
  write_text_file(path, render_cca_svg(curves));
}

}  // namespace al2
