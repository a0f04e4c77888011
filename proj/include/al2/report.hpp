#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "al2/analysis.hpp"
#include "al2/trainer.hpp"

namespace al2 {

// metrics.csv. Header "epoch,ta,loss_c,loss_r,lambda,wall_time"; one row per
// record. Fixed formats (ta %.6f, losses and lambda %.12g, wall %.3f) so two
// deterministic runs produce byte-identical files.
std::string format_metrics_csv(const std::vector<MetricRecord>& records);
void write_metrics_csv(const std::string& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metrics_csv(const std::string& path);

// cca_trajectory.csv: "epoch,dim,rho", dim 1-based in descending-rho order.
struct CcaTrajectoryRow {
  int64_t epoch = 0;
  int dim = 0;
  double rho = 0;
};
void write_cca_csv(const std::string& path, const std::vector<CcaTrajectoryRow>& rows);
std::vector<CcaTrajectoryRow> read_cca_csv(const std::string& path);

// ablation_<epoch>.csv: "rate,accuracy,auc"; auc repeats the curve-level value
// on every row so a single row is self-describing.
std::string ablation_csv_name(int64_t epoch);  // "ablation_000025.csv"
void write_ablation_csv(const std::string& path, const AblationCurve& curve);
AblationCurve read_ablation_csv(const std::string& path);

// One finished run directory: config.echo plus metrics.csv.
struct RunSummary {
  std::string dir;
  RegularizerKind regularizer = RegularizerKind::Bare;
  bool al2 = false;
  int64_t final_epoch = 0;
  double final_ta = 0;
  double peak_ta = 0;
  double final_loss_c = 0;
  double final_loss_r = 0;
};
RunSummary summarize_run(const std::string& run_dir);

// Final test accuracy and representation loss per regularizer, paired
// without/with the activation penalty. The with-penalty loss column is scaled
// by 100 (the header says so) because those values otherwise print as dust.
std::string render_memorization_table(const std::vector<RunSummary>& runs);
std::string render_memorization_csv(const std::vector<RunSummary>& runs);

struct AucRow {
  RegularizerKind regularizer = RegularizerKind::Bare;
  bool al2 = false;
  int64_t epoch = 0;
  double auc = 0;
};
std::string render_auc_table(const std::vector<AucRow>& rows);
std::string render_auc_csv(const std::vector<AucRow>& rows);

// Self-contained SVG: one polyline of correlation-vs-rank per epoch, opacity
// ramping from faint (earliest) to solid (latest).
struct CcaCurve {
  int64_t epoch = 0;
  std::vector<double> rho;
};
std::string render_cca_svg(const std::vector<CcaCurve>& curves);
void write_cca_svg(const std::string& path, const std::vector<CcaCurve>& curves);

}  // namespace al2
