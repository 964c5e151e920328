#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace vrfuse::eval {

/// Square count matrix; entry (i, j) counts samples of true class i
/// predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 5);

  int classes() const { return n_; }
  std::int64_t& at(int truth, int predicted) { return counts_.at(static_cast<std::size_t>(truth) * n_ + predicted); }
  std::int64_t at(int truth, int predicted) const {
    return counts_.at(static_cast<std::size_t>(truth) * n_ + predicted);
  }
  std::int64_t row_sum(int truth) const;
  std::int64_t column_sum(int predicted) const;
  std::int64_t trace() const;
  std::int64_t total() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions, int classes = 5);

struct ClassMetrics {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double fpr = 0;
};

struct Averaged {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct Scalars {
  double accuracy = 0;
  std::vector<ClassMetrics> per_class;
  Averaged macro;
  Averaged micro;
  Averaged weighted;
};

/// One-vs-rest counts per class. Undefined ratios (0/0) are reported as 0.
Scalars metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;
};
using RocCurve = std::vector<RocPoint>;

/// Sweeps thresholds over the unique scores in descending order; a sample is
/// called positive when its score is >= the threshold. The first point is
/// (0, 0) at threshold +inf.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> positive);

/// Trapezoidal area under the curve.
double auc(const RocCurve& curve);

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> row);

struct MetricsReport {
  // Headline numbers: macro averages, macro one-vs-rest AUC.
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double auc = 0;
  Scalars scalars;
  ConfusionMatrix confusion;
  std::vector<RocCurve> per_class_roc;
  std::vector<double> per_class_auc;
  std::vector<std::string> labels;
};

/// `probabilities` is row-major samples x classes.
MetricsReport evaluate_scores(std::span<const double> probabilities, std::span<const int> labels,
                              const std::vector<std::string>& class_names);

/// Writes metrics.csv, per_class.csv, confusion.csv and roc_<class>.csv into `dir`.
void write_report(const MetricsReport& report, const std::filesystem::path& dir);

/// Reads back the (metric, value) rows of metrics.csv.
std::vector<std::pair<std::string, double>> read_metrics_csv(const std::filesystem::path& file);

}  // namespace vrfuse::eval
