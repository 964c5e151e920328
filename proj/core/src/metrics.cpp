#include "vrfuse/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vrfuse/error.hpp"

namespace vrfuse::eval {

namespace fs = std::filesystem;

namespace {

double ratio(double num, double den) { return den == 0 ? 0.0 : num / den; }

double harmonic(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }

}  // namespace

ConfusionMatrix::ConfusionMatrix(int classes) : n_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
  if (classes < 1) throw ValidationError("confusion matrix needs at least one class");
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int j = 0; j < n_; ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::column_sum(int predicted) const {
  std::int64_t s = 0;
  for (int i = 0; i < n_; ++i) s += at(i, predicted);
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (int i = 0; i < n_; ++i) s += at(i, i);
  return s;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions, int classes) {
  if (labels.size() != predictions.size()) {
    throw ValidationError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                          std::to_string(predictions.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || t >= classes || p < 0 || p >= classes) {
      throw ValidationError("confusion: class index out of range at sample " + std::to_string(i));
    }
    ++cm.at(t, p);
  }
  return cm;
}

Scalars metrics(const ConfusionMatrix& cm) {
  const int n = cm.classes();
  const std::int64_t total = cm.total();
  Scalars s;
  s.accuracy = ratio(static_cast<double>(cm.trace()), static_cast<double>(total));
  std::int64_t tp_sum = 0, fp_sum = 0, fn_sum = 0;
  for (int c = 0; c < n; ++c) {
    ClassMetrics m;
    m.tp = cm.at(c, c);
    m.fn = cm.row_sum(c) - m.tp;
    m.fp = cm.column_sum(c) - m.tp;
    m.tn = total - m.tp - m.fn - m.fp;
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = harmonic(m.precision, m.recall);
    m.fpr = ratio(m.fp, m.fp + m.tn);
    tp_sum += m.tp;
    fp_sum += m.fp;
    fn_sum += m.fn;
    const double support = static_cast<double>(cm.row_sum(c));
    s.macro.precision += m.precision / n;
    s.macro.recall += m.recall / n;
    s.macro.f1 += m.f1 / n;
    s.weighted.precision += m.precision * ratio(support, total);
    s.weighted.recall += m.recall * ratio(support, total);
    s.weighted.f1 += m.f1 * ratio(support, total);
    s.per_class.push_back(m);
  }
  s.micro.precision = ratio(tp_sum, tp_sum + fp_sum);
  s.micro.recall = ratio(tp_sum, tp_sum + fn_sum);
  s.micro.f1 = harmonic(s.micro.precision, s.micro.recall);
  return s;
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw ValidationError("roc_curve: scores and labels differ in length");
  std::size_t pos = 0;
  for (int p : positive) pos += p != 0;
  const std::size_t neg = positive.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("roc_curve: labels must contain both positives and negatives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (positive[order[i]] != 0 ? tp : fp)++;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, threshold});
  }
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2;
  }
  return area;
}

int argmax(std::span<const double> row) {
  if (row.empty()) throw ValidationError("argmax of an empty row");
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

MetricsReport evaluate_scores(std::span<const double> probabilities, std::span<const int> labels,
                              const std::vector<std::string>& class_names) {
  const int n = static_cast<int>(class_names.size());
  if (labels.empty()) throw ValidationError("evaluate: no samples");
  if (probabilities.size() != labels.size() * n) throw ValidationError("evaluate: score matrix shape mismatch");
  std::vector<int> predicted(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) predicted[i] = argmax(probabilities.subspan(i * n, n));

  MetricsReport r;
  r.labels = class_names;
  r.confusion = confusion(labels, predicted, n);
  r.scalars = metrics(r.confusion);
  r.accuracy = r.scalars.accuracy;
  r.precision = r.scalars.macro.precision;
  r.recall = r.scalars.macro.recall;
  r.f1 = r.scalars.macro.f1;

  std::vector<double> column(labels.size());
  std::vector<int> positive(labels.size());
  int scored = 0;
  for (int c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      column[i] = probabilities[i * n + c];
      positive[i] = labels[i] == c;
    }
    const bool both = std::count(positive.begin(), positive.end(), 1) > 0 &&
                      std::count(positive.begin(), positive.end(), 0) > 0;
    if (!both) {
      // A class absent from the split has no ROC curve.
      r.per_class_roc.emplace_back();
      r.per_class_auc.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    r.per_class_roc.push_back(roc_curve(column, positive));
    r.per_class_auc.push_back(auc(r.per_class_roc.back()));
    r.auc += r.per_class_auc.back();
    ++scored;
  }
  r.auc = scored ? r.auc / scored : 0.0;
  return r;
}

void write_report(const MetricsReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream os(dir / name);
    if (!os) throw Error("cannot write " + (dir / name).string());
    os.precision(12);
    return os;
  };
  {
    auto os = open("metrics.csv");
    os << "metric,value\n";
    os << "accuracy," << r.accuracy << "\n";
    os << "precision_macro," << r.precision << "\n";
    os << "recall_macro," << r.recall << "\n";
    os << "f1_macro," << r.f1 << "\n";
    os << "auc_macro," << r.auc << "\n";
    os << "precision_micro," << r.scalars.micro.precision << "\n";
    os << "recall_micro," << r.scalars.micro.recall << "\n";
    os << "f1_micro," << r.scalars.micro.f1 << "\n";
    os << "precision_weighted," << r.scalars.weighted.precision << "\n";
    os << "recall_weighted," << r.scalars.weighted.recall << "\n";
    os << "f1_weighted," << r.scalars.weighted.f1 << "\n";
    os << "samples," << r.confusion.total() << "\n";
  }
  {
    auto os = open("per_class.csv");
    os << "class,support,tp,fp,fn,tn,precision,recall,f1,fpr,auc\n";
    for (std::size_t c = 0; c < r.labels.size(); ++c) {
      const auto& m = r.scalars.per_class[c];
      os << r.labels[c] << "," << r.confusion.row_sum(static_cast<int>(c)) << "," << m.tp << "," << m.fp << ","
         << m.fn << "," << m.tn << "," << m.precision << "," << m.recall << "," << m.f1 << "," << m.fpr << ","
         << r.per_class_auc[c] << "\n";
    }
  }
  {
    auto os = open("confusion.csv");
    os << "true\\pred";
    for (const auto& l : r.labels) os << "," << l;
    os << "\n";
    for (int i = 0; i < r.confusion.classes(); ++i) {
      os << r.labels[i];
      for (int j = 0; j < r.confusion.classes(); ++j) os << "," << r.confusion.at(i, j);
      os << "\n";
    }
  }
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    auto os = open("roc_" + r.labels[c] + ".csv");
    os << "fpr,tpr,threshold\n";
    for (const auto& p : r.per_class_roc[c]) os << p.fpr << "," << p.tpr << "," << p.threshold << "\n";
  }
}

std::vector<std::pair<std::string, double>> read_metrics_csv(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw Error("cannot open " + file.string());
  std::vector<std::pair<std::string, double>> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    out.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
  }
  return out;
}

}  // namespace vrfuse::eval
