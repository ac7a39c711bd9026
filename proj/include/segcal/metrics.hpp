#ifndef SEGCAL_METRICS_HPP
#define SEGCAL_METRICS_HPP

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "segcal/core_types.hpp"

namespace segcal {

/// Streaming confusion matrix. Rows are ground truth, columns predictions.
/// Counts are exact 64-bit integers; merge is entrywise addition, so a
/// dataset may be accumulated in any image order or via merged partials.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // c*c, row-major
  std::int64_t total = 0;

  static ConfusionMatrix zeros(int classes);

  std::int64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * classes + pred];
  }
  std::int64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * classes + pred];
  }
  std::int64_t row_sum(int k) const;
  std::int64_t col_sum(int k) const;
  std::int64_t trace() const;

  void merge(const ConfusionMatrix& other);
};

struct MetricReport {
  std::vector<double> per_class_iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  /// Class observed in ground truth or prediction at least once.
  std::vector<bool> per_class_presence;
};

void accumulate(ConfusionMatrix& cm, const LabelMask& gt, const PredMask& pred);
void accumulate(ConfusionMatrix& cm, const LabelMask& gt, const LabelMask& pred);

/// Intersection-over-union for class k, with 0/0 = 1 for classes absent from
/// both ground truth and prediction.
double iou(const ConfusionMatrix& cm, int k);

/// Full report. The mean IoU averages over all c classes (absent classes
/// contribute 1 via the 0/0 convention); `exclude_absent` restricts the mean
/// to classes that were observed or predicted at least once.
MetricReport report(const ConfusionMatrix& cm, bool exclude_absent = false);

/// CSV: one "class,<k>,iou,<v>" row per class plus miou / pixel_accuracy
/// summary rows.
void write_metric_csv(const MetricReport& report, std::ostream& out);

}  // namespace segcal

#endif  // SEGCAL_METRICS_HPP
