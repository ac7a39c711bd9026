#include "segcal/metrics.hpp"

#include <numeric>
#include <ostream>

namespace segcal {

ConfusionMatrix ConfusionMatrix::zeros(int classes) {
  if (classes < 2) {
    throw Error(Errc::config_error, "confusion matrix needs >= 2 classes");
  }
  ConfusionMatrix cm;
  cm.classes = classes;
  cm.counts.assign(static_cast<std::size_t>(classes) * classes, 0);
  return cm;
}

std::int64_t ConfusionMatrix::row_sum(int k) const {
  std::int64_t sum = 0;
  for (int j = 0; j < classes; ++j) sum += at(k, j);
  return sum;
}

std::int64_t ConfusionMatrix::col_sum(int k) const {
  std::int64_t sum = 0;
  for (int i = 0; i < classes; ++i) sum += at(i, k);
  return sum;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t sum = 0;
  for (int k = 0; k < classes; ++k) sum += at(k, k);
  return sum;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes != classes) {
    throw Error(Errc::shape_mismatch, "cannot merge matrices of different c");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total += other.total;
}

namespace {

void accumulate_indices(ConfusionMatrix& cm, int pixels,
                        const std::uint8_t* gt, const std::uint8_t* pred) {
  for (int i = 0; i < pixels; ++i) {
    ++cm.at(gt[i], pred[i]);
  }
  cm.total += pixels;
}

}  // namespace

void accumulate(ConfusionMatrix& cm, const LabelMask& gt, const PredMask& pred) {
  if (gt.height != pred.height || gt.width != pred.width ||
      gt.classes != pred.classes || cm.classes != gt.classes) {
    throw Error(Errc::shape_mismatch, "gt/pred/matrix shapes disagree");
  }
  accumulate_indices(cm, gt.pixels(), gt.data.data(), pred.data.data());
}

void accumulate(ConfusionMatrix& cm, const LabelMask& gt, const LabelMask& pred) {
  if (gt.height != pred.height || gt.width != pred.width ||
      gt.classes != pred.classes || cm.classes != gt.classes) {
    throw Error(Errc::shape_mismatch, "gt/pred/matrix shapes disagree");
  }
  accumulate_indices(cm, gt.pixels(), gt.data.data(), pred.data.data());
}

double iou(const ConfusionMatrix& cm, int k) {
  if (k < 0 || k >= cm.classes) {
    throw Error(Errc::out_of_range_class, "iou class index out of range");
  }
  const std::int64_t intersection = cm.at(k, k);
  const std::int64_t uni = cm.row_sum(k) + cm.col_sum(k) - intersection;
  if (uni == 0) return 1.0;  // 0/0 = 1 for a class absent on both sides
  return static_cast<double>(intersection) / static_cast<double>(uni);
}

MetricReport report(const ConfusionMatrix& cm, bool exclude_absent) {
  if (cm.total <= 0) {
    throw Error(Errc::config_error, "metric report of empty confusion matrix");
  }
  MetricReport r;
  r.per_class_iou.resize(cm.classes);
  r.per_class_presence.resize(cm.classes);
  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < cm.classes; ++k) {
    r.per_class_iou[k] = iou(cm, k);
    bool present = cm.row_sum(k) + cm.col_sum(k) > 0;
    r.per_class_presence[k] = present;
    if (!exclude_absent || present) {
      sum += r.per_class_iou[k];
      ++counted;
    }
  }
  r.miou = counted > 0 ? sum / counted : 1.0;
  r.pixel_accuracy =
      static_cast<double>(cm.trace()) / static_cast<double>(cm.total);
  return r;
}

void write_metric_csv(const MetricReport& report, std::ostream& out) {
  out << "row,class,value\n";
  for (std::size_t k = 0; k < report.per_class_iou.size(); ++k) {
    out << "class," << k << ',' << report.per_class_iou[k] << '\n';
  }
  out << "miou,," << report.miou << '\n';
  out << "pixel_accuracy,," << report.pixel_accuracy << '\n';
}

}  // namespace segcal
