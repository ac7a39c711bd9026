#ifndef SEGCAL_EXPERIMENT_HPP
#define SEGCAL_EXPERIMENT_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "segcal/bounds.hpp"
#include "segcal/synth.hpp"
#include "segcal/trainer.hpp"

namespace segcal {

inline constexpr const char* kVersion = "0.1.0";

/// One learning objective: a baseline, the margin-calibrated loss, or a
/// 50/50-style combination of mc with a region loss.
struct LossSpec {
  std::string kind;  // ce|focal|dice|tversky|lovasz|mc|mc+dice|mc+tversky
  BaselineParams params;
  double combine_weight = 0.5;  // weight of mc in mc+<other>
};

/// Builds the loss object; mc variants calibrate offsets from `stats` (the
/// training-split label distribution) with `calib`.
std::unique_ptr<Loss> make_loss(const LossSpec& spec, const ClassStats* stats,
                                const CalibConfig& calib);

/// Encodes the comparison protocol: train every (loss, seed) cell on the
/// same data and report test-set metrics.
struct ExperimentSpec {
  SynthSpec synth;
  bool use_synth = true;
  std::filesystem::path manifest_train;
  std::filesystem::path manifest_val;
  std::filesystem::path manifest_test;
  int train_images = 0;  // synth split sizes; must sum to synth.images
  int val_images = 0;
  int test_images = 0;
  std::vector<LossSpec> losses;
  TrainConfig train_config;
  CalibConfig calib;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir;

  void validate() const;
};

/// The three splits an experiment runs on, plus training-split label stats.
struct ExperimentData {
  DataSplit train;
  DataSplit val;
  DataSplit test;
  ClassStats stats;
};

ExperimentData load_experiment_data(const ExperimentSpec& spec);
DataSplit load_split(const DatasetManifest& manifest);

struct CompareCell {
  std::string loss;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricReport test_report;
};

struct CompareAggregate {
  std::string loss;
  int cells_ok = 0;
  double mean_miou = 0.0;
  double min_miou = 0.0;
  double max_miou = 0.0;
  double stddev_miou = 0.0;
  double mean_pixel_accuracy = 0.0;
};

struct CompareReport {
  std::vector<CompareCell> cells;
  std::vector<CompareAggregate> aggregates;
};

/// Trains each (loss, seed) cell and evaluates the test-set global confusion
/// matrix. Training aborts are recorded in the cell; the run continues.
CompareReport run_compare(const ExperimentSpec& spec, const ExperimentData& data);
CompareReport run_compare(const ExperimentSpec& spec);

struct GapCurve {
  std::string loss;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  TrainLog log;
  /// |val - train| / train of the final epoch's loss.
  double final_normalized_gap = 0.0;
};

struct GapReport {
  std::vector<GapCurve> curves;
};

/// Fig-2-style study: trains the spec's losses from scratch (warm-up forced
/// to zero) and reports per-epoch train/val curves plus normalized gaps.
GapReport run_gap(const ExperimentSpec& spec, const ExperimentData& data);
GapReport run_gap(const ExperimentSpec& spec);

double normalized_gap(double train_loss, double val_loss);

/// stats -> offsets -> epsilon bound -> optimality check; the full audit.
struct BoundRun {
  MarginOffsets offsets;
  BoundReport report;
  OptimalityVerdict verdict;
};

BoundRun run_bound(const ClassStats& stats, const CalibConfig& calib,
                   const BoundConfig& bc, int trials);

// Report files. Every writer starts with '#' header lines carrying the
// toolkit version and the full configuration, so a report is reproducible
// from its own content.
void write_run_header(std::ostream& out, const std::string& command,
                      const std::vector<std::pair<std::string, std::string>>& config);
void write_compare_csv(const CompareReport& report, std::ostream& out);
void write_gap_csv(const GapReport& report, std::ostream& out);

/// Minimal SVG polyline chart; one series per (name, y-values) pair with the
/// x axis enumerating 1..N.
struct ChartSeries {
  std::string name;
  std::vector<double> values;
};

void write_svg_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<ChartSeries>& series);

}  // namespace segcal

#endif  // SEGCAL_EXPERIMENT_HPP
