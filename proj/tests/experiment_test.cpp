#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "segcal/experiment.hpp"
#include "test_support.hpp"

using namespace segcal;

namespace {

ExperimentSpec tiny_experiment() {
  ExperimentSpec spec;
  spec.synth.seed = 404;
  spec.synth.images = 20;
  spec.synth.height = 8;
  spec.synth.width = 8;
  spec.synth.classes = 3;
  spec.synth.target_frequencies = {0.7, 0.2, 0.1};
  spec.synth.noise_sigma = 0.4;
  spec.synth.feature_channels = 4;
  spec.train_images = 12;
  spec.val_images = 4;
  spec.test_images = 4;
  spec.train_config.learning_rate = 0.01;
  spec.train_config.epochs = 4;
  spec.train_config.warmup_epochs = 1;
  spec.train_config.batch_images = 4;
  spec.seeds = {1, 2};
  spec.losses = {LossSpec{"ce", {}, 0.5}, LossSpec{"mc", {}, 0.5}};
  return spec;
}

}  // namespace

TEST_CASE("make_loss covers every kind and rejects unknowns") {
  const ClassStats stats = ClassStats::from_counts({700, 200, 100}, 64);
  const CalibConfig calib{10.0, 1.0};
  for (const char* kind : {"ce", "focal", "dice", "tversky", "lovasz", "mc",
                           "mc+dice", "mc+tversky"}) {
    const auto loss = make_loss(LossSpec{kind, {}, 0.5}, &stats, calib);
    CHECK(loss != nullptr);
  }
  CHECK(make_loss(LossSpec{"mc+dice", {}, 0.5}, &stats, calib)->name() ==
        "mc+dice");
  CHECK_THROWS_AS(make_loss(LossSpec{"nope", {}, 0.5}, &stats, calib), Error);
  CHECK_THROWS_AS(make_loss(LossSpec{"mc", {}, 0.5}, nullptr, calib), Error);
}

TEST_CASE("experiment spec validation") {
  ExperimentSpec spec = tiny_experiment();
  spec.losses.clear();
  CHECK_THROWS_AS(spec.validate(), Error);

  spec = tiny_experiment();
  spec.seeds.clear();
  CHECK_THROWS_AS(spec.validate(), Error);

  spec = tiny_experiment();
  spec.test_images = 5;  // no longer sums to images
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("run_compare produces one cell per (loss, seed) deterministically") {
  const ExperimentSpec spec = tiny_experiment();
  const ExperimentData data = load_experiment_data(spec);
  CHECK(data.train.images() == 12);
  CHECK(data.stats.total == 12 * 64);

  const CompareReport report = run_compare(spec, data);
  REQUIRE(report.cells.size() == 4);
  REQUIRE(report.aggregates.size() == 2);
  for (const CompareCell& cell : report.cells) {
    CHECK(cell.ok);
    CHECK(cell.test_report.miou >= 0.0);
    CHECK(cell.test_report.miou <= 1.0);
  }
  CHECK(report.aggregates[0].cells_ok == 2);
  CHECK(report.aggregates[0].min_miou <= report.aggregates[0].mean_miou);
  CHECK(report.aggregates[0].mean_miou <= report.aggregates[0].max_miou);

  // identical loss entries with identical seeds give identical rows
  ExperimentSpec twice = spec;
  twice.losses = {LossSpec{"ce", {}, 0.5}, LossSpec{"ce", {}, 0.5}};
  const CompareReport dup = run_compare(twice, data);
  REQUIRE(dup.cells.size() == 4);
  CHECK(dup.cells[0].test_report.miou == dup.cells[2].test_report.miou);
  CHECK(dup.cells[1].test_report.miou == dup.cells[3].test_report.miou);

  // a single cell equals a direct trainer + metrics invocation
  ExperimentSpec single = spec;
  single.losses = {LossSpec{"ce", {}, 0.5}};
  single.seeds = {1};
  const CompareReport one = run_compare(single, data);
  TrainConfig cfg = spec.train_config;
  cfg.seed = 1;
  const auto ce = make_ce_loss();
  const TrainResult direct = train(data.train, data.val, cfg, *ce);
  const MetricReport direct_report =
      segcal::report(evaluate(direct.model, data.test));
  CHECK(one.cells[0].test_report.miou == direct_report.miou);
}

TEST_CASE("run_compare records failing cells and keeps going") {
  ExperimentSpec spec = tiny_experiment();
  // an upsilon below the admissible threshold for the dominant class makes
  // calibration fail inside the cell
  spec.calib.upsilon = 1e-6;
  spec.losses = {LossSpec{"mc", {}, 0.5}, LossSpec{"ce", {}, 0.5}};
  const ExperimentData data = load_experiment_data(spec);
  const CompareReport report = run_compare(spec, data);
  REQUIRE(report.cells.size() == 4);
  CHECK_FALSE(report.cells[0].ok);
  CHECK(report.cells[0].error.find("upsilon") != std::string::npos);
  CHECK(report.cells[2].ok);  // ce cells unaffected
  CHECK(report.aggregates[0].cells_ok == 0);
  CHECK(report.aggregates[1].cells_ok == 2);
}

TEST_CASE("run_gap emits one row per epoch and small gaps on easy data") {
  ExperimentSpec spec = tiny_experiment();
  spec.synth.noise_sigma = 0.0;
  spec.seeds = {1};
  const GapReport report = run_gap(spec);
  REQUIRE(report.curves.size() == 2);
  for (const GapCurve& curve : report.curves) {
    REQUIRE(curve.ok);
    CHECK(curve.log.records.size() ==
          static_cast<std::size_t>(spec.train_config.epochs));
    CHECK(curve.final_normalized_gap >= 0.0);
  }

  std::ostringstream out;
  write_gap_csv(report, out);
  const std::string csv = out.str();
  // header + epochs rows per curve
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        1 + 2 * spec.train_config.epochs);
}

TEST_CASE("run_bound composes calibration, epsilon and the optimality check") {
  const ClassStats balanced = ClassStats::from_counts({5000, 5000}, 100);
  BoundConfig bc;
  bc.F = 1.0;
  bc.eta = 0.05;
  bc.m = 100;
  bc.classes = 2;
  const BoundRun run = run_bound(balanced, CalibConfig{10.0, 1.0}, bc, 50);
  CHECK(run.offsets.rho_0k[0] == doctest::Approx(run.offsets.rho_0k[1]));
  CHECK(run.verdict.optimal);
  CHECK_FALSE(run.report.vacuous);

  const ClassStats imb = ClassStats::from_counts({90, 10}, 100);
  const BoundRun ratio_run = run_bound(imb, CalibConfig{10.0, 1.0}, bc, 0);
  CHECK(ratio_run.offsets.rho_0k[0] / ratio_run.offsets.rho_0k[1] ==
        doctest::Approx(1.0 / 27.0).epsilon(1e-12));

  BoundConfig huge;
  huge.F = 1e12;
  huge.eta = 0.05;
  huge.m = 100;
  huge.classes = 2;
  const BoundRun vac = run_bound(balanced, CalibConfig{10.0, 1.0}, huge, 0);
  CHECK(vac.report.vacuous);
}

TEST_CASE("csv writers prepend self-describing headers") {
  std::ostringstream out;
  write_run_header(out, "segcal compare --synth-spec spec.json",
                   {{"seeds", "1,2,3"}, {"losses", "ce,mc"}});
  const std::string text = out.str();
  CHECK(text.find("# segcal") == 0);
  CHECK(text.find("# command: segcal compare") != std::string::npos);
  CHECK(text.find("# seeds: 1,2,3") != std::string::npos);

  CompareReport report;
  CompareCell cell;
  cell.loss = "ce";
  cell.seed = 1;
  cell.ok = true;
  cell.test_report.miou = 0.5;
  cell.test_report.pixel_accuracy = 0.75;
  cell.test_report.per_class_iou = {0.25, 0.75};
  report.cells.push_back(cell);
  report.aggregates.push_back({"ce", 1, 0.5, 0.5, 0.5, 0.0, 0.75});
  std::ostringstream csv;
  write_compare_csv(report, csv);
  CHECK(csv.str().find("cell,ce,1,1,0.5,0.75,0.25;0.75") != std::string::npos);
  CHECK(csv.str().find("aggregate,ce,1,0.5") != std::string::npos);
}

TEST_CASE("svg charts are written with polylines per series") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "segcal_chart.svg";
  write_svg_chart(path, "losses",
                  {{"train", {1.0, 0.8, 0.6, 0.5}}, {"val", {1.1, 0.9, 0.7, 0.65}}});
  std::ifstream in(path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string svg = buffer.str();
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 5);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("train") != std::string::npos);
  CHECK(svg.find("val") != std::string::npos);
}
