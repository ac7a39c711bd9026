#include "segcal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace segcal {

std::unique_ptr<Loss> make_loss(const LossSpec& spec, const ClassStats* stats,
                                const CalibConfig& calib) {
  const BaselineParams& p = spec.params;
  if (spec.kind == "ce") return make_ce_loss(p.class_weights);
  if (spec.kind == "focal") return make_focal_loss(p.focal_gamma);
  if (spec.kind == "dice") return make_dice_loss(p.dice_smooth);
  if (spec.kind == "tversky") {
    return make_tversky_loss(p.tversky_alpha, p.tversky_beta, p.dice_smooth);
  }
  if (spec.kind == "lovasz") return make_lovasz_loss();

  if (spec.kind == "mc" || spec.kind == "mc+dice" || spec.kind == "mc+tversky") {
    if (stats == nullptr) {
      throw Error(Errc::config_error,
                  spec.kind + " needs label statistics for calibration");
    }
    auto mc = make_mc_loss(compute_offsets(*stats, calib));
    if (spec.kind == "mc") return mc;
    auto other = spec.kind == "mc+dice"
                     ? make_dice_loss(p.dice_smooth)
                     : make_tversky_loss(p.tversky_alpha, p.tversky_beta,
                                         p.dice_smooth);
    return combine(std::move(mc), std::move(other), spec.combine_weight);
  }
  throw Error(Errc::config_error, "unknown loss kind \"" + spec.kind + "\"");
}

void ExperimentSpec::validate() const {
  if (losses.empty()) {
    throw Error(Errc::config_error, "experiment needs >= 1 loss configuration");
  }
  if (seeds.empty()) {
    throw Error(Errc::config_error, "experiment needs >= 1 seed");
  }
  if (use_synth) {
    if (train_images <= 0 || val_images <= 0 || test_images <= 0 ||
        train_images + val_images + test_images != synth.images) {
      throw Error(Errc::config_error,
                  "synth split sizes must be positive and sum to the image count");
    }
  }
}

DataSplit load_split(const DatasetManifest& manifest) {
  DataSplit split;
  for (const auto& entry : manifest.entries) {
    split.features.push_back(load_scores(entry.scores_path));
    split.masks.push_back(load_mask(entry.mask_path, manifest.classes));
  }
  return split;
}

namespace {

DataSplit take(const SynthDataset& ds, int first, int count) {
  DataSplit split;
  split.features.assign(ds.features.begin() + first,
                        ds.features.begin() + first + count);
  split.masks.assign(ds.masks.begin() + first, ds.masks.begin() + first + count);
  return split;
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentData data;
  if (spec.use_synth) {
    const SynthDataset ds = generate(spec.synth);
    data.train = take(ds, 0, spec.train_images);
    data.val = take(ds, spec.train_images, spec.val_images);
    data.test = take(ds, spec.train_images + spec.val_images, spec.test_images);
  } else {
    data.train = load_split(load_manifest(spec.manifest_train));
    data.val = load_split(load_manifest(spec.manifest_val));
    data.test = load_split(load_manifest(spec.manifest_test));
  }
  data.stats = class_stats(std::span<const LabelMask>(data.train.masks),
                           data.train.masks.front().pixels());
  return data;
}

CompareReport run_compare(const ExperimentSpec& spec, const ExperimentData& data) {
  spec.validate();
  CompareReport report;
  for (const LossSpec& loss_spec : spec.losses) {
    std::vector<double> mious;
    std::vector<double> accs;
    for (std::uint64_t seed : spec.seeds) {
      CompareCell cell;
      cell.loss = loss_spec.kind;
      cell.seed = seed;
      try {
        const auto loss = make_loss(loss_spec, &data.stats, spec.calib);
        TrainConfig cfg = spec.train_config;
        cfg.seed = seed;
        const TrainResult trained = train(data.train, data.val, cfg, *loss);
        cell.test_report = segcal::report(evaluate(trained.model, data.test));
        cell.ok = true;
        mious.push_back(cell.test_report.miou);
        accs.push_back(cell.test_report.pixel_accuracy);
      } catch (const Error& e) {
        cell.error = e.what();
      }
      report.cells.push_back(std::move(cell));
    }

    CompareAggregate agg;
    agg.loss = loss_spec.kind;
    agg.cells_ok = static_cast<int>(mious.size());
    if (!mious.empty()) {
      double sum = 0.0, acc_sum = 0.0;
      agg.min_miou = mious.front();
      agg.max_miou = mious.front();
      for (std::size_t i = 0; i < mious.size(); ++i) {
        sum += mious[i];
        acc_sum += accs[i];
        agg.min_miou = std::min(agg.min_miou, mious[i]);
        agg.max_miou = std::max(agg.max_miou, mious[i]);
      }
      agg.mean_miou = sum / static_cast<double>(mious.size());
      agg.mean_pixel_accuracy = acc_sum / static_cast<double>(accs.size());
      double var = 0.0;
      for (double v : mious) var += (v - agg.mean_miou) * (v - agg.mean_miou);
      agg.stddev_miou = mious.size() > 1
                            ? std::sqrt(var / static_cast<double>(mious.size() - 1))
                            : 0.0;
    }
    report.aggregates.push_back(std::move(agg));
  }
  return report;
}

CompareReport run_compare(const ExperimentSpec& spec) {
  return run_compare(spec, load_experiment_data(spec));
}

double normalized_gap(double train_loss, double val_loss) {
  return std::abs(val_loss - train_loss) / train_loss;
}

GapReport run_gap(const ExperimentSpec& spec, const ExperimentData& data) {
  spec.validate();
  GapReport report;
  for (const LossSpec& loss_spec : spec.losses) {
    for (std::uint64_t seed : spec.seeds) {
      GapCurve curve;
      curve.loss = loss_spec.kind;
      curve.seed = seed;
      try {
        const auto loss = make_loss(loss_spec, &data.stats, spec.calib);
        TrainConfig cfg = spec.train_config;
        cfg.seed = seed;
        cfg.warmup_epochs = 0;  // from scratch
        const TrainResult trained = train(data.train, data.val, cfg, *loss);
        curve.log = trained.log;
        const EpochRecord& last = trained.log.records.back();
        curve.final_normalized_gap = normalized_gap(last.train_loss, last.val_loss);
        curve.ok = true;
      } catch (const Error& e) {
        curve.error = e.what();
      }
      report.curves.push_back(std::move(curve));
    }
  }
  return report;
}

GapReport run_gap(const ExperimentSpec& spec) {
  return run_gap(spec, load_experiment_data(spec));
}

BoundRun run_bound(const ClassStats& stats, const CalibConfig& calib,
                   const BoundConfig& bc, int trials) {
  BoundRun run;
  run.offsets = compute_offsets(stats, calib);
  run.report = epsilon_bound(stats, run.offsets, bc);
  run.verdict = verify_optimality(stats, calib, bc, trials);
  return run;
}

void write_run_header(std::ostream& out, const std::string& command,
                      const std::vector<std::pair<std::string, std::string>>& config) {
  out << "# segcal " << kVersion << '\n';
  out << "# command: " << command << '\n';
  for (const auto& [key, value] : config) {
    out << "# " << key << ": " << value << '\n';
  }
}

void write_compare_csv(const CompareReport& report, std::ostream& out) {
  out << "row,loss,seed,ok,miou,pixel_accuracy,per_class_iou,error\n";
  for (const CompareCell& cell : report.cells) {
    out << "cell," << cell.loss << ',' << cell.seed << ',' << (cell.ok ? 1 : 0)
        << ',';
    if (cell.ok) {
      out << cell.test_report.miou << ',' << cell.test_report.pixel_accuracy
          << ',';
      for (std::size_t k = 0; k < cell.test_report.per_class_iou.size(); ++k) {
        if (k) out << ';';
        out << cell.test_report.per_class_iou[k];
      }
      out << ',';
    } else {
      out << ",,,";
    }
    out << '"' << cell.error << '"' << '\n';
  }
  out << "row,loss,cells_ok,mean_miou,min_miou,max_miou,stddev_miou,"
         "mean_pixel_accuracy\n";
  for (const CompareAggregate& agg : report.aggregates) {
    out << "aggregate," << agg.loss << ',' << agg.cells_ok << ','
        << agg.mean_miou << ',' << agg.min_miou << ',' << agg.max_miou << ','
        << agg.stddev_miou << ',' << agg.mean_pixel_accuracy << '\n';
  }
}

void write_gap_csv(const GapReport& report, std::ostream& out) {
  out << "loss,seed,epoch,train_loss,val_loss,normalized_gap,train_miou,"
         "val_miou\n";
  for (const GapCurve& curve : report.curves) {
    if (!curve.ok) {
      out << curve.loss << ',' << curve.seed << ",error,\"" << curve.error
          << "\",,,,\n";
      continue;
    }
    for (const EpochRecord& r : curve.log.records) {
      out << curve.loss << ',' << curve.seed << ',' << r.epoch << ','
          << r.train_loss << ',' << r.val_loss << ','
          << normalized_gap(r.train_loss, r.val_loss) << ',' << r.train_miou
          << ',' << r.val_miou << '\n';
    }
  }
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

void write_svg_chart(const std::filesystem::path& path, const std::string& title,
                     const std::vector<ChartSeries>& series) {
  const double width = 720, height = 440;
  const double left = 70, right = 30, top = 50, bottom = 50;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double y_min = 0.0, y_max = 1.0;
  std::size_t x_count = 1;
  bool first = true;
  for (const ChartSeries& s : series) {
    x_count = std::max(x_count, s.values.size());
    for (double v : s.values) {
      if (first) {
        y_min = y_max = v;
        first = false;
      }
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  }
  if (y_max == y_min) y_max = y_min + 1.0;
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  auto x_of = [&](std::size_t i) {
    return x_count > 1
               ? left + plot_w * static_cast<double>(i) / (x_count - 1)
               : left + plot_w / 2;
  };
  auto y_of = [&](double v) {
    return top + plot_h * (1.0 - (v - y_min) / (y_max - y_min));
  };

  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(Errc::io_failure, "cannot write " + path.string());
  }
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n";
  // Axes and y grid lines.
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\""
      << left + plot_w << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = y_min + (y_max - y_min) * tick / 4.0;
    const double y = y_of(v);
    out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\""
        << left + plot_w << "\" y2=\"" << y
        << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">";
    std::ostringstream label;
    label.precision(4);
    label << v;
    out << label.str() << "</text>\n";
  }
  out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">epoch</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof kPalette / sizeof kPalette[0])];
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].values.size(); ++i) {
      out << x_of(i) << ',' << y_of(series[s].values[i]) << ' ';
    }
    out << "\"/>\n";
    const double ly = top + 16 * static_cast<double>(s);
    out << "<line x1=\"" << left + plot_w - 130 << "\" y1=\"" << ly
        << "\" x2=\"" << left + plot_w - 110 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + plot_w - 104 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[s].name
        << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) {
    throw Error(Errc::io_failure, "write failed for " + path.string());
  }
}

}  // namespace segcal
