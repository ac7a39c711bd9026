// segcal: command-line front end for the margin-calibration toolkit.
// Subcommands: stats, calibrate, synth, train, eval, compare, gap, bound.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "segcal/experiment.hpp"

namespace {

using namespace segcal;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::config_error:
    case Errc::calibration_error:
      return 2;
    case Errc::numeric_error:
      return 4;
    default:
      return 3;  // data errors: i/o, headers, payloads, shapes, class range
  }
}

std::string join_command(int argc, char** argv) {
  std::ostringstream out;
  for (int i = 0; i < argc; ++i) {
    if (i) out << ' ';
    out << argv[i];
  }
  return out.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(Errc::io_failure, "cannot write " + path.string());
  }
  return out;
}

ClassStats stats_from_flags(const std::string& manifest_path,
                            const std::vector<std::int64_t>& counts,
                            int pixels_per_image) {
  if (!manifest_path.empty()) {
    return class_stats(load_manifest(manifest_path));
  }
  if (counts.empty()) {
    throw Error(Errc::config_error, "need --manifest or --counts");
  }
  return ClassStats::from_counts(counts, pixels_per_image);
}

struct LossFlags {
  std::vector<std::string> kinds;
  double gamma = 2.0;
  double alpha = 0.3;
  double beta = 0.7;
  double smooth = 1e-6;
  double combine_weight = 0.5;

  void add_options(CLI::App* cmd, bool multi) {
    auto* opt = cmd->add_option("--loss", kinds,
                                "loss: ce|focal|dice|tversky|lovasz|mc|"
                                "mc+dice|mc+tversky");
    if (!multi) opt->expected(1);
    cmd->add_option("--gamma", gamma, "focal gamma");
    cmd->add_option("--alpha", alpha, "tversky alpha");
    cmd->add_option("--beta", beta, "tversky beta");
    cmd->add_option("--smooth", smooth, "dice/tversky smoothing");
    cmd->add_option("--combine-weight", combine_weight,
                    "mc weight in mc+dice / mc+tversky");
  }

  std::vector<LossSpec> specs() const {
    std::vector<LossSpec> out;
    for (const std::string& kind : kinds) {
      LossSpec spec;
      spec.kind = kind;
      spec.params.focal_gamma = gamma;
      spec.params.tversky_alpha = alpha;
      spec.params.tversky_beta = beta;
      spec.params.dice_smooth = smooth;
      spec.combine_weight = combine_weight;
      out.push_back(std::move(spec));
    }
    return out;
  }
};

struct TrainFlags {
  double lr = 1e-4;
  double weight_decay = 0.0;
  int batch_images = 8;
  int epochs = 50;
  int warmup_epochs = -1;
  std::string model = "linear";
  int hidden = 16;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    cmd->add_option("--batch-images", batch_images, "images per batch");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--warmup-epochs", warmup_epochs,
                    "cross-entropy warm-up epochs (-1: 20% of epochs)");
    cmd->add_option("--model", model, "linear|mlp1");
    cmd->add_option("--hidden", hidden, "mlp1 hidden width");
  }

  TrainConfig config() const {
    TrainConfig cfg;
    cfg.learning_rate = lr;
    cfg.weight_decay = weight_decay;
    cfg.batch_images = batch_images;
    cfg.epochs = epochs;
    cfg.warmup_epochs = warmup_epochs;
    cfg.hidden_dim = hidden;
    if (model == "linear") {
      cfg.model = ModelKind::linear;
    } else if (model == "mlp1") {
      cfg.model = ModelKind::mlp1;
    } else {
      throw Error(Errc::config_error, "--model must be linear or mlp1");
    }
    return cfg;
  }
};

struct DataFlags {
  std::string synth_spec;
  std::string manifest_train, manifest_val, manifest_test;
  int train_images = 0, val_images = 0, test_images = 0;

  void add_options(CLI::App* cmd) {
    cmd->add_option("--synth-spec", synth_spec, "synthetic dataset JSON spec");
    cmd->add_option("--train-images", train_images, "synth: images for training");
    cmd->add_option("--val-images", val_images, "synth: images for validation");
    cmd->add_option("--test-images", test_images, "synth: images for testing");
    cmd->add_option("--manifest-train", manifest_train, "training manifest");
    cmd->add_option("--manifest-val", manifest_val, "validation manifest");
    cmd->add_option("--manifest-test", manifest_test, "test manifest");
  }

  void fill(ExperimentSpec& spec) const {
    if (!synth_spec.empty()) {
      spec.use_synth = true;
      spec.synth = load_synth_spec(synth_spec);
      spec.train_images = train_images;
      spec.val_images = val_images;
      spec.test_images = test_images;
    } else {
      spec.use_synth = false;
      if (manifest_train.empty() || manifest_val.empty() || manifest_test.empty()) {
        throw Error(Errc::config_error,
                    "need --synth-spec or all three --manifest-* flags");
      }
      spec.manifest_train = manifest_train;
      spec.manifest_val = manifest_val;
      spec.manifest_test = manifest_test;
    }
  }
};

std::vector<std::pair<std::string, std::string>> experiment_header(
    const ExperimentSpec& spec) {
  std::ostringstream seeds, losses;
  for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
    if (i) seeds << ',';
    seeds << spec.seeds[i];
  }
  for (std::size_t i = 0; i < spec.losses.size(); ++i) {
    if (i) losses << ',';
    losses << spec.losses[i].kind;
  }
  std::ostringstream train;
  train << "lr=" << spec.train_config.learning_rate
        << " weight_decay=" << spec.train_config.weight_decay
        << " batch_images=" << spec.train_config.batch_images
        << " epochs=" << spec.train_config.epochs
        << " warmup_epochs=" << spec.train_config.warmup_epochs
        << " model=" << (spec.train_config.model == ModelKind::linear ? "linear" : "mlp1");
  std::ostringstream data;
  if (spec.use_synth) {
    data << "synth seed=" << spec.synth.seed << " images=" << spec.synth.images
         << " hw=" << spec.synth.height << 'x' << spec.synth.width
         << " classes=" << spec.synth.classes
         << " noise_sigma=" << spec.synth.noise_sigma
         << " d=" << spec.synth.feature_channels << " split="
         << spec.train_images << '/' << spec.val_images << '/' << spec.test_images;
  } else {
    data << "manifests " << spec.manifest_train << ' ' << spec.manifest_val
         << ' ' << spec.manifest_test;
  }
  return {{"data", data.str()},
          {"losses", losses.str()},
          {"seeds", seeds.str()},
          {"train", train.str()},
          {"calib", "tau=" + std::to_string(spec.calib.tau) +
                        " upsilon=" + std::to_string(spec.calib.upsilon)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segcal: margin-calibrated mIoU optimization toolkit"};
  app.require_subcommand(1);
  const std::string command = join_command(argc, argv);

  // ---- stats ----
  auto* stats_cmd = app.add_subcommand("stats", "label distribution of a dataset");
  std::string stats_manifest, stats_out;
  stats_cmd->add_option("--manifest", stats_manifest, "dataset manifest")->required();
  stats_cmd->add_option("--out", stats_out, "output CSV (default stdout)");

  // ---- calibrate ----
  auto* calib_cmd = app.add_subcommand("calibrate", "compute margin-offsets");
  std::string calib_manifest, calib_out;
  std::vector<std::int64_t> calib_counts;
  int calib_m = 0;
  double calib_tau = 10.0, calib_upsilon = 1.0;
  calib_cmd->add_option("--manifest", calib_manifest, "dataset manifest");
  calib_cmd->add_option("--counts", calib_counts, "per-class pixel counts")
      ->delimiter(',');
  calib_cmd->add_option("--pixels-per-image", calib_m, "m (with --counts)");
  calib_cmd->add_option("--tau", calib_tau, "offset scale");
  calib_cmd->add_option("--upsilon", calib_upsilon, "mu hyper-parameter");
  calib_cmd->add_option("--out", calib_out, "offsets file")->required();

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_spec_path, synth_out;
  synth_cmd->add_option("--spec", synth_spec_path, "synth spec JSON")->required();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train one model");
  DataFlags train_data;
  LossFlags train_loss;
  TrainFlags train_flags;
  std::uint64_t train_seed = 1;
  double train_tau = 10.0, train_upsilon = 1.0;
  std::string train_out;
  train_data.add_options(train_cmd);
  train_loss.add_options(train_cmd, false);
  train_flags.add_options(train_cmd);
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--tau", train_tau, "offset scale");
  train_cmd->add_option("--upsilon", train_upsilon, "mu hyper-parameter");
  train_cmd->add_option("--out", train_out, "output directory")->required();

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved model");
  std::string eval_model, eval_manifest, eval_out;
  eval_cmd->add_option("--model", eval_model, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--out", eval_out, "metrics CSV (default stdout)");

  // ---- compare ----
  auto* compare_cmd = app.add_subcommand("compare", "loss comparison experiment");
  DataFlags compare_data;
  LossFlags compare_loss;
  TrainFlags compare_flags;
  std::vector<std::uint64_t> compare_seeds{1};
  double compare_tau = 10.0, compare_upsilon = 1.0;
  std::string compare_out;
  compare_data.add_options(compare_cmd);
  compare_loss.add_options(compare_cmd, true);
  compare_flags.add_options(compare_cmd);
  compare_cmd->add_option("--seeds", compare_seeds, "training seeds")->delimiter(',');
  compare_cmd->add_option("--tau", compare_tau, "offset scale");
  compare_cmd->add_option("--upsilon", compare_upsilon, "mu hyper-parameter");
  compare_cmd->add_option("--out", compare_out, "output directory")->required();

  // ---- gap ----
  auto* gap_cmd = app.add_subcommand("gap", "train/val convergence-gap study");
  DataFlags gap_data;
  LossFlags gap_loss;
  TrainFlags gap_flags;
  std::vector<std::uint64_t> gap_seeds{1};
  double gap_tau = 10.0, gap_upsilon = 1.0;
  std::string gap_out;
  gap_data.add_options(gap_cmd);
  gap_loss.add_options(gap_cmd, true);
  gap_flags.add_options(gap_cmd);
  gap_cmd->add_option("--seeds", gap_seeds, "training seeds")->delimiter(',');
  gap_cmd->add_option("--tau", gap_tau, "offset scale");
  gap_cmd->add_option("--upsilon", gap_upsilon, "mu hyper-parameter");
  gap_cmd->add_option("--out", gap_out, "output directory")->required();

  // ---- bound ----
  auto* bound_cmd = app.add_subcommand("bound", "error-bound audit");
  std::string bound_manifest, bound_out;
  std::vector<std::int64_t> bound_counts;
  int bound_m = 1024;
  double bound_tau = 10.0, bound_upsilon = 1.0, bound_F = 1.0, bound_eta = 0.05;
  bool bound_sigma = false;
  int bound_trials = 200;
  bound_cmd->add_option("--manifest", bound_manifest, "dataset manifest");
  bound_cmd->add_option("--counts", bound_counts, "per-class pixel counts")
      ->delimiter(',');
  bound_cmd->add_option("--pixels-per-image", bound_m, "m (with --counts)");
  bound_cmd->add_option("--tau", bound_tau, "offset scale");
  bound_cmd->add_option("--upsilon", bound_upsilon, "mu hyper-parameter");
  bound_cmd->add_option("--F", bound_F, "complexity proxy C(Theta)");
  bound_cmd->add_option("--eta", bound_eta, "confidence parameter");
  bound_cmd->add_flag("--include-sigma", bound_sigma,
                      "add sigma(1/eta) to F");
  bound_cmd->add_option("--trials", bound_trials, "optimality search trials");
  bound_cmd->add_option("--out", bound_out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*stats_cmd) {
      const ClassStats stats = class_stats(load_manifest(stats_manifest));
      std::ostringstream body;
      write_run_header(body, command,
                       {{"manifest", stats_manifest},
                        {"pixels_per_image", std::to_string(stats.pixels_per_image)}});
      body << "class,count,frequency\n";
      for (int k = 0; k < stats.classes; ++k) {
        body << k << ',' << stats.pixel_counts[static_cast<std::size_t>(k)]
             << ',' << stats.frequency(k) << '\n';
      }
      body << "total," << stats.total << ",1\n";
      if (stats_out.empty()) {
        std::cout << body.str();
      } else {
        open_out(stats_out) << body.str();
      }
    } else if (*calib_cmd) {
      const ClassStats stats =
          stats_from_flags(calib_manifest, calib_counts, calib_m);
      const MarginOffsets offsets =
          compute_offsets(stats, CalibConfig{calib_tau, calib_upsilon});
      for (int k : offsets.fallback_classes) {
        std::cerr << "warning: class " << k
                  << " has zero pixels; assigned the maximum offset\n";
      }
      save_offsets(offsets, calib_out);
      std::cout << "wrote " << calib_out << '\n';
    } else if (*synth_cmd) {
      const SynthSpec spec = load_synth_spec(synth_spec_path);
      const SynthDataset ds = generate(spec);
      write_dataset(ds, synth_out);
      const double total = static_cast<double>(spec.height) * spec.width * spec.images;
      std::cout << "wrote " << ds.masks.size() << " images to " << synth_out
                << "; realized frequencies:";
      for (std::int64_t count : ds.realized_counts) {
        std::cout << ' ' << static_cast<double>(count) / total;
      }
      std::cout << '\n';
    } else if (*train_cmd) {
      ExperimentSpec spec;
      train_data.fill(spec);
      spec.losses = train_loss.specs();
      if (spec.losses.size() != 1) {
        throw Error(Errc::config_error, "train takes exactly one --loss");
      }
      spec.train_config = train_flags.config();
      spec.train_config.seed = train_seed;
      spec.calib = CalibConfig{train_tau, train_upsilon};
      spec.seeds = {train_seed};
      const ExperimentData data = load_experiment_data(spec);
      const auto loss = make_loss(spec.losses.front(), &data.stats, spec.calib);
      const TrainResult result =
          train(data.train, data.val, spec.train_config, *loss);

      std::filesystem::create_directories(train_out);
      save_model(result.model, std::filesystem::path(train_out) / "model.mdl");
      auto log_out = open_out(std::filesystem::path(train_out) / "train_log.csv");
      write_run_header(log_out, command, experiment_header(spec));
      write_train_log_csv(result.log, log_out);

      std::vector<ChartSeries> loss_series(2), miou_series(2);
      loss_series[0].name = "train_loss";
      loss_series[1].name = "val_loss";
      miou_series[0].name = "train_miou";
      miou_series[1].name = "val_miou";
      for (const EpochRecord& r : result.log.records) {
        loss_series[0].values.push_back(r.train_loss);
        loss_series[1].values.push_back(r.val_loss);
        miou_series[0].values.push_back(r.train_miou);
        miou_series[1].values.push_back(r.val_miou);
      }
      write_svg_chart(std::filesystem::path(train_out) / "loss.svg",
                      spec.losses.front().kind + " loss", loss_series);
      write_svg_chart(std::filesystem::path(train_out) / "miou.svg",
                      spec.losses.front().kind + " mIoU", miou_series);
      const MetricReport test = report(evaluate(result.model, data.test));
      std::cout << "final test miou " << test.miou << ", pixel accuracy "
                << test.pixel_accuracy << '\n';
    } else if (*eval_cmd) {
      const Model model = load_model(eval_model);
      const DataSplit split = load_split(load_manifest(eval_manifest));
      ConfusionMatrix cm = evaluate(model, split);
      const MetricReport rep = report(cm);
      std::ostringstream body;
      write_run_header(body, command,
                       {{"model", eval_model}, {"manifest", eval_manifest}});
      write_metric_csv(rep, body);
      if (eval_out.empty()) {
        std::cout << body.str();
      } else {
        open_out(eval_out) << body.str();
      }
    } else if (*compare_cmd) {
      ExperimentSpec spec;
      compare_data.fill(spec);
      spec.losses = compare_loss.specs();
      spec.train_config = compare_flags.config();
      spec.calib = CalibConfig{compare_tau, compare_upsilon};
      spec.seeds = compare_seeds;
      spec.out_dir = compare_out;
      const CompareReport rep = run_compare(spec);
      std::filesystem::create_directories(compare_out);
      auto out = open_out(std::filesystem::path(compare_out) / "compare.csv");
      write_run_header(out, command, experiment_header(spec));
      write_compare_csv(rep, out);
      for (const CompareAggregate& agg : rep.aggregates) {
        std::cout << agg.loss << ": mean test miou " << agg.mean_miou << " ["
                  << agg.min_miou << ", " << agg.max_miou << "] over "
                  << agg.cells_ok << " seeds\n";
      }
    } else if (*gap_cmd) {
      ExperimentSpec spec;
      gap_data.fill(spec);
      spec.losses = gap_loss.specs();
      if (spec.losses.empty()) {
        spec.losses = {LossSpec{"ce", {}, 0.5}, LossSpec{"mc", {}, 0.5}};
      }
      spec.train_config = gap_flags.config();
      spec.calib = CalibConfig{gap_tau, gap_upsilon};
      spec.seeds = gap_seeds;
      spec.out_dir = gap_out;
      const GapReport rep = run_gap(spec);
      std::filesystem::create_directories(gap_out);
      auto out = open_out(std::filesystem::path(gap_out) / "gap.csv");
      write_run_header(out, command, experiment_header(spec));
      write_gap_csv(rep, out);

      std::vector<ChartSeries> loss_series, gap_series;
      for (const GapCurve& curve : rep.curves) {
        if (!curve.ok || curve.seed != spec.seeds.front()) continue;
        ChartSeries tr{curve.loss + " train", {}};
        ChartSeries va{curve.loss + " val", {}};
        ChartSeries ng{curve.loss + " gap", {}};
        for (const EpochRecord& r : curve.log.records) {
          tr.values.push_back(r.train_loss);
          va.values.push_back(r.val_loss);
          ng.values.push_back(normalized_gap(r.train_loss, r.val_loss));
        }
        loss_series.push_back(std::move(tr));
        loss_series.push_back(std::move(va));
        gap_series.push_back(std::move(ng));
      }
      write_svg_chart(std::filesystem::path(gap_out) / "gap_loss.svg",
                      "train/val loss (seed " + std::to_string(spec.seeds.front()) + ")",
                      loss_series);
      write_svg_chart(std::filesystem::path(gap_out) / "gap_normalized.svg",
                      "normalized |val-train|/train", gap_series);
      for (const GapCurve& curve : rep.curves) {
        if (curve.ok) {
          std::cout << curve.loss << " seed " << curve.seed
                    << ": final normalized gap " << curve.final_normalized_gap
                    << '\n';
        } else {
          std::cout << curve.loss << " seed " << curve.seed << ": "
                    << curve.error << '\n';
        }
      }
    } else if (*bound_cmd) {
      const ClassStats stats =
          stats_from_flags(bound_manifest, bound_counts, bound_m);
      BoundConfig bc;
      bc.F = bound_F;
      bc.eta = bound_eta;
      bc.m = stats.pixels_per_image > 0 ? stats.pixels_per_image : bound_m;
      bc.classes = stats.classes;
      bc.include_sigma = bound_sigma;
      const BoundRun run =
          run_bound(stats, CalibConfig{bound_tau, bound_upsilon}, bc, bound_trials);
      std::ostringstream body;
      write_run_header(
          body, command,
          {{"tau", std::to_string(bound_tau)},
           {"upsilon", std::to_string(bound_upsilon)},
           {"F", std::to_string(bound_F)},
           {"eta", std::to_string(bound_eta)},
           {"include_sigma", bound_sigma ? "true" : "false"},
           {"trials", std::to_string(bound_trials)}});
      write_bound_csv(run.report, body);
      body << "optimality," << (run.verdict.optimal ? "ok" : "violated") << ','
           << run.verdict.trials << " trials,worst margin "
           << run.verdict.worst_margin << '\n';
      if (bound_out.empty()) {
        std::cout << body.str();
      } else {
        open_out(bound_out) << body.str();
        std::cout << (run.report.vacuous ? "bound vacuous for every class\n"
                                         : "")
                  << "optimality " << (run.verdict.optimal ? "ok" : "VIOLATED")
                  << " over " << run.verdict.trials << " trials\n";
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
