#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "segcal/synth.hpp"
#include "segcal/trainer.hpp"
#include "test_support.hpp"

using namespace segcal;

namespace {

LabelMask mask_of(std::vector<std::uint8_t> labels, int c) {
  const int n = static_cast<int>(labels.size());
  return LabelMask{n, 1, c, std::move(labels)};
}

/// Loss with a caller-supplied constant gradient; isolates the chain rule.
class ConstantGradientLoss final : public Loss {
 public:
  explicit ConstantGradientLoss(double fill) : fill_(fill) {}
  LossResult operator()(const ScoreMap& s, const LabelMask&) const override {
    LossResult r;
    r.value = 0.0;
    r.gradient = ScoreMap::zeros(s.height, s.width, s.classes);
    for (double& g : r.gradient.data) g = fill_;
    return r;
  }
  std::string name() const override { return "constant"; }

 private:
  double fill_;
};

class NanLoss final : public Loss {
 public:
  LossResult operator()(const ScoreMap& s, const LabelMask&) const override {
    LossResult r;
    r.value = std::numeric_limits<double>::quiet_NaN();
    r.gradient = ScoreMap::zeros(s.height, s.width, s.classes);
    return r;
  }
  std::string name() const override { return "nan"; }
};

DataSplit split_from(const SynthDataset& ds, int first, int count) {
  DataSplit split;
  split.features.assign(ds.features.begin() + first,
                        ds.features.begin() + first + count);
  split.masks.assign(ds.masks.begin() + first, ds.masks.begin() + first + count);
  return split;
}

}  // namespace

TEST_CASE("forward: zero parameters give zero scores, basis probes read W") {
  Model model;
  model.kind = ModelKind::linear;
  model.in_dim = 3;
  model.classes = 2;
  model.params.assign(3 * 2 + 2, 0.0);

  ScoreMap x = ScoreMap::zeros(2, 1, 3);
  x.data = {1.0, 0.0, 0.0, 0.0, 0.0, 1.0};
  const ScoreMap zero = forward(model, x);
  for (double s : zero.data) CHECK(s == 0.0);

  // W[j][k] = 10 j + k, b = (0.5, -0.5); x = e_j probes row j
  for (int j = 0; j < 3; ++j) {
    for (int k = 0; k < 2; ++k) model.params[static_cast<std::size_t>(j * 2 + k)] = 10.0 * j + k;
  }
  model.params[6] = 0.5;
  model.params[7] = -0.5;
  const ScoreMap probed = forward(model, x);
  CHECK(probed.at(0, 0) == doctest::Approx(0.5));    // e_0: W[0][0] + b0
  CHECK(probed.at(0, 1) == doctest::Approx(0.5));    // W[0][1] + b1 = 1 - 0.5
  CHECK(probed.at(1, 0) == doctest::Approx(20.5));   // e_2: W[2][0] + b0
  CHECK(probed.at(1, 1) == doctest::Approx(20.5));

  ScoreMap wrong_dim = ScoreMap::zeros(1, 1, 4);
  CHECK_THROWS_AS(forward(model, wrong_dim), Error);
}

TEST_CASE("mlp1 forward agrees with a scalar re-implementation") {
  const int d = 3, h = 4, c = 2;
  Model model = Model::init(ModelKind::mlp1, d, h, c, 99);
  SplitMix64 rng(77);
  ScoreMap x = test::random_scores(rng, 3, 1, d);
  const ScoreMap scores = forward(model, x);

  const double* W1 = model.params.data();
  const double* b1 = W1 + d * h;
  const double* W2 = b1 + h;
  const double* b2 = W2 + h * c;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < c; ++k) {
      double s = b2[k];
      for (int u = 0; u < h; ++u) {
        double a = b1[u];
        for (int j = 0; j < d; ++j) a += x.at(i, j) * W1[j * h + u];
        s += std::tanh(a) * W2[u * c + k];
      }
      CHECK(std::abs(s - scores.at(i, k)) <= 1e-12);
    }
  }
}

TEST_CASE("backward matches parameter-space finite differences") {
  SplitMix64 rng(78);
  const auto ce = make_ce_loss();
  const auto dice = make_dice_loss(1e-6);

  for (ModelKind kind : {ModelKind::linear, ModelKind::mlp1}) {
    for (const Loss* loss : {ce.get(), dice.get()}) {
      Model model = Model::init(kind, 4, 3, 3, rng.next());
      const ScoreMap x = test::random_scores(rng, 5, 1, 4);
      const LabelMask gt = test::random_mask(rng, 5, 1, 3);

      const BackwardResult analytic = backward(model, x, gt, *loss);
      for (std::size_t p = 0; p < model.params.size(); ++p) {
        const double numeric = test::central_diff(
            [&] { return (*loss)(forward(model, x), gt).value; },
            model.params[p]);
        CHECK(test::rel_err(analytic.param_grads[p], numeric) <= 1e-5);
      }
    }
  }
}

TEST_CASE("backward is linear in per-pixel contributions") {
  SplitMix64 rng(79);
  Model model = Model::init(ModelKind::linear, 3, 0, 2, 5);

  // zero loss gradient -> zero parameter gradient
  const ScoreMap x = test::random_scores(rng, 4, 1, 3);
  const LabelMask gt = test::random_mask(rng, 4, 1, 2);
  const BackwardResult zero = backward(model, x, gt, ConstantGradientLoss(0.0));
  for (double g : zero.param_grads) CHECK(g == 0.0);

  // duplicating a pixel doubles its additive contribution
  ScoreMap one = ScoreMap::zeros(1, 1, 3);
  one.data = {0.3, -1.2, 2.0};
  ScoreMap two = ScoreMap::zeros(2, 1, 3);
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + 3);
  const ConstantGradientLoss unit(1.0);
  const BackwardResult single = backward(model, one, mask_of({0}, 2), unit);
  const BackwardResult doubled = backward(model, two, mask_of({0, 0}, 2), unit);
  for (std::size_t p = 0; p < single.param_grads.size(); ++p) {
    CHECK(doubled.param_grads[p] ==
          doctest::Approx(2.0 * single.param_grads[p]).epsilon(1e-14));
  }
}

TEST_CASE("adamw step: fixed points, decoupled decay, frozen trajectory") {
  TrainConfig config;
  config.learning_rate = 0.1;
  config.weight_decay = 0.0;

  Model model;
  model.kind = ModelKind::linear;
  model.in_dim = 1;
  model.classes = 2;
  model.params = {1.0, -2.0, 0.5, 0.25};
  AdamState state = AdamState::init(model.params.size());

  SUBCASE("zero gradients and zero decay leave the model unchanged") {
    const std::vector<double> before = model.params;
    step(model, std::vector<double>(4, 0.0), config, state);
    CHECK(model.params == before);
  }

  SUBCASE("zero gradients with decay shrink weights by 1 - lr wd") {
    config.weight_decay = 0.1;
    step(model, std::vector<double>(4, 0.0), config, state);
    CHECK(model.params[0] == doctest::Approx(1.0 * (1.0 - 0.01)).epsilon(1e-15));
    CHECK(model.params[1] == doctest::Approx(-2.0 * (1.0 - 0.01)).epsilon(1e-15));
  }

  SUBCASE("three hand-computed steps on a single parameter") {
    // lr = 0.1, wd = 0.1, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, w0 = 1,
    // gradients 0.5, -0.3, 0.2
    Model scalar;
    scalar.kind = ModelKind::linear;
    scalar.in_dim = 1;
    scalar.classes = 2;
    scalar.params = {1.0};
    AdamState s1 = AdamState::init(1);
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.1;

    const double expected[3] = {0.89000000199999996, 0.86195019892177506,
                                0.81858792878166418};
    const double grads[3] = {0.5, -0.3, 0.2};
    for (int t = 0; t < 3; ++t) {
      step(scalar, {grads[t]}, cfg, s1);
      CHECK(scalar.params[0] == doctest::Approx(expected[t]).epsilon(1e-14));
    }
  }
}

TEST_CASE("train: empty epoch count, determinism, warm-up equivalence") {
  SynthSpec spec;
  spec.seed = 7;
  spec.images = 24;
  spec.height = 8;
  spec.width = 8;
  spec.classes = 3;
  spec.target_frequencies = {0.7, 0.2, 0.1};
  spec.noise_sigma = 0.4;
  spec.feature_channels = 4;
  const SynthDataset ds = generate(spec);
  const DataSplit train_split = split_from(ds, 0, 16);
  const DataSplit val_split = split_from(ds, 16, 8);

  TrainConfig config;
  config.learning_rate = 0.01;
  config.epochs = 0;
  config.batch_images = 4;
  config.seed = 11;
  const auto ce = make_ce_loss();

  SUBCASE("epochs = 0 returns the initial model and an empty log") {
    const TrainResult result = train(train_split, val_split, config, *ce);
    CHECK(result.log.records.empty());
    const Model fresh = Model::init(config.model, 4, config.hidden_dim, 3, 11);
    CHECK(result.model.params == fresh.params);
  }

  SUBCASE("identical seed and config give identical logs and weights") {
    config.epochs = 5;
    const TrainResult a = train(train_split, val_split, config, *ce);
    const TrainResult b = train(train_split, val_split, config, *ce);
    CHECK(a.model.params == b.model.params);
    REQUIRE(a.log.records.size() == b.log.records.size());
    for (std::size_t i = 0; i < a.log.records.size(); ++i) {
      CHECK(a.log.records[i].train_loss == b.log.records[i].train_loss);
      CHECK(a.log.records[i].val_miou == b.log.records[i].val_miou);
    }

    TrainConfig reseeded = config;
    reseeded.seed = 12;
    const TrainResult c = train(train_split, val_split, reseeded, *ce);
    CHECK(a.model.params != c.model.params);
  }

  SUBCASE("full warm-up equals pure cross-entropy training") {
    config.epochs = 4;
    config.warmup_epochs = 4;
    const auto dice = make_dice_loss(1e-6);
    const TrainResult warmed = train(train_split, val_split, config, *dice);
    config.warmup_epochs = 0;
    const TrainResult pure = train(train_split, val_split, config, *ce);
    CHECK(warmed.model.params == pure.model.params);
    for (std::size_t i = 0; i < warmed.log.records.size(); ++i) {
      CHECK(warmed.log.records[i].train_loss == pure.log.records[i].train_loss);
    }
  }
}

TEST_CASE("noiseless separable data trains to near-perfect mIoU") {
  SynthSpec spec;
  spec.seed = 3;
  spec.images = 30;
  spec.height = 16;
  spec.width = 16;
  spec.classes = 3;
  spec.target_frequencies = {0.6, 0.3, 0.1};
  spec.noise_sigma = 0.0;
  spec.feature_channels = 4;
  const SynthDataset ds = generate(spec);
  const DataSplit train_split = split_from(ds, 0, 20);
  const DataSplit val_split = split_from(ds, 20, 10);

  TrainConfig config;
  config.learning_rate = 0.01;
  config.epochs = 50;
  config.warmup_epochs = 0;
  config.batch_images = 4;
  config.seed = 1;
  const auto ce = make_ce_loss();
  const TrainResult result = train(train_split, val_split, config, *ce);
  CHECK(result.log.records.back().val_miou >= 0.99);
}

TEST_CASE("non-finite losses abort with epoch and batch identified") {
  SynthSpec spec;
  spec.seed = 5;
  spec.images = 8;
  spec.height = 8;
  spec.width = 8;
  spec.classes = 2;
  spec.target_frequencies = {0.8, 0.2};
  spec.noise_sigma = 0.2;
  spec.feature_channels = 2;
  const SynthDataset ds = generate(spec);
  const DataSplit train_split = split_from(ds, 0, 6);
  const DataSplit val_split = split_from(ds, 6, 2);

  TrainConfig config;
  config.epochs = 2;
  config.warmup_epochs = 0;
  config.batch_images = 2;
  try {
    train(train_split, val_split, config, NanLoss{});
    FAIL("expected numeric abort");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::numeric_error);
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip bitwise") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "segcal_model.mdl";
  const Model model = Model::init(ModelKind::mlp1, 5, 7, 3, 1234);
  save_model(model, path);
  const Model loaded = load_model(path);
  CHECK(loaded.kind == model.kind);
  CHECK(loaded.in_dim == model.in_dim);
  CHECK(loaded.hidden_dim == model.hidden_dim);
  CHECK(loaded.classes == model.classes);
  CHECK(loaded.params == model.params);

  // truncated file
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "MDL1 linear 2 0 2\n";
    out.write("\0\0\0\0\0\0\0\0", 8);
  }
  try {
    load_model(path);
    FAIL("expected truncation error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::truncated_payload);
  }
}

TEST_CASE("train log CSV carries one row per epoch") {
  TrainLog log;
  log.records.push_back({1, 0.5, 0.6, 0.7, 0.65});
  log.records.push_back({2, 0.4, 0.55, 0.75, 0.7});
  std::ostringstream out;
  write_train_log_csv(log, out);
  const std::string csv = out.str();
  CHECK(csv.find("epoch,train_loss,val_loss,train_miou,val_miou\n") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
