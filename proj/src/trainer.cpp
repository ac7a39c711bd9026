#include "segcal/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "segcal/rng.hpp"

namespace segcal {

namespace {

std::size_t linear_param_count(int d, int c) {
  return static_cast<std::size_t>(d) * c + c;
}

std::size_t mlp1_param_count(int d, int h, int c) {
  return static_cast<std::size_t>(d) * h + h + static_cast<std::size_t>(h) * c + c;
}

void fill_uniform(SplitMix64& rng, double* out, std::size_t count, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = rng.uniform(-bound, bound);
  }
}

}  // namespace

Model Model::init(ModelKind kind, int in_dim, int hidden_dim, int classes,
                  std::uint64_t seed) {
  if (in_dim <= 0 || classes < 2 || (kind == ModelKind::mlp1 && hidden_dim <= 0)) {
    throw Error(Errc::config_error, "bad model dimensions");
  }
  Model model;
  model.kind = kind;
  model.in_dim = in_dim;
  model.hidden_dim = kind == ModelKind::mlp1 ? hidden_dim : 0;
  model.classes = classes;
  SplitMix64 rng(SplitMix64::derive(seed, 0xA11CE5ull));
  if (kind == ModelKind::linear) {
    model.params.resize(linear_param_count(in_dim, classes));
    fill_uniform(rng, model.params.data(), model.params.size(), in_dim);
  } else {
    model.params.resize(mlp1_param_count(in_dim, hidden_dim, classes));
    double* p = model.params.data();
    const std::size_t w1 = static_cast<std::size_t>(in_dim) * hidden_dim;
    fill_uniform(rng, p, w1 + hidden_dim, in_dim);                    // W1, b1
    fill_uniform(rng, p + w1 + hidden_dim,
                 static_cast<std::size_t>(hidden_dim) * classes + classes,
                 hidden_dim);                                         // W2, b2
  }
  return model;
}

ScoreMap forward(const Model& model, const ScoreMap& features) {
  if (features.classes != model.in_dim) {
    throw Error(Errc::shape_mismatch,
                "feature dim " + std::to_string(features.classes) +
                    " != model in_dim " + std::to_string(model.in_dim));
  }
  const int n = features.pixels();
  const int d = model.in_dim;
  const int c = model.classes;
  ScoreMap scores = ScoreMap::zeros(features.height, features.width, c);

  if (model.kind == ModelKind::linear) {
    const double* W = model.params.data();          // d x c
    const double* b = W + static_cast<std::size_t>(d) * c;
    for (int i = 0; i < n; ++i) {
      const double* x = features.data.data() + static_cast<std::size_t>(i) * d;
      double* s = scores.data.data() + static_cast<std::size_t>(i) * c;
      for (int k = 0; k < c; ++k) s[k] = b[k];
      for (int j = 0; j < d; ++j) {
        const double xj = x[j];
        const double* wrow = W + static_cast<std::size_t>(j) * c;
        for (int k = 0; k < c; ++k) s[k] += xj * wrow[k];
      }
    }
    return scores;
  }

  const int h = model.hidden_dim;
  const double* W1 = model.params.data();           // d x h
  const double* b1 = W1 + static_cast<std::size_t>(d) * h;
  const double* W2 = b1 + h;                        // h x c
  const double* b2 = W2 + static_cast<std::size_t>(h) * c;
  std::vector<double> z(static_cast<std::size_t>(h));
  for (int i = 0; i < n; ++i) {
    const double* x = features.data.data() + static_cast<std::size_t>(i) * d;
    double* s = scores.data.data() + static_cast<std::size_t>(i) * c;
    for (int u = 0; u < h; ++u) z[static_cast<std::size_t>(u)] = b1[u];
    for (int j = 0; j < d; ++j) {
      const double xj = x[j];
      const double* wrow = W1 + static_cast<std::size_t>(j) * h;
      for (int u = 0; u < h; ++u) z[static_cast<std::size_t>(u)] += xj * wrow[u];
    }
    for (int u = 0; u < h; ++u) z[static_cast<std::size_t>(u)] = std::tanh(z[static_cast<std::size_t>(u)]);
    for (int k = 0; k < c; ++k) s[k] = b2[k];
    for (int u = 0; u < h; ++u) {
      const double zu = z[static_cast<std::size_t>(u)];
      const double* wrow = W2 + static_cast<std::size_t>(u) * c;
      for (int k = 0; k < c; ++k) s[k] += zu * wrow[k];
    }
  }
  return scores;
}

BackwardResult backward(const Model& model, const ScoreMap& features,
                        const LabelMask& gt, const Loss& loss) {
  const int n = features.pixels();
  const int d = model.in_dim;
  const int c = model.classes;

  BackwardResult result;
  result.param_grads.assign(model.params.size(), 0.0);

  if (model.kind == ModelKind::linear) {
    const ScoreMap scores = forward(model, features);
    const LossResult lr = loss(scores, gt);
    result.loss_value = lr.value;
    double* dW = result.param_grads.data();
    double* db = dW + static_cast<std::size_t>(d) * c;
    for (int i = 0; i < n; ++i) {
      const double* x = features.data.data() + static_cast<std::size_t>(i) * d;
      const double* g = lr.gradient.data.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < d; ++j) {
        const double xj = x[j];
        double* wrow = dW + static_cast<std::size_t>(j) * c;
        for (int k = 0; k < c; ++k) wrow[k] += xj * g[k];
      }
      for (int k = 0; k < c; ++k) db[k] += g[k];
    }
    return result;
  }

  const int h = model.hidden_dim;
  const double* W1 = model.params.data();
  const double* b1 = W1 + static_cast<std::size_t>(d) * h;
  const double* W2 = b1 + h;

  // Forward with cached hidden activations.
  std::vector<double> z(static_cast<std::size_t>(n) * h);
  ScoreMap scores = ScoreMap::zeros(features.height, features.width, c);
  {
    const double* b2 = W2 + static_cast<std::size_t>(h) * c;
    for (int i = 0; i < n; ++i) {
      const double* x = features.data.data() + static_cast<std::size_t>(i) * d;
      double* zi = z.data() + static_cast<std::size_t>(i) * h;
      for (int u = 0; u < h; ++u) zi[u] = b1[u];
      for (int j = 0; j < d; ++j) {
        const double xj = x[j];
        const double* wrow = W1 + static_cast<std::size_t>(j) * h;
        for (int u = 0; u < h; ++u) zi[u] += xj * wrow[u];
      }
      for (int u = 0; u < h; ++u) zi[u] = std::tanh(zi[u]);
      double* s = scores.data.data() + static_cast<std::size_t>(i) * c;
      for (int k = 0; k < c; ++k) s[k] = b2[k];
      for (int u = 0; u < h; ++u) {
        const double zu = zi[u];
        const double* wrow = W2 + static_cast<std::size_t>(u) * c;
        for (int k = 0; k < c; ++k) s[k] += zu * wrow[k];
      }
    }
  }

  const LossResult lr = loss(scores, gt);
  result.loss_value = lr.value;

  double* dW1 = result.param_grads.data();
  double* db1 = dW1 + static_cast<std::size_t>(d) * h;
  double* dW2 = db1 + h;
  double* db2 = dW2 + static_cast<std::size_t>(h) * c;
  std::vector<double> da(static_cast<std::size_t>(h));
  for (int i = 0; i < n; ++i) {
    const double* x = features.data.data() + static_cast<std::size_t>(i) * d;
    const double* g = lr.gradient.data.data() + static_cast<std::size_t>(i) * c;
    const double* zi = z.data() + static_cast<std::size_t>(i) * h;
    for (int u = 0; u < h; ++u) {
      const double zu = zi[u];
      double* wrow = dW2 + static_cast<std::size_t>(u) * c;
      double dz = 0.0;
      const double* w2row = W2 + static_cast<std::size_t>(u) * c;
      for (int k = 0; k < c; ++k) {
        wrow[k] += zu * g[k];
        dz += w2row[k] * g[k];
      }
      da[static_cast<std::size_t>(u)] = dz * (1.0 - zu * zu);
    }
    for (int k = 0; k < c; ++k) db2[k] += g[k];
    for (int j = 0; j < d; ++j) {
      const double xj = x[j];
      double* wrow = dW1 + static_cast<std::size_t>(j) * h;
      for (int u = 0; u < h; ++u) wrow[u] += xj * da[static_cast<std::size_t>(u)];
    }
    for (int u = 0; u < h; ++u) db1[u] += da[static_cast<std::size_t>(u)];
  }
  return result;
}

AdamState AdamState::init(std::size_t params) {
  AdamState state;
  state.m.assign(params, 0.0);
  state.v.assign(params, 0.0);
  return state;
}

void step(Model& model, const std::vector<double>& grads,
          const TrainConfig& config, AdamState& state) {
  if (grads.size() != model.params.size() || state.m.size() != grads.size()) {
    throw Error(Errc::shape_mismatch, "optimizer state/gradient size mismatch");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    // decay acts on the pre-update weight, decoupled from the moment step
    model.params[i] =
        model.params[i] * (1.0 - config.learning_rate * config.weight_decay) -
        config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps_adam);
  }
}

namespace {

void check_split(const DataSplit& data, const char* what) {
  if (data.features.size() != data.masks.size() || data.masks.empty()) {
    throw Error(Errc::config_error,
                std::string(what) + " split is empty or inconsistent");
  }
}

/// Concatenates a group of images into one flat pixel batch.
void build_batch(const DataSplit& data, const std::vector<int>& order,
                 std::size_t first, std::size_t count, ScoreMap& feats,
                 LabelMask& gt) {
  int pixels = 0;
  for (std::size_t b = 0; b < count; ++b) {
    pixels += data.masks[static_cast<std::size_t>(order[first + b])].pixels();
  }
  const int d = data.features.front().classes;
  const int c = data.masks.front().classes;
  feats = ScoreMap::zeros(pixels, 1, d);
  gt.height = pixels;
  gt.width = 1;
  gt.classes = c;
  gt.data.resize(static_cast<std::size_t>(pixels));
  std::size_t pixel_off = 0;
  for (std::size_t b = 0; b < count; ++b) {
    const auto idx = static_cast<std::size_t>(order[first + b]);
    const ScoreMap& f = data.features[idx];
    const LabelMask& msk = data.masks[idx];
    std::copy(f.data.begin(), f.data.end(),
              feats.data.begin() + static_cast<std::ptrdiff_t>(pixel_off * d));
    std::copy(msk.data.begin(), msk.data.end(),
              gt.data.begin() + static_cast<std::ptrdiff_t>(pixel_off));
    pixel_off += static_cast<std::size_t>(msk.pixels());
  }
}

}  // namespace

ConfusionMatrix evaluate(const Model& model, const DataSplit& data) {
  check_split(data, "eval");
  ConfusionMatrix cm = ConfusionMatrix::zeros(model.classes);
  for (std::size_t i = 0; i < data.images(); ++i) {
    const ScoreMap scores = forward(model, data.features[i]);
    accumulate(cm, data.masks[i], argmax_predict(scores));
  }
  return cm;
}

double evaluate_loss(const Model& model, const DataSplit& data, const Loss& loss) {
  check_split(data, "eval");
  double weighted = 0.0;
  std::int64_t pixels = 0;
  for (std::size_t i = 0; i < data.images(); ++i) {
    const ScoreMap scores = forward(model, data.features[i]);
    const LossResult lr = loss(scores, data.masks[i]);
    weighted += lr.value * data.masks[i].pixels();
    pixels += data.masks[i].pixels();
  }
  return weighted / static_cast<double>(pixels);
}

TrainResult train(const DataSplit& train_data, const DataSplit& val_data,
                  const TrainConfig& config, const Loss& target_loss) {
  check_split(train_data, "train");
  check_split(val_data, "val");
  if (config.epochs < 0 || config.batch_images <= 0 ||
      config.learning_rate <= 0.0 || config.weight_decay < 0.0) {
    throw Error(Errc::config_error, "bad train config");
  }
  const int d = train_data.features.front().classes;
  const int c = train_data.masks.front().classes;
  const int warmup = config.warmup_epochs >= 0 ? config.warmup_epochs
                                               : config.epochs / 5;
  const std::unique_ptr<Loss> warmup_loss = make_ce_loss();

  TrainResult result;
  result.model = Model::init(config.model, d, config.hidden_dim, c, config.seed);
  if (config.epochs == 0) return result;

  AdamState state = AdamState::init(result.model.param_count());
  SplitMix64 shuffle_rng(SplitMix64::derive(config.seed, 0x5AFF1Eull));

  std::vector<int> order(train_data.images());
  std::iota(order.begin(), order.end(), 0);

  ScoreMap batch_feats;
  LabelMask batch_gt;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Loss& loss = epoch < warmup ? *warmup_loss : target_loss;
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::int64_t epoch_pixels = 0;
    int batch_index = 0;
    for (std::size_t first = 0; first < order.size();
         first += static_cast<std::size_t>(config.batch_images), ++batch_index) {
      const std::size_t count = std::min<std::size_t>(
          static_cast<std::size_t>(config.batch_images), order.size() - first);
      build_batch(train_data, order, first, count, batch_feats, batch_gt);
      BackwardResult back = backward(result.model, batch_feats, batch_gt, loss);
      if (!std::isfinite(back.loss_value)) {
        throw Error(Errc::numeric_error,
                    "non-finite loss at epoch " + std::to_string(epoch + 1) +
                        ", batch " + std::to_string(batch_index));
      }
      epoch_loss += back.loss_value * batch_gt.pixels();
      epoch_pixels += batch_gt.pixels();
      step(result.model, back.param_grads, config, state);
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_loss = epoch_loss / static_cast<double>(epoch_pixels);
    record.val_loss = evaluate_loss(result.model, val_data, loss);
    record.train_miou = report(evaluate(result.model, train_data)).miou;
    record.val_miou = report(evaluate(result.model, val_data)).miou;
    if (!std::isfinite(record.val_loss)) {
      throw Error(Errc::numeric_error,
                  "non-finite validation loss at epoch " +
                      std::to_string(epoch + 1));
    }
    result.log.records.push_back(record);
  }
  return result;
}

namespace {

void write_f64_le(std::ostream& out, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  unsigned char raw[8];
  for (int b = 0; b < 8; ++b) {
    raw[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(raw), 8);
}

double read_f64_le(std::istream& in) {
  unsigned char raw[8];
  in.read(reinterpret_cast<char*>(raw), 8);
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) {
    bits |= static_cast<std::uint64_t>(raw[b]) << (8 * b);
  }
  double value;
  std::memcpy(&value, &bits, sizeof value);
  return value;
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(Errc::io_failure, "cannot write " + path.string());
  }
  out << "MDL1 " << (model.kind == ModelKind::linear ? "linear" : "mlp1") << ' '
      << model.in_dim << ' ' << model.hidden_dim << ' ' << model.classes
      << '\n';
  for (double p : model.params) write_f64_le(out, p);
  if (!out) {
    throw Error(Errc::io_failure, "write failed for " + path.string());
  }
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(Errc::io_failure, "cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::malformed_header, path.string() + ": missing header");
  }
  std::istringstream header(line);
  std::string tag, kind;
  Model model;
  if (!(header >> tag >> kind >> model.in_dim >> model.hidden_dim >>
        model.classes) ||
      tag != "MDL1" || (kind != "linear" && kind != "mlp1")) {
    throw Error(Errc::malformed_header,
                path.string() + ": expected \"MDL1 <kind> <d> <h> <c>\"");
  }
  model.kind = kind == "linear" ? ModelKind::linear : ModelKind::mlp1;
  const std::size_t count =
      model.kind == ModelKind::linear
          ? linear_param_count(model.in_dim, model.classes)
          : mlp1_param_count(model.in_dim, model.hidden_dim, model.classes);
  model.params.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    model.params[i] = read_f64_le(in);
    if (!in) {
      throw Error(Errc::truncated_payload,
                  path.string() + ": expected " + std::to_string(count) +
                      " parameters");
    }
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw Error(Errc::truncated_payload,
                path.string() + ": trailing bytes after parameters");
  }
  return model;
}

void write_train_log_csv(const TrainLog& log, std::ostream& out) {
  out << "epoch,train_loss,val_loss,train_miou,val_miou\n";
  for (const EpochRecord& r : log.records) {
    out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ','
        << r.train_miou << ',' << r.val_miou << '\n';
  }
}

}  // namespace segcal
