#ifndef SEGCAL_TRAINER_HPP
#define SEGCAL_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "segcal/losses.hpp"
#include "segcal/metrics.hpp"

namespace segcal {

enum class ModelKind { linear, mlp1 };

/// Dense pixel classifier over d-dimensional per-pixel features.
/// linear: scores = W x + b. mlp1: scores = W2 tanh(W1 x + b1) + b2.
/// Parameters are packed in that block order.
struct Model {
  ModelKind kind = ModelKind::linear;
  int in_dim = 0;      // d
  int hidden_dim = 0;  // h (0 for linear)
  int classes = 0;     // c
  std::vector<double> params;

  std::size_t param_count() const { return params.size(); }

  /// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per block.
  static Model init(ModelKind kind, int in_dim, int hidden_dim, int classes,
                    std::uint64_t seed);
};

/// Scores for a feature batch (features.classes = d); output n x c.
ScoreMap forward(const Model& model, const ScoreMap& features);

struct BackwardResult {
  double loss_value = 0.0;
  std::vector<double> param_grads;
};

/// Runs forward, evaluates the loss, and chain-rules the loss gradient back
/// onto the parameters.
BackwardResult backward(const Model& model, const ScoreMap& features,
                        const LabelMask& gt, const Loss& loss);

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  int batch_images = 8;
  int epochs = 50;
  int warmup_epochs = -1;  // -1: 20% of epochs; warm-up trains with CE
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  ModelKind model = ModelKind::linear;
  int hidden_dim = 16;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  static AdamState init(std::size_t params);
};

/// One AdamW update: bias-corrected moments, decay applied directly to the
/// weights (w *= 1 - lr * wd), not through the gradient.
void step(Model& model, const std::vector<double>& grads,
          const TrainConfig& config, AdamState& state);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_miou = 0.0;
  double val_miou = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;
};

struct DataSplit {
  std::vector<ScoreMap> features;
  std::vector<LabelMask> masks;

  std::size_t images() const { return masks.size(); }
};

struct TrainResult {
  Model model;
  TrainLog log;
};

/// Deterministic mini-batch training: seeded shuffling, sequential batch
/// reduction, AdamW updates. Epochs before `warmup_epochs` use plain CE,
/// the rest use `target_loss`. Per-epoch mIoU is evaluated over the full
/// split through a global confusion matrix. A non-finite loss aborts with a
/// numeric error naming the epoch and batch.
TrainResult train(const DataSplit& train_data, const DataSplit& val_data,
                  const TrainConfig& config, const Loss& target_loss);

/// Global confusion matrix of the model's argmax predictions over a split.
ConfusionMatrix evaluate(const Model& model, const DataSplit& data);
/// Pixel-weighted mean loss over a split, without updates.
double evaluate_loss(const Model& model, const DataSplit& data, const Loss& loss);

/// Checkpoint: "MDL1 <kind> <d> <h> <c>\n" + parameters as little-endian
/// IEEE-754 doubles in block order.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

/// CSV: epoch,train_loss,val_loss,train_miou,val_miou.
void write_train_log_csv(const TrainLog& log, std::ostream& out);

}  // namespace segcal

#endif  // SEGCAL_TRAINER_HPP
