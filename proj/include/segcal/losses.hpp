#ifndef SEGCAL_LOSSES_HPP
#define SEGCAL_LOSSES_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "segcal/calibration.hpp"
#include "segcal/core_types.hpp"

namespace segcal {

/// Per-pixel, per-class margins: lambda_ik = s_ik - max_{j != k} s_ij.
/// Same layout as the ScoreMap it derives from.
struct MarginField {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<double> data;

  int pixels() const { return height * width; }
  double at(int pixel, int k) const {
    return data[static_cast<std::size_t>(pixel) * classes + k];
  }
};

/// Loss value plus the exact analytic gradient with respect to every score.
struct LossResult {
  double value = 0.0;
  ScoreMap gradient;
};

struct BaselineParams {
  double focal_gamma = 2.0;
  double tversky_alpha = 0.3;
  double tversky_beta = 0.7;
  double dice_smooth = 1e-6;
  std::optional<std::vector<double>> class_weights;
};

MarginField margins(const ScoreMap& scores);

/// rho-margin loss: min(1, max(0, 1 - lambda/rho)). 1 for lambda <= 0,
/// 0 for lambda >= rho. Not used for training (its gradient blows up for
/// small rho); surrogate evaluation only.
double rho_margin(double lambda, double rho);

/// rho-calibrated log-loss log2(1 + 2^(rho - lambda)), overflow-safe for
/// |rho - lambda| in the hundreds. Upper-bounds rho_margin everywhere and
/// equals 1 at lambda = rho.
double calibrated_log(double lambda, double rho);
/// d calibrated_log / d lambda = -1 / (1 + 2^(lambda - rho)).
double calibrated_log_dlambda(double lambda, double rho);

/// Margin-calibrated loss over a pixel batch:
///   (1/n) sum_k [ sum_{i in Y_k} cal_log(lambda_ik; rho_k0[k])
///               + sum_{i not in Y_k} cal_log(-lambda_ik; rho_0k[k]) ].
/// The max_{j != k} subgradient goes wholly to the lowest-index maximizer.
LossResult mc_loss(const ScoreMap& scores, const LabelMask& gt,
                   const MarginOffsets& offsets);

/// Mean softmax cross-entropy (natural log), optional per-class weights.
LossResult ce_loss(const ScoreMap& scores, const LabelMask& gt,
                   const std::optional<std::vector<double>>& class_weights = {});

/// Focal loss: mean of (1 - p_y)^gamma * (-log p_y). gamma = 0 is exactly
/// cross-entropy.
LossResult focal_loss(const ScoreMap& scores, const LabelMask& gt, double gamma);

/// Soft dice on softmax probabilities, class-averaged:
///   1 - (1/c) sum_k (2 I_k + smooth) / (P_k + G_k + smooth).
LossResult dice_loss(const ScoreMap& scores, const LabelMask& gt, double smooth);

/// Soft Tversky, class-averaged; the smoothing terms are placed so that
/// alpha = beta = 0.5 reduces exactly to dice_loss with the same smooth:
///   1 - (1/c) sum_k (2 TP_k + smooth) /
///             (2 (TP_k + alpha FP_k + beta FN_k) + smooth).
LossResult tversky_loss(const ScoreMap& scores, const LabelMask& gt,
                        double alpha, double beta, double smooth);

/// Lovasz-softmax: per class present in the ground truth, sort the error
/// vector (1 - p for foreground, p for background) descending and take its
/// dot product with the discrete Jaccard-loss differences of sorted-prefix
/// sets; mean over present classes. Softmax applied to the scores first.
LossResult lovasz_softmax_loss(const ScoreMap& scores, const LabelMask& gt);

/// Probability-level Lovasz extension (no softmax); `probs` holds values in
/// [0, 1] and the gradient is taken with respect to them. At hard 0/1
/// probabilities the value equals the mean per-class discrete Jaccard loss
/// of the corresponding prediction.
LossResult lovasz_softmax_probs(const ScoreMap& probs, const LabelMask& gt);

/// Pairwise (tree) summation; the fixed reduction order that every loss
/// uses so results are reproducible bit-for-bit.
double pairwise_sum(const double* values, std::size_t count);

// Loss objects; the batch-level interface shared by the trainer and the
// experiment runner.
class Loss {
 public:
  virtual ~Loss() = default;
  virtual LossResult operator()(const ScoreMap& scores,
                                const LabelMask& gt) const = 0;
  virtual std::string name() const = 0;
};

std::unique_ptr<Loss> make_ce_loss(
    std::optional<std::vector<double>> class_weights = {});
std::unique_ptr<Loss> make_focal_loss(double gamma);
std::unique_ptr<Loss> make_dice_loss(double smooth);
std::unique_ptr<Loss> make_tversky_loss(double alpha, double beta, double smooth);
std::unique_ptr<Loss> make_lovasz_loss();
std::unique_ptr<Loss> make_mc_loss(MarginOffsets offsets);

/// Convex combination w * first + (1 - w) * second, w in [0, 1].
std::unique_ptr<Loss> combine(std::unique_ptr<Loss> first,
                              std::unique_ptr<Loss> second, double w);

}  // namespace segcal

#endif  // SEGCAL_LOSSES_HPP
