#ifndef SEGCAL_BOUNDS_HPP
#define SEGCAL_BOUNDS_HPP

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "segcal/calibration.hpp"
#include "segcal/losses.hpp"
#include "segcal/metrics.hpp"

namespace segcal {

/// Empirical error probabilities derived from a confusion matrix:
/// p_k0[k] = P(gt k, predicted non-k), p_0k[k] = P(gt non-k, predicted k),
/// p_k[k] = P(gt k), all relative to the total pixel count n.
struct ErrorProbs {
  std::vector<double> p_k0;
  std::vector<double> p_0k;
  std::vector<double> p_k;
  std::int64_t n = 0;
};

ErrorProbs error_probs(const ConfusionMatrix& cm);

enum class SurrogateKind { rho_margin, calibrated_log };

/// Per-class surrogate error bounds over a pixel batch:
///   ell_k0[k] = (1/n) sum_{i in Y_k}  phi_{rho_k0[k]}( lambda_ik)
///   ell_0k[k] = (1/n) sum_{i not in Y_k} phi_{rho_0k[k]}(-lambda_ik)
/// with phi the rho-margin loss or the calibrated log-loss.
struct SurrogateEll {
  std::vector<double> ell_k0;
  std::vector<double> ell_0k;
};

SurrogateEll surrogate_ell(const ScoreMap& scores, const LabelMask& gt,
                           const MarginOffsets& offsets, SurrogateKind kind);
SurrogateEll surrogate_ell(std::span<const ScoreMap> scores,
                           std::span<const LabelMask> gts,
                           const MarginOffsets& offsets, SurrogateKind kind);

/// Lower bounds (p_k - ell_k0) / (p_k + ell_0k) per class. 0/0 resolves to 1
/// mirroring the empirical IoU convention; a zero denominator with non-zero
/// numerator marks the class invalid (NaN value). Classes whose numerator is
/// negative keep their (negative) value but are flagged.
struct IouLowerBound {
  std::vector<double> per_class;
  std::vector<bool> valid;
  std::vector<bool> negative_numerator;
  double miou_lower = 0.0;  // mean over all classes; NaN if any is invalid
};

IouLowerBound iou_lower_bound(const ErrorProbs& probs, const SurrogateEll& ell);

/// Inputs of the generalization error bound. F is a user-supplied proxy for
/// the hypothesis-class complexity; when include_sigma is set, the low-order
/// term sigma(1/eta) = (rho_max / 4c) sqrt(2 m log(2c / eta)) is added to it.
struct BoundConfig {
  double F = 1.0;
  double eta = 0.05;
  int m = 0;        // pixels per image
  int classes = 0;  // c
  bool include_sigma = false;
};

double sigma_term(double eta, int m, int classes, double rho_max);

/// epsilon_k = (sqrt(n - n_k) + sqrt(n_k) / mu_k)
///           / (n_k rho_0k[k] / (4 c F) - sqrt(n - n_k)), valid only where
/// the denominator is positive. epsilon averages over all c classes and is
/// NaN when any class is invalid; epsilon_valid_only restricts the mean to
/// valid classes.
struct BoundReport {
  int classes = 0;
  std::vector<double> rho_0k, rho_k0, mu_k;  // audit copies
  std::vector<double> epsilon_k;
  std::vector<bool> valid;
  double epsilon = 0.0;
  double epsilon_valid_only = 0.0;
  bool vacuous = false;  // every class invalid
  double effective_F = 0.0;

  // Optional sections, filled when model scores are available.
  std::vector<double> ell_k0, ell_0k;
  std::vector<double> iou_lower;
  double miou_lower = std::numeric_limits<double>::quiet_NaN();
};

BoundReport epsilon_bound(const ClassStats& stats, const MarginOffsets& offsets,
                          const BoundConfig& bc);

/// Random-search check of the closed-form offset optimality: perturbs the
/// rho_0k vector `trials` times keeping its sum and the mu_k fixed, and
/// verifies epsilon(calibrated) <= epsilon(perturbed) within tolerance.
/// Perturbations that make a class invalid count as infinitely worse.
struct OptimalityVerdict {
  bool optimal = true;
  int trials = 0;
  double eps_calibrated = 0.0;
  double worst_margin = 0.0;  // max over trials of eps_cal - eps_perturbed
  std::vector<double> worst_perturbation;
  bool vacuous_calibrated = false;
};

OptimalityVerdict verify_optimality(const ClassStats& stats,
                                    const CalibConfig& config,
                                    const BoundConfig& bc, int trials,
                                    std::uint64_t seed = 0x5eedb0b5ull,
                                    double rel_tolerance = 1e-9);

/// CSV: one row per class plus a summary row; vacuous classes carry an
/// explicit flag column.
void write_bound_csv(const BoundReport& report, std::ostream& out);

}  // namespace segcal

#endif  // SEGCAL_BOUNDS_HPP
