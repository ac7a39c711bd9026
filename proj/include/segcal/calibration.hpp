#ifndef SEGCAL_CALIBRATION_HPP
#define SEGCAL_CALIBRATION_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "segcal/core_types.hpp"

namespace segcal {

/// Dataset label distribution: exact per-class pixel counts n_k, total n,
/// and pixels-per-image m.
struct ClassStats {
  int classes = 0;
  std::vector<std::int64_t> pixel_counts;
  std::int64_t total = 0;
  int pixels_per_image = 0;

  double frequency(int k) const {
    return static_cast<double>(pixel_counts[static_cast<std::size_t>(k)]) /
           static_cast<double>(total);
  }
  std::vector<double> frequencies() const;
  /// Classes with zero pixels; calibration is undefined for them and falls
  /// back to the largest computed offset.
  std::vector<int> zero_classes() const;

  static ClassStats from_counts(std::vector<std::int64_t> counts,
                                int pixels_per_image);
};

struct CalibConfig {
  double tau = 10.0;     // offset scale: mean of rho_0k over calibrated classes
  double upsilon = 1.0;  // ratio hyper-parameter entering mu_k
};

/// Per-class margin-offsets. rho_k0[k] = mu_k[k] * rho_0k[k]; across classes
/// the ratios rho_0k[i]/rho_0k[j] = (n_j/n_i) * sqrt(n-n_i)/sqrt(n-n_j).
struct MarginOffsets {
  std::vector<double> rho_0k;
  std::vector<double> rho_k0;
  std::vector<double> mu_k;
  CalibConfig config;
  /// Zero-count classes that were assigned the fallback (maximum) offset.
  std::vector<int> fallback_classes;

  int classes() const { return static_cast<int>(rho_0k.size()); }
  double rho_max() const;
};

/// Exact pixel counts over all masks referenced by the manifest.
ClassStats class_stats(const DatasetManifest& manifest);
ClassStats class_stats(std::span<const LabelMask> masks, int pixels_per_image);

/// Smallest upsilon for which class k's mu denominator stays positive.
double min_admissible_upsilon(const ClassStats& stats, int k);

/// mu_k = p_k sqrt(n_k) / (upsilon (n - n_k) - p_k sqrt(n - n_k)), the
/// ratio rho_k0 / rho_0k that the offset calibration fixes per class.
/// Throws a calibration error naming the class and the minimal admissible
/// upsilon when the denominator is not positive.
std::vector<double> compute_mu(const ClassStats& stats, double upsilon);

/// Closed-form offsets: rho_0k proportional to sqrt(n - n_k) / n_k,
/// normalized so the mean over calibrated classes equals tau, with
/// rho_k0 = mu_k * rho_0k.
MarginOffsets compute_offsets(const ClassStats& stats, const CalibConfig& config);

/// Text format: "RHO1 <c> <tau> <upsilon>\n" then one
/// "k rho_0k rho_k0 mu_k" line per class, >= 15 significant digits.
void save_offsets(const MarginOffsets& offsets, const std::filesystem::path& path);
MarginOffsets load_offsets(const std::filesystem::path& path);

}  // namespace segcal

#endif  // SEGCAL_CALIBRATION_HPP
