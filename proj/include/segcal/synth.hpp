#ifndef SEGCAL_SYNTH_HPP
#define SEGCAL_SYNTH_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "segcal/core_types.hpp"

namespace segcal {

/// Deterministic synthetic imbalanced segmentation dataset. Masks are unions
/// of random axis-aligned rectangles and ellipses per class over a class-0
/// background; features are one-hot class prototypes plus isotropic Gaussian
/// noise, so the task is linearly separable at noise_sigma = 0.
struct SynthSpec {
  std::uint64_t seed = 1;
  int images = 1;
  int height = 32;
  int width = 32;
  int classes = 2;
  std::vector<double> target_frequencies;  // c positive reals summing to 1
  double noise_sigma = 0.0;
  int feature_channels = 0;  // d >= classes

  void validate() const;
};

struct SynthDataset {
  SynthSpec spec;
  std::vector<ScoreMap> features;  // classes field = feature_channels
  std::vector<LabelMask> masks;
  std::vector<std::int64_t> realized_counts;  // per-class pixels, dataset-wide
};

/// Deterministic given spec.seed (SplitMix64 streams, one per image index).
/// Realized global frequencies are kept within +-20% relative of the target;
/// an explicit error is raised when the requested areas cannot be placed.
SynthDataset generate(const SynthSpec& spec);

/// Writes feat_NNNN.scr / mask_NNNN.msk plus manifest.tsv into `dir`.
void write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);

/// JSON spec file with the SynthSpec field names as keys.
SynthSpec load_synth_spec(const std::filesystem::path& path);
void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path);

}  // namespace segcal

#endif  // SEGCAL_SYNTH_HPP
