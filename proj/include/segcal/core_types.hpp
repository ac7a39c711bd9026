#ifndef SEGCAL_CORE_TYPES_HPP
#define SEGCAL_CORE_TYPES_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segcal/error.hpp"

namespace segcal {

/// Per-pixel ground-truth class indices for one image. Indices are 0-based
/// and strictly below `classes`. Row-major storage.
struct LabelMask {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<std::uint8_t> data;

  int pixels() const { return height * width; }
  std::uint8_t at(int pixel) const { return data[static_cast<std::size_t>(pixel)]; }

  /// Validates the invariants (c >= 2, every index < c, length = h*w).
  static LabelMask create(int height, int width, int classes,
                          std::vector<std::uint8_t> data);
};

/// Per-pixel, per-class real scores. Pixel-major then class, so the scores
/// for pixel i occupy data[i*classes .. i*classes+classes). Also used as the
/// container for d-dimensional feature rasters (classes = d).
struct ScoreMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<double> data;

  int pixels() const { return height * width; }
  double at(int pixel, int k) const {
    return data[static_cast<std::size_t>(pixel) * classes + k];
  }
  double& at(int pixel, int k) {
    return data[static_cast<std::size_t>(pixel) * classes + k];
  }

  static ScoreMap zeros(int height, int width, int classes);
  /// Validates finiteness and length.
  static ScoreMap create(int height, int width, int classes,
                         std::vector<double> data);
};

/// Argmax class per pixel, ties broken by lowest class index.
struct PredMask {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<std::uint8_t> data;

  int pixels() const { return height * width; }
  std::uint8_t at(int pixel) const { return data[static_cast<std::size_t>(pixel)]; }
};

struct ManifestEntry {
  std::filesystem::path scores_path;
  std::filesystem::path mask_path;
};

/// Ordered list of (scores or features, mask) file pairs sharing class count
/// and pixels-per-image.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int classes = 0;
  int pixels_per_image = 0;
};

PredMask argmax_predict(const ScoreMap& scores);

// Binary raster I/O. Mask files: "MSK1 <h> <w> <c>\n" + h*w uint8 indices.
// Score files: "SCR1 <h> <w> <c>\n" + h*w*c little-endian float32,
// pixel-major. Round-trips are bit-exact on the 32-bit payload; save_scores
// therefore requires every value to be exactly representable in float32
// (everything the toolkit produces for files is quantized that way).
LabelMask load_mask(const std::filesystem::path& path, int classes);
void save_mask(const LabelMask& mask, const std::filesystem::path& path);
ScoreMap load_scores(const std::filesystem::path& path);
void save_scores(const ScoreMap& scores, const std::filesystem::path& path);

/// Rounds every value through IEEE-754 binary32 so a save/load cycle is the
/// identity on the in-memory map as well as on the payload.
void quantize_to_f32(ScoreMap& scores);

/// Manifest file: one "scores_path<TAB>mask_path" per line, '#' comments.
/// Relative paths resolve against the manifest's directory. Classes and
/// pixels-per-image are read from the first mask header and every entry is
/// checked against them when `verify_headers` is set.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              bool verify_headers = false);
void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path);

}  // namespace segcal

#endif  // SEGCAL_CORE_TYPES_HPP
