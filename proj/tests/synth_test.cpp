#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "segcal/calibration.hpp"
#include "segcal/synth.hpp"
#include "test_support.hpp"

using namespace segcal;

namespace {

SynthSpec base_spec() {
  SynthSpec spec;
  spec.seed = 2024;
  spec.images = 100;
  spec.height = 32;
  spec.width = 32;
  spec.classes = 3;
  spec.target_frequencies = {0.89, 0.10, 0.01};
  spec.noise_sigma = 0.5;
  spec.feature_channels = 8;
  return spec;
}

}  // namespace

TEST_CASE("generation is bit-identical under the same seed") {
  const SynthSpec spec = base_spec();
  const SynthDataset a = generate(spec);
  const SynthDataset b = generate(spec);
  REQUIRE(a.masks.size() == b.masks.size());
  for (std::size_t i = 0; i < a.masks.size(); ++i) {
    CHECK(a.masks[i].data == b.masks[i].data);
    CHECK(a.features[i].data == b.features[i].data);
  }

  SynthSpec other = spec;
  other.seed = 2025;
  const SynthDataset c = generate(other);
  bool any_difference = false;
  for (std::size_t i = 0; i < a.masks.size() && !any_difference; ++i) {
    any_difference = a.masks[i].data != c.masks[i].data;
  }
  CHECK(any_difference);
}

TEST_CASE("noiseless features are exact one-hot prototypes") {
  SynthSpec spec = base_spec();
  spec.noise_sigma = 0.0;
  spec.images = 10;
  const SynthDataset ds = generate(spec);
  for (std::size_t img = 0; img < ds.masks.size(); ++img) {
    const LabelMask& mask = ds.masks[img];
    const ScoreMap& feats = ds.features[img];
    for (int i = 0; i < mask.pixels(); ++i) {
      for (int j = 0; j < spec.feature_channels; ++j) {
        CHECK(feats.at(i, j) == (j == mask.at(i) ? 1.0 : 0.0));
      }
    }
  }
}

TEST_CASE("realized frequencies stay within 20% of the target") {
  const SynthSpec spec = base_spec();
  const SynthDataset ds = generate(spec);
  const ClassStats stats =
      class_stats(std::span<const LabelMask>(ds.masks), spec.height * spec.width);
  const double total = static_cast<double>(stats.total);
  for (int k = 0; k < spec.classes; ++k) {
    const double realized =
        static_cast<double>(stats.pixel_counts[static_cast<std::size_t>(k)]) / total;
    const double target = spec.target_frequencies[static_cast<std::size_t>(k)];
    CHECK(std::abs(realized - target) <= 0.20 * target);
    CHECK(stats.pixel_counts[static_cast<std::size_t>(k)] > 0);
  }
}

TEST_CASE("infeasible frequency requests raise an explicit error") {
  SynthSpec spec = base_spec();
  spec.images = 1;
  spec.height = 8;
  spec.width = 8;
  spec.target_frequencies = {0.999, 0.0005, 0.0005};
  try {
    generate(spec);
    FAIL("expected infeasibility error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::config_error);
    CHECK(std::string(e.what()).find("infeasible") != std::string::npos);
  }
}

TEST_CASE("spec validation rejects malformed requests") {
  SynthSpec spec = base_spec();
  spec.feature_channels = 2;  // < classes
  CHECK_THROWS_AS(generate(spec), Error);

  spec = base_spec();
  spec.target_frequencies = {0.5, 0.4, 0.2};  // sums to 1.1
  CHECK_THROWS_AS(generate(spec), Error);

  spec = base_spec();
  spec.target_frequencies = {0.9, 0.1};  // wrong length
  CHECK_THROWS_AS(generate(spec), Error);

  spec = base_spec();
  spec.noise_sigma = -0.5;
  CHECK_THROWS_AS(generate(spec), Error);
}

TEST_CASE("written datasets load back identically") {
  namespace fs = std::filesystem;
  SynthSpec spec = base_spec();
  spec.images = 6;
  const SynthDataset ds = generate(spec);
  const fs::path dir = fs::temp_directory_path() / "segcal_synth_test";
  fs::remove_all(dir);
  write_dataset(ds, dir);

  const DatasetManifest manifest = load_manifest(dir / "manifest.tsv", true);
  REQUIRE(manifest.entries.size() == ds.masks.size());
  CHECK(manifest.classes == spec.classes);
  CHECK(manifest.pixels_per_image == spec.height * spec.width);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const LabelMask mask = load_mask(manifest.entries[i].mask_path, spec.classes);
    CHECK(mask.data == ds.masks[i].data);
    const ScoreMap feats = load_scores(manifest.entries[i].scores_path);
    CHECK(feats.classes == spec.feature_channels);
    CHECK(feats.data == ds.features[i].data);  // quantized at generation
  }
}

TEST_CASE("synth spec JSON round-trips") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "segcal_synth_spec.json";
  const SynthSpec spec = base_spec();
  save_synth_spec(spec, path);
  const SynthSpec loaded = load_synth_spec(path);
  CHECK(loaded.seed == spec.seed);
  CHECK(loaded.images == spec.images);
  CHECK(loaded.height == spec.height);
  CHECK(loaded.width == spec.width);
  CHECK(loaded.classes == spec.classes);
  CHECK(loaded.target_frequencies == spec.target_frequencies);
  CHECK(loaded.noise_sigma == spec.noise_sigma);
  CHECK(loaded.feature_channels == spec.feature_channels);
}
