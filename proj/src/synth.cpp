#include "segcal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "segcal/rng.hpp"

namespace segcal {

void SynthSpec::validate() const {
  if (images <= 0 || height <= 0 || width <= 0) {
    throw Error(Errc::config_error, "synth spec needs positive dimensions");
  }
  if (classes < 2 || classes > 256) {
    throw Error(Errc::config_error, "synth spec needs classes in [2, 256]");
  }
  if (feature_channels < classes) {
    throw Error(Errc::config_error, "feature_channels must be >= classes");
  }
  if (noise_sigma < 0.0) {
    throw Error(Errc::config_error, "noise_sigma must be non-negative");
  }
  if (static_cast<int>(target_frequencies.size()) != classes) {
    throw Error(Errc::config_error, "target_frequencies must list c entries");
  }
  double sum = 0.0;
  for (double f : target_frequencies) {
    if (f <= 0.0) {
      throw Error(Errc::config_error, "target frequencies must be positive");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(Errc::config_error, "target frequencies must sum to 1");
  }
}

namespace {

/// Per-image pixel quota for class k, spread Bresenham-style so the quotas
/// sum to round(f_k * m * images) over the dataset and every image's quota
/// depends only on its index.
int image_quota(double freq, int pixels, int image_index) {
  const double per_image = freq * pixels;
  return static_cast<int>(std::llround(per_image * (image_index + 1)) -
                          std::llround(per_image * image_index));
}

struct Painter {
  int height;
  int width;
  std::vector<std::uint8_t>& mask;
  std::vector<int>& counts;

  void set(int x, int y, int cls) {
    const std::size_t idx = static_cast<std::size_t>(y) * width + x;
    const int old = mask[idx];
    if (old == cls) return;
    --counts[static_cast<std::size_t>(old)];
    ++counts[static_cast<std::size_t>(cls)];
    mask[idx] = static_cast<std::uint8_t>(cls);
  }

  void rectangle(SplitMix64& rng, int cls, int area) {
    const double aspect = rng.uniform(0.5, 2.0);
    int w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))),
                       1, width);
    int h = std::clamp((area + w - 1) / w, 1, height);
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(width - w + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(height - h + 1)));
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) set(x, y, cls);
    }
  }

  void ellipse(SplitMix64& rng, int cls, int area) {
    const double aspect = rng.uniform(0.5, 2.0);
    const double rx = std::max(0.5, std::sqrt(area * aspect / 3.14159265358979));
    const double ry = std::max(0.5, area / (3.14159265358979 * rx));
    const double cx = rng.uniform(0.0, width - 1.0);
    const double cy = rng.uniform(0.0, height - 1.0);
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - rx)));
    const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(cx + rx)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - ry)));
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(cy + ry)));
    for (int y = y_lo; y <= y_hi; ++y) {
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) set(x, y, cls);
      }
    }
  }
};

}  // namespace

SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  const int m = spec.height * spec.width;
  for (int k = 0; k < spec.classes; ++k) {
    if (spec.target_frequencies[static_cast<std::size_t>(k)] * m * spec.images < 1.0) {
      throw Error(Errc::config_error,
                  "infeasible frequencies: class " + std::to_string(k) +
                      " would receive < 1 pixel in the whole dataset");
    }
  }

  // Rarer classes paint last so earlier (larger) classes cannot bury them.
  std::vector<int> paint_order;
  for (int k = 1; k < spec.classes; ++k) paint_order.push_back(k);
  std::sort(paint_order.begin(), paint_order.end(), [&](int a, int b) {
    const double fa = spec.target_frequencies[static_cast<std::size_t>(a)];
    const double fb = spec.target_frequencies[static_cast<std::size_t>(b)];
    if (fa != fb) return fa > fb;
    return a < b;
  });

  SynthDataset ds;
  ds.spec = spec;
  ds.realized_counts.assign(static_cast<std::size_t>(spec.classes), 0);
  ds.features.reserve(static_cast<std::size_t>(spec.images));
  ds.masks.reserve(static_cast<std::size_t>(spec.images));

  for (int img = 0; img < spec.images; ++img) {
    SplitMix64 rng(SplitMix64::derive(spec.seed, static_cast<std::uint64_t>(img)));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(m), 0);
    std::vector<int> counts(static_cast<std::size_t>(spec.classes), 0);
    counts[0] = m;
    Painter painter{spec.height, spec.width, mask, counts};

    for (int cls : paint_order) {
      const int quota =
          image_quota(spec.target_frequencies[static_cast<std::size_t>(cls)], m, img);
      for (int attempt = 0; attempt < 256; ++attempt) {
        const int remaining = quota - counts[static_cast<std::size_t>(cls)];
        if (remaining <= 0) break;
        int area = remaining <= 4
                       ? remaining
                       : 1 + static_cast<int>(rng.uniform(0.25, 1.0) * remaining);
        area = std::min(area, m);
        if (rng.next() & 1) {
          painter.rectangle(rng, cls, area);
        } else {
          painter.ellipse(rng, cls, area);
        }
      }
    }

    for (int k = 0; k < spec.classes; ++k) {
      ds.realized_counts[static_cast<std::size_t>(k)] += counts[static_cast<std::size_t>(k)];
    }

    ScoreMap feats = ScoreMap::zeros(spec.height, spec.width, spec.feature_channels);
    for (int i = 0; i < m; ++i) {
      const int y = mask[static_cast<std::size_t>(i)];
      for (int j = 0; j < spec.feature_channels; ++j) {
        double v = (j == y ? 1.0 : 0.0);
        if (spec.noise_sigma > 0.0) {
          double z = rng.normal();
          double sel = rng.uniform();
          v += spec.noise_sigma * (sel < 0.05 ? 6.0 : 1.0) * z;
        }
        feats.at(i, j) = v;
      }
    }
    // Quantize so the in-memory dataset matches its on-disk form exactly.
    quantize_to_f32(feats);

    ds.features.push_back(std::move(feats));
    ds.masks.push_back(LabelMask{spec.height, spec.width, spec.classes, std::move(mask)});
  }

  const double total = static_cast<double>(m) * spec.images;
  for (int k = 0; k < spec.classes; ++k) {
    const double realized = static_cast<double>(ds.realized_counts[static_cast<std::size_t>(k)]) / total;
    const double target = spec.target_frequencies[static_cast<std::size_t>(k)];
    if (std::abs(realized - target) > 0.20 * target) {
      throw Error(Errc::config_error,
                  "infeasible frequencies: class " + std::to_string(k) +
                      " realized " + std::to_string(realized) + " vs target " +
                      std::to_string(target));
    }
  }
  return ds;
}

void write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  manifest.classes = dataset.spec.classes;
  manifest.pixels_per_image = dataset.spec.height * dataset.spec.width;
  char name[32];
  for (std::size_t i = 0; i < dataset.masks.size(); ++i) {
    std::snprintf(name, sizeof name, "feat_%04zu.scr", i);
    const std::filesystem::path feat_path = dir / name;
    std::snprintf(name, sizeof name, "mask_%04zu.msk", i);
    const std::filesystem::path mask_path = dir / name;
    save_scores(dataset.features[i], feat_path);
    save_mask(dataset.masks[i], mask_path);
    manifest.entries.push_back({feat_path.filename(), mask_path.filename()});
  }
  save_manifest(manifest, dir / "manifest.tsv");
}

SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::io_failure, "cannot open " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
    SynthSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.images = j.at("images").get<int>();
    spec.height = j.at("height").get<int>();
    spec.width = j.at("width").get<int>();
    spec.classes = j.at("classes").get<int>();
    spec.target_frequencies = j.at("target_frequencies").get<std::vector<double>>();
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    spec.feature_channels = j.at("feature_channels").get<int>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config_error,
                path.string() + ": bad synth spec: " + e.what());
  }
}

void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path) {
  spec.validate();
  nlohmann::json j{{"seed", spec.seed},
                   {"images", spec.images},
                   {"height", spec.height},
                   {"width", spec.width},
                   {"classes", spec.classes},
                   {"target_frequencies", spec.target_frequencies},
                   {"noise_sigma", spec.noise_sigma},
                   {"feature_channels", spec.feature_channels}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(Errc::io_failure, "cannot write " + path.string());
  }
  out << j.dump(2) << '\n';
}

}  // namespace segcal
