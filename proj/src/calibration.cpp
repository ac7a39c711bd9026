#include "segcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace segcal {

std::vector<double> ClassStats::frequencies() const {
  std::vector<double> p(classes);
  for (int k = 0; k < classes; ++k) p[k] = frequency(k);
  return p;
}

std::vector<int> ClassStats::zero_classes() const {
  std::vector<int> zs;
  for (int k = 0; k < classes; ++k) {
    if (pixel_counts[static_cast<std::size_t>(k)] == 0) zs.push_back(k);
  }
  return zs;
}

ClassStats ClassStats::from_counts(std::vector<std::int64_t> counts,
                                   int pixels_per_image) {
  ClassStats stats;
  stats.classes = static_cast<int>(counts.size());
  if (stats.classes < 2) {
    throw Error(Errc::config_error, "class stats need >= 2 classes");
  }
  stats.pixel_counts = std::move(counts);
  for (std::int64_t c : stats.pixel_counts) {
    if (c < 0) throw Error(Errc::config_error, "negative class count");
    stats.total += c;
  }
  if (stats.total <= 0) {
    throw Error(Errc::config_error, "class stats over zero pixels");
  }
  stats.pixels_per_image = pixels_per_image;
  return stats;
}

ClassStats class_stats(std::span<const LabelMask> masks, int pixels_per_image) {
  if (masks.empty()) {
    throw Error(Errc::config_error, "class stats over empty mask list");
  }
  std::vector<std::int64_t> counts(static_cast<std::size_t>(masks[0].classes), 0);
  for (const LabelMask& mask : masks) {
    if (mask.classes != masks[0].classes) {
      throw Error(Errc::shape_mismatch, "masks disagree on class count");
    }
    for (std::uint8_t y : mask.data) ++counts[y];
  }
  return ClassStats::from_counts(std::move(counts), pixels_per_image);
}

ClassStats class_stats(const DatasetManifest& manifest) {
  if (manifest.entries.empty()) {
    throw Error(Errc::config_error, "class stats over empty manifest");
  }
  std::vector<std::int64_t> counts;
  int pixels_per_image = 0;
  for (const auto& entry : manifest.entries) {
    LabelMask mask = load_mask(entry.mask_path, manifest.classes);
    if (counts.empty()) {
      counts.assign(static_cast<std::size_t>(mask.classes), 0);
      pixels_per_image = mask.pixels();
    } else if (mask.pixels() != pixels_per_image) {
      throw Error(Errc::shape_mismatch,
                  entry.mask_path.string() + ": pixels-per-image differs");
    }
    for (std::uint8_t y : mask.data) ++counts[y];
  }
  return ClassStats::from_counts(std::move(counts), pixels_per_image);
}

double MarginOffsets::rho_max() const {
  double m = 0.0;
  for (double v : rho_0k) m = std::max(m, v);
  for (double v : rho_k0) m = std::max(m, v);
  return m;
}

double min_admissible_upsilon(const ClassStats& stats, int k) {
  const double n = static_cast<double>(stats.total);
  const double nk = static_cast<double>(stats.pixel_counts[static_cast<std::size_t>(k)]);
  const double pk = nk / n;
  // upsilon (n - n_k) > p_k sqrt(n - n_k)
  return pk / std::sqrt(n - nk);
}

std::vector<double> compute_mu(const ClassStats& stats, double upsilon) {
  if (upsilon <= 0.0) {
    throw Error(Errc::config_error, "upsilon must be positive");
  }
  const double n = static_cast<double>(stats.total);
  std::vector<double> mu(stats.classes);
  for (int k = 0; k < stats.classes; ++k) {
    const double nk = static_cast<double>(stats.pixel_counts[static_cast<std::size_t>(k)]);
    if (nk == n) {
      throw Error(Errc::calibration_error,
                  "class " + std::to_string(k) +
                      " covers every pixel; mu undefined (n - n_k = 0)");
    }
    const double pk = nk / n;
    const double denom = upsilon * (n - nk) - pk * std::sqrt(n - nk);
    if (denom <= 0.0) {
      std::ostringstream msg;
      msg << "class " << k << ": upsilon " << upsilon
          << " makes the mu denominator non-positive; needs upsilon > "
          << std::setprecision(17) << min_admissible_upsilon(stats, k);
      throw Error(Errc::calibration_error, msg.str());
    }
    mu[k] = pk * std::sqrt(nk) / denom;
  }
  return mu;
}

MarginOffsets compute_offsets(const ClassStats& stats, const CalibConfig& config) {
  if (config.tau <= 0.0) {
    throw Error(Errc::config_error, "tau must be positive");
  }
  const double n = static_cast<double>(stats.total);
  MarginOffsets offsets;
  offsets.config = config;
  offsets.rho_0k.assign(static_cast<std::size_t>(stats.classes), 0.0);
  offsets.rho_k0.assign(static_cast<std::size_t>(stats.classes), 0.0);
  offsets.mu_k.assign(static_cast<std::size_t>(stats.classes), 0.0);

  // Unnormalized ratio weights sqrt(n - n_k) / n_k over calibrated classes.
  std::vector<double> weight(static_cast<std::size_t>(stats.classes), 0.0);
  double weight_sum = 0.0;
  int calibrated = 0;
  for (int k = 0; k < stats.classes; ++k) {
    const double nk = static_cast<double>(stats.pixel_counts[static_cast<std::size_t>(k)]);
    if (nk == 0.0) continue;
    weight[static_cast<std::size_t>(k)] = std::sqrt(n - nk) / nk;
    weight_sum += weight[static_cast<std::size_t>(k)];
    ++calibrated;
  }
  if (calibrated < 2) {
    throw Error(Errc::calibration_error,
                "offset calibration needs >= 2 classes with pixels");
  }

  // mu evaluates to 0 for zero-count classes (p_k = 0); those entries are
  // overwritten by the fallback assignment below.
  const std::vector<double> mu_full = compute_mu(stats, config.upsilon);

  const double mean_weight = weight_sum / calibrated;
  int argmax_offset = -1;
  double max_offset = 0.0;
  for (int k = 0; k < stats.classes; ++k) {
    if (stats.pixel_counts[static_cast<std::size_t>(k)] == 0) continue;
    const double rho = config.tau * weight[static_cast<std::size_t>(k)] / mean_weight;
    offsets.rho_0k[static_cast<std::size_t>(k)] = rho;
    offsets.mu_k[static_cast<std::size_t>(k)] = mu_full[static_cast<std::size_t>(k)];
    offsets.rho_k0[static_cast<std::size_t>(k)] = mu_full[static_cast<std::size_t>(k)] * rho;
    if (rho > max_offset) {
      max_offset = rho;
      argmax_offset = k;
    }
  }
  for (int k : stats.zero_classes()) {
    offsets.fallback_classes.push_back(k);
    offsets.rho_0k[static_cast<std::size_t>(k)] = offsets.rho_0k[static_cast<std::size_t>(argmax_offset)];
    offsets.rho_k0[static_cast<std::size_t>(k)] = offsets.rho_k0[static_cast<std::size_t>(argmax_offset)];
    offsets.mu_k[static_cast<std::size_t>(k)] = offsets.mu_k[static_cast<std::size_t>(argmax_offset)];
  }
  return offsets;
}

void save_offsets(const MarginOffsets& offsets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error(Errc::io_failure, "cannot write " + path.string());
  }
  out << std::setprecision(17);
  out << "RHO1 " << offsets.classes() << ' ' << offsets.config.tau << ' '
      << offsets.config.upsilon << '\n';
  for (int k = 0; k < offsets.classes(); ++k) {
    out << k << ' ' << offsets.rho_0k[static_cast<std::size_t>(k)] << ' '
        << offsets.rho_k0[static_cast<std::size_t>(k)] << ' '
        << offsets.mu_k[static_cast<std::size_t>(k)] << '\n';
  }
  if (!out) {
    throw Error(Errc::io_failure, "write failed for " + path.string());
  }
}

MarginOffsets load_offsets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Errc::io_failure, "cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(Errc::malformed_header, path.string() + ": missing header");
  }
  std::istringstream header(line);
  std::string tag;
  int classes = 0;
  MarginOffsets offsets;
  if (!(header >> tag >> classes >> offsets.config.tau >>
        offsets.config.upsilon) ||
      tag != "RHO1" || classes < 2) {
    throw Error(Errc::malformed_header,
                path.string() + ": expected \"RHO1 <c> <tau> <upsilon>\"");
  }
  offsets.rho_0k.resize(static_cast<std::size_t>(classes));
  offsets.rho_k0.resize(static_cast<std::size_t>(classes));
  offsets.mu_k.resize(static_cast<std::size_t>(classes));
  for (int k = 0; k < classes; ++k) {
    if (!std::getline(in, line)) {
      throw Error(Errc::truncated_payload,
                  path.string() + ": expected " + std::to_string(classes) +
                      " offset rows");
    }
    std::istringstream row(line);
    int idx = -1;
    if (!(row >> idx >> offsets.rho_0k[static_cast<std::size_t>(k)] >>
          offsets.rho_k0[static_cast<std::size_t>(k)] >>
          offsets.mu_k[static_cast<std::size_t>(k)]) ||
        idx != k) {
      throw Error(Errc::malformed_header,
                  path.string() + ": bad offset row " + std::to_string(k));
    }
  }
  return offsets;
}

}  // namespace segcal
