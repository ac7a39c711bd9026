#include "segcal/bounds.hpp"

#include <cmath>
#include <ostream>

#include "segcal/rng.hpp"

namespace segcal {

ErrorProbs error_probs(const ConfusionMatrix& cm) {
  if (cm.total <= 0) {
    throw Error(Errc::config_error, "error probs of empty confusion matrix");
  }
  ErrorProbs probs;
  probs.n = cm.total;
  const double n = static_cast<double>(cm.total);
  probs.p_k0.resize(static_cast<std::size_t>(cm.classes));
  probs.p_0k.resize(static_cast<std::size_t>(cm.classes));
  probs.p_k.resize(static_cast<std::size_t>(cm.classes));
  for (int k = 0; k < cm.classes; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const std::int64_t diag = cm.at(k, k);
    probs.p_k0[ks] = static_cast<double>(cm.row_sum(k) - diag) / n;
    probs.p_0k[ks] = static_cast<double>(cm.col_sum(k) - diag) / n;
    probs.p_k[ks] = static_cast<double>(cm.row_sum(k)) / n;
  }
  return probs;
}

SurrogateEll surrogate_ell(const ScoreMap& scores, const LabelMask& gt,
                           const MarginOffsets& offsets, SurrogateKind kind) {
  const ScoreMap* s = &scores;
  const LabelMask* g = &gt;
  return surrogate_ell(std::span<const ScoreMap>(s, 1),
                       std::span<const LabelMask>(g, 1), offsets, kind);
}

SurrogateEll surrogate_ell(std::span<const ScoreMap> scores,
                           std::span<const LabelMask> gts,
                           const MarginOffsets& offsets, SurrogateKind kind) {
  if (scores.size() != gts.size() || scores.empty()) {
    throw Error(Errc::shape_mismatch, "surrogate_ell batch size mismatch");
  }
  const int c = offsets.classes();
  SurrogateEll ell;
  ell.ell_k0.assign(static_cast<std::size_t>(c), 0.0);
  ell.ell_0k.assign(static_cast<std::size_t>(c), 0.0);

  std::int64_t total_pixels = 0;
  for (std::size_t img = 0; img < scores.size(); ++img) {
    const ScoreMap& sm = scores[img];
    const LabelMask& gt = gts[img];
    if (sm.height != gt.height || sm.width != gt.width ||
        sm.classes != gt.classes || sm.classes != c) {
      throw Error(Errc::shape_mismatch, "surrogate_ell shapes disagree");
    }
    total_pixels += sm.pixels();
    const MarginField field = margins(sm);
    for (int i = 0; i < sm.pixels(); ++i) {
      const int y = gt.at(i);
      for (int k = 0; k < c; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const double lam = field.at(i, k);
        if (k == y) {
          const double rho = offsets.rho_k0[ks];
          ell.ell_k0[ks] += kind == SurrogateKind::rho_margin
                                ? rho_margin(lam, rho)
                                : calibrated_log(lam, rho);
        } else {
          const double rho = offsets.rho_0k[ks];
          ell.ell_0k[ks] += kind == SurrogateKind::rho_margin
                                ? rho_margin(-lam, rho)
                                : calibrated_log(-lam, rho);
        }
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(total_pixels);
  for (double& v : ell.ell_k0) v *= inv_n;
  for (double& v : ell.ell_0k) v *= inv_n;
  return ell;
}

IouLowerBound iou_lower_bound(const ErrorProbs& probs, const SurrogateEll& ell) {
  const std::size_t c = probs.p_k.size();
  if (ell.ell_k0.size() != c || ell.ell_0k.size() != c) {
    throw Error(Errc::shape_mismatch, "surrogate/prob class count mismatch");
  }
  IouLowerBound lb;
  lb.per_class.resize(c);
  lb.valid.assign(c, true);
  lb.negative_numerator.assign(c, false);
  double sum = 0.0;
  bool any_invalid = false;
  for (std::size_t k = 0; k < c; ++k) {
    const double numer = probs.p_k[k] - ell.ell_k0[k];
    const double denom = probs.p_k[k] + ell.ell_0k[k];
    double value;
    if (denom == 0.0) {
      if (numer == 0.0) {
        value = 1.0;  // mirrors the empirical 0/0 = 1 convention
      } else {
        value = std::numeric_limits<double>::quiet_NaN();
        lb.valid[k] = false;
        any_invalid = true;
      }
    } else {
      value = numer / denom;
    }
    lb.negative_numerator[k] = numer < 0.0;
    lb.per_class[k] = value;
    sum += value;
  }
  lb.miou_lower = any_invalid ? std::numeric_limits<double>::quiet_NaN()
                              : sum / static_cast<double>(c);
  return lb;
}

double sigma_term(double eta, int m, int classes, double rho_max) {
  if (eta <= 0.0 || eta >= 1.0) {
    throw Error(Errc::config_error, "eta must lie in (0, 1)");
  }
  if (m <= 0 || classes < 2) {
    throw Error(Errc::config_error, "sigma term needs m > 0 and c >= 2");
  }
  return rho_max / (4.0 * classes) *
         std::sqrt(2.0 * m * std::log(2.0 * classes / eta));
}

namespace {

/// epsilon_k for one class; +inf when the denominator is not positive.
double epsilon_class(double n, double nk, double mu, double rho_0k, int c,
                     double F) {
  const double root_bg = std::sqrt(n - nk);
  const double denom = nk * rho_0k / (4.0 * c * F) - root_bg;
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return (root_bg + std::sqrt(nk) / mu) / denom;
}

}  // namespace

BoundReport epsilon_bound(const ClassStats& stats, const MarginOffsets& offsets,
                          const BoundConfig& bc) {
  if (offsets.classes() != stats.classes) {
    throw Error(Errc::shape_mismatch, "offsets/stats class count mismatch");
  }
  if (bc.F <= 0.0) {
    throw Error(Errc::config_error, "F must be positive");
  }
  BoundReport report;
  report.classes = stats.classes;
  report.rho_0k = offsets.rho_0k;
  report.rho_k0 = offsets.rho_k0;
  report.mu_k = offsets.mu_k;
  report.effective_F =
      bc.include_sigma
          ? bc.F + sigma_term(bc.eta, bc.m, stats.classes, offsets.rho_max())
          : bc.F;

  const double n = static_cast<double>(stats.total);
  report.epsilon_k.resize(static_cast<std::size_t>(stats.classes));
  report.valid.assign(static_cast<std::size_t>(stats.classes), true);
  double sum = 0.0;
  double sum_valid = 0.0;
  int valid_count = 0;
  for (int k = 0; k < stats.classes; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const double nk = static_cast<double>(stats.pixel_counts[ks]);
    const double eps = epsilon_class(n, nk, offsets.mu_k[ks],
                                     offsets.rho_0k[ks], stats.classes,
                                     report.effective_F);
    if (std::isinf(eps)) {
      report.valid[ks] = false;
      report.epsilon_k[ks] = std::numeric_limits<double>::quiet_NaN();
    } else {
      report.epsilon_k[ks] = eps;
      sum_valid += eps;
      ++valid_count;
    }
    sum += eps;
  }
  report.vacuous = valid_count == 0;
  report.epsilon = valid_count == stats.classes
                       ? sum / static_cast<double>(stats.classes)
                       : std::numeric_limits<double>::quiet_NaN();
  report.epsilon_valid_only =
      valid_count > 0 ? sum_valid / static_cast<double>(valid_count)
                      : std::numeric_limits<double>::quiet_NaN();
  return report;
}

OptimalityVerdict verify_optimality(const ClassStats& stats,
                                    const CalibConfig& config,
                                    const BoundConfig& bc, int trials,
                                    std::uint64_t seed, double rel_tolerance) {
  const MarginOffsets calibrated = compute_offsets(stats, config);
  const std::vector<double> mu = calibrated.mu_k;
  const int c = stats.classes;
  const double n = static_cast<double>(stats.total);

  auto epsilon_of = [&](const std::vector<double>& rho) {
    double sum = 0.0;
    for (int k = 0; k < c; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const double nk = static_cast<double>(stats.pixel_counts[ks]);
      sum += epsilon_class(n, nk, mu[ks], rho[ks], c, bc.F);
    }
    return sum / static_cast<double>(c);
  };

  OptimalityVerdict verdict;
  verdict.trials = trials;
  verdict.eps_calibrated = epsilon_of(calibrated.rho_0k);
  if (std::isinf(verdict.eps_calibrated)) {
    verdict.vacuous_calibrated = true;
    verdict.optimal = false;
    return verdict;
  }
  if (trials <= 0) {
    // Empty search is vacuously optimal; callers see trials = 0.
    return verdict;
  }

  double rho_sum = 0.0;
  for (double r : calibrated.rho_0k) rho_sum += r;

  verdict.worst_margin = -std::numeric_limits<double>::infinity();
  std::vector<double> perturbed(static_cast<std::size_t>(c));
  for (int t = 0; t < trials; ++t) {
    SplitMix64 rng(SplitMix64::derive(seed, static_cast<std::uint64_t>(t)));
    // Positive vector with the same sum: exponential draws, normalized.
    double total = 0.0;
    for (int k = 0; k < c; ++k) {
      const double e = -std::log(1.0 - rng.uniform());
      perturbed[static_cast<std::size_t>(k)] = e;
      total += e;
    }
    for (double& v : perturbed) v *= rho_sum / total;

    const double eps = epsilon_of(perturbed);
    const double margin =
        std::isinf(eps) ? -std::numeric_limits<double>::infinity()
                        : verdict.eps_calibrated - eps;
    if (margin > verdict.worst_margin) {
      verdict.worst_margin = margin;
      verdict.worst_perturbation = perturbed;
    }
    if (!std::isinf(eps) &&
        verdict.eps_calibrated > eps * (1.0 + rel_tolerance)) {
      verdict.optimal = false;
    }
  }
  return verdict;
}

void write_bound_csv(const BoundReport& report, std::ostream& out) {
  const bool with_ell = !report.ell_k0.empty();
  out << "class,rho_0k,rho_k0,mu_k,epsilon_k,vacuous";
  if (with_ell) out << ",ell_k0,ell_0k,iou_lower";
  out << '\n';
  for (int k = 0; k < report.classes; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    out << k << ',' << report.rho_0k[ks] << ',' << report.rho_k0[ks] << ','
        << report.mu_k[ks] << ',' << report.epsilon_k[ks] << ','
        << (report.valid[ks] ? 0 : 1);
    if (with_ell) {
      out << ',' << report.ell_k0[ks] << ',' << report.ell_0k[ks] << ','
          << report.iou_lower[ks];
    }
    out << '\n';
  }
  out << "summary,,,," << report.epsilon << ',' << (report.vacuous ? 1 : 0);
  if (with_ell) out << ",,," << report.miou_lower;
  out << '\n';
}

}  // namespace segcal
