#include "segcal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace segcal {

namespace {

constexpr double kLn2 = 0.6931471805599453094;

void check_pair(const ScoreMap& scores, const LabelMask& gt) {
  if (scores.height != gt.height || scores.width != gt.width ||
      scores.classes != gt.classes) {
    throw Error(Errc::shape_mismatch, "scores and ground truth disagree");
  }
  if (scores.classes < 2) {
    throw Error(Errc::shape_mismatch, "losses need >= 2 classes");
  }
}

struct Top2 {
  double v1;  // max score, attained at the lowest index m1
  int m1;
  double v2;  // max over j != m1, attained at the lowest such index m2
  int m2;
};

Top2 top2(const double* s, int c) {
  Top2 t{s[0], 0, -std::numeric_limits<double>::infinity(), -1};
  for (int j = 1; j < c; ++j) {
    if (s[j] > t.v1) {
      t.v2 = t.v1;
      t.m2 = t.m1;
      t.v1 = s[j];
      t.m1 = j;
    } else if (s[j] > t.v2) {
      t.v2 = s[j];
      t.m2 = j;
    }
  }
  return t;
}

// 1 / (1 + 2^-u), the base-2 sigmoid; stable for any u.
double sigmoid2(double u) {
  if (u >= 0.0) {
    return 1.0 / (1.0 + std::exp2(-u));
  }
  const double e = std::exp2(u);
  return e / (1.0 + e);
}

/// Softmax probabilities for one pixel, shifted by the max for stability.
void softmax_row(const double* s, int c, double* p) {
  double mx = s[0];
  for (int k = 1; k < c; ++k) mx = std::max(mx, s[k]);
  double sum = 0.0;
  for (int k = 0; k < c; ++k) {
    p[k] = std::exp(s[k] - mx);
    sum += p[k];
  }
  for (int k = 0; k < c; ++k) p[k] /= sum;
}

// log(sum exp(s - mx)) for the log-softmax path.
double log_sum_exp(const double* s, int c, double mx) {
  double sum = 0.0;
  for (int k = 0; k < c; ++k) sum += std::exp(s[k] - mx);
  return std::log(sum);
}

}  // namespace

double pairwise_sum(const double* values, std::size_t count) {
  if (count == 0) return 0.0;
  if (count <= 8) {
    double sum = values[0];
    for (std::size_t i = 1; i < count; ++i) sum += values[i];
    return sum;
  }
  const std::size_t half = count / 2;
  return pairwise_sum(values, half) + pairwise_sum(values + half, count - half);
}

MarginField margins(const ScoreMap& scores) {
  if (scores.classes < 2) {
    throw Error(Errc::shape_mismatch, "margins need >= 2 classes");
  }
  MarginField field{scores.height, scores.width, scores.classes, {}};
  field.data.resize(scores.data.size());
  const int c = scores.classes;
  for (int i = 0; i < scores.pixels(); ++i) {
    const double* s = scores.data.data() + static_cast<std::size_t>(i) * c;
    double* lam = field.data.data() + static_cast<std::size_t>(i) * c;
    const Top2 t = top2(s, c);
    for (int k = 0; k < c; ++k) {
      lam[k] = s[k] - (k == t.m1 ? t.v2 : t.v1);
    }
  }
  return field;
}

double rho_margin(double lambda, double rho) {
  if (rho <= 0.0) throw Error(Errc::config_error, "rho must be positive");
  return std::min(1.0, std::max(0.0, 1.0 - lambda / rho));
}

double calibrated_log(double lambda, double rho) {
  if (rho <= 0.0) throw Error(Errc::config_error, "rho must be positive");
  const double u = rho - lambda;
  if (u <= 0.0) {
    return std::log1p(std::exp2(u)) / kLn2;
  }
  return u + std::log1p(std::exp2(-u)) / kLn2;
}

double calibrated_log_dlambda(double lambda, double rho) {
  if (rho <= 0.0) throw Error(Errc::config_error, "rho must be positive");
  return -sigmoid2(rho - lambda);
}

LossResult mc_loss(const ScoreMap& scores, const LabelMask& gt,
                   const MarginOffsets& offsets) {
  check_pair(scores, gt);
  if (offsets.classes() != scores.classes) {
    throw Error(Errc::shape_mismatch,
                "offsets cover " + std::to_string(offsets.classes()) +
                    " classes, scores have " + std::to_string(scores.classes));
  }
  const int c = scores.classes;
  const int n = scores.pixels();
  const double inv_n = 1.0 / n;

  LossResult result;
  result.gradient = ScoreMap::zeros(scores.height, scores.width, c);
  std::vector<double> per_pixel(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    const double* s = scores.data.data() + static_cast<std::size_t>(i) * c;
    double* g = result.gradient.data.data() + static_cast<std::size_t>(i) * c;
    const Top2 t = top2(s, c);
    const int y = gt.at(i);
    double pixel_value = 0.0;
    for (int k = 0; k < c; ++k) {
      const double lam = s[k] - (k == t.m1 ? t.v2 : t.v1);
      const int competitor = (k == t.m1 ? t.m2 : t.m1);
      double dloss_dlam;
      if (k == y) {
        const double rho = offsets.rho_k0[static_cast<std::size_t>(k)];
        pixel_value += calibrated_log(lam, rho);
        dloss_dlam = calibrated_log_dlambda(lam, rho);
      } else {
        const double rho = offsets.rho_0k[static_cast<std::size_t>(k)];
        pixel_value += calibrated_log(-lam, rho);
        dloss_dlam = -calibrated_log_dlambda(-lam, rho);
      }
      const double gk = dloss_dlam * inv_n;
      g[k] += gk;
      g[competitor] -= gk;
    }
    per_pixel[static_cast<std::size_t>(i)] = pixel_value;
  }
  result.value = pairwise_sum(per_pixel.data(), per_pixel.size()) * inv_n;
  return result;
}

LossResult ce_loss(const ScoreMap& scores, const LabelMask& gt,
                   const std::optional<std::vector<double>>& class_weights) {
  check_pair(scores, gt);
  const int c = scores.classes;
  const int n = scores.pixels();
  if (class_weights && static_cast<int>(class_weights->size()) != c) {
    throw Error(Errc::config_error, "class_weights size must equal c");
  }
  const double inv_n = 1.0 / n;

  LossResult result;
  result.gradient = ScoreMap::zeros(scores.height, scores.width, c);
  std::vector<double> per_pixel(static_cast<std::size_t>(n));
  std::vector<double> p(static_cast<std::size_t>(c));

  for (int i = 0; i < n; ++i) {
    const double* s = scores.data.data() + static_cast<std::size_t>(i) * c;
    double* g = result.gradient.data.data() + static_cast<std::size_t>(i) * c;
    const int y = gt.at(i);
    const double w =
        class_weights ? (*class_weights)[static_cast<std::size_t>(y)] : 1.0;

    double mx = s[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, s[k]);
    const double lse = log_sum_exp(s, c, mx);
    per_pixel[static_cast<std::size_t>(i)] = w * (lse - (s[y] - mx));
    for (int k = 0; k < c; ++k) p[static_cast<std::size_t>(k)] =
        std::exp(s[k] - mx - lse);
    for (int k = 0; k < c; ++k) {
      g[k] = w * inv_n * (p[static_cast<std::size_t>(k)] - (k == y ? 1.0 : 0.0));
    }
  }
  result.value = pairwise_sum(per_pixel.data(), per_pixel.size()) * inv_n;
  return result;
}

LossResult focal_loss(const ScoreMap& scores, const LabelMask& gt, double gamma) {
  check_pair(scores, gt);
  if (gamma < 0.0) throw Error(Errc::config_error, "gamma must be >= 0");
  const int c = scores.classes;
  const int n = scores.pixels();
  const double inv_n = 1.0 / n;

  LossResult result;
  result.gradient = ScoreMap::zeros(scores.height, scores.width, c);
  std::vector<double> per_pixel(static_cast<std::size_t>(n));
  std::vector<double> p(static_cast<std::size_t>(c));

  for (int i = 0; i < n; ++i) {
    const double* s = scores.data.data() + static_cast<std::size_t>(i) * c;
    double* g = result.gradient.data.data() + static_cast<std::size_t>(i) * c;
    const int y = gt.at(i);

    double mx = s[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, s[k]);
    const double lse = log_sum_exp(s, c, mx);
    for (int k = 0; k < c; ++k) p[static_cast<std::size_t>(k)] =
        std::exp(s[k] - mx - lse);

    const double t = p[static_cast<std::size_t>(y)];
    const double log_t = (s[y] - mx) - lse;
    const double one_minus_t = 1.0 - t;
    if (one_minus_t <= 0.0) {
      // Fully saturated pixel: loss and gradient vanish.
      per_pixel[static_cast<std::size_t>(i)] = 0.0;
      continue;
    }
    const double focal_factor = std::pow(one_minus_t, gamma);
    per_pixel[static_cast<std::size_t>(i)] = focal_factor * (-log_t);
    // dL/dt = gamma (1-t)^(gamma-1) log t - (1-t)^gamma / t
    double dl_dt = -focal_factor / t;
    if (gamma > 0.0) {
      dl_dt += gamma * std::pow(one_minus_t, gamma - 1.0) * log_t;
    }
    for (int k = 0; k < c; ++k) {
      const double dt_ds =
          t * ((k == y ? 1.0 : 0.0) - p[static_cast<std::size_t>(k)]);
      g[k] = inv_n * dl_dt * dt_ds;
    }
  }
  result.value = pairwise_sum(per_pixel.data(), per_pixel.size()) * inv_n;
  return result;
}

namespace {

struct SoftStats {
  std::vector<double> tp;  // sum_i p_ik g_ik
  std::vector<double> p_sum;
  std::vector<double> g_sum;
};

SoftStats soft_stats(const std::vector<double>& probs, const LabelMask& gt,
                     int c) {
  SoftStats st;
  st.tp.assign(static_cast<std::size_t>(c), 0.0);
  st.p_sum.assign(static_cast<std::size_t>(c), 0.0);
  st.g_sum.assign(static_cast<std::size_t>(c), 0.0);
  const int n = gt.pixels();
  for (int i = 0; i < n; ++i) {
    const double* p = probs.data() + static_cast<std::size_t>(i) * c;
    const int y = gt.at(i);
    st.g_sum[static_cast<std::size_t>(y)] += 1.0;
    for (int k = 0; k < c; ++k) {
      st.p_sum[static_cast<std::size_t>(k)] += p[k];
    }
    st.tp[static_cast<std::size_t>(y)] += p[y];
  }
  return st;
}

std::vector<double> softmax_all(const ScoreMap& scores) {
  std::vector<double> probs(scores.data.size());
  const int c = scores.classes;
  for (int i = 0; i < scores.pixels(); ++i) {
    softmax_row(scores.data.data() + static_cast<std::size_t>(i) * c, c,
                probs.data() + static_cast<std::size_t>(i) * c);
  }
  return probs;
}

/// Chains d value / d probs through the softmax Jacobian into score space.
void chain_softmax(const std::vector<double>& probs,
                   const std::vector<double>& dvalue_dp, int pixels, int c,
                   ScoreMap& grad) {
  for (int i = 0; i < pixels; ++i) {
    const double* p = probs.data() + static_cast<std::size_t>(i) * c;
    const double* q = dvalue_dp.data() + static_cast<std::size_t>(i) * c;
    double* g = grad.data.data() + static_cast<std::size_t>(i) * c;
    double dot = 0.0;
    for (int k = 0; k < c; ++k) dot += q[k] * p[k];
    for (int k = 0; k < c; ++k) g[k] = p[k] * (q[k] - dot);
  }
}

}  // namespace

LossResult tversky_loss(const ScoreMap& scores, const LabelMask& gt,
                        double alpha, double beta, double smooth) {
  check_pair(scores, gt);
  if (alpha <= 0.0 || alpha >= 1.0 || beta <= 0.0 || beta >= 1.0) {
    throw Error(Errc::config_error, "alpha and beta must lie in (0, 1)");
  }
  if (smooth <= 0.0) throw Error(Errc::config_error, "smooth must be positive");
  const int c = scores.classes;
  const int n = scores.pixels();

  const std::vector<double> probs = softmax_all(scores);
  const SoftStats st = soft_stats(probs, gt, c);

  // Index per class: (2 TP + s) / (2 (TP + a FP + b FN) + s) with
  // FP = P - TP, FN = G - TP.
  std::vector<double> numer(static_cast<std::size_t>(c));
  std::vector<double> denom(static_cast<std::size_t>(c));
  double mean_index = 0.0;
  for (int k = 0; k < c; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    numer[ks] = 2.0 * st.tp[ks] + smooth;
    denom[ks] = 2.0 * ((1.0 - alpha - beta) * st.tp[ks] +
                       alpha * st.p_sum[ks] + beta * st.g_sum[ks]) +
                smooth;
    mean_index += numer[ks] / denom[ks];
  }
  mean_index /= c;

  LossResult result;
  result.value = 1.0 - mean_index;
  result.gradient = ScoreMap::zeros(scores.height, scores.width, c);

  std::vector<double> dvalue_dp(probs.size());
  for (int i = 0; i < n; ++i) {
    const int y = gt.at(i);
    for (int k = 0; k < c; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const double is_gt = (k == y) ? 1.0 : 0.0;
      const double dn = 2.0 * is_gt;
      const double dd = 2.0 * ((1.0 - alpha - beta) * is_gt + alpha);
      const double dindex =
          (dn * denom[ks] - numer[ks] * dd) / (denom[ks] * denom[ks]);
      dvalue_dp[static_cast<std::size_t>(i) * c + ks] = -dindex / c;
    }
  }
  chain_softmax(probs, dvalue_dp, n, c, result.gradient);
  return result;
}

LossResult dice_loss(const ScoreMap& scores, const LabelMask& gt, double smooth) {
  // Dice is Tversky at alpha = beta = 1/2: the denominator collapses to
  // P + G + smooth and the numerator stays 2 TP + smooth.
  return tversky_loss(scores, gt, 0.5, 0.5, smooth);
}

namespace {

/// Discrete Jaccard-loss differences of sorted-prefix sets: grad[j] such
/// that dot(sorted_errors, grad) is the Lovasz extension for one class.
std::vector<double> lovasz_jaccard_grad(const std::vector<std::uint8_t>& fg_sorted) {
  const std::size_t n = fg_sorted.size();
  std::vector<double> grad(n);
  double gts = 0.0;
  for (std::uint8_t f : fg_sorted) gts += f;
  double cum_fg = 0.0;
  double cum_bg = 0.0;
  double prev = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    cum_fg += fg_sorted[j];
    cum_bg += 1.0 - fg_sorted[j];
    const double jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
    grad[j] = jac - prev;
    prev = jac;
  }
  return grad;
}

}  // namespace

LossResult lovasz_softmax_probs(const ScoreMap& probs, const LabelMask& gt) {
  check_pair(probs, gt);
  const int c = probs.classes;
  const int n = probs.pixels();

  LossResult result;
  result.gradient = ScoreMap::zeros(probs.height, probs.width, c);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<double> errors(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> fg_sorted(static_cast<std::size_t>(n));
  std::vector<double> class_values;

  for (int k = 0; k < c; ++k) {
    bool present = false;
    for (int i = 0; i < n; ++i) {
      fg[static_cast<std::size_t>(i)] = gt.at(i) == k;
      present |= fg[static_cast<std::size_t>(i)];
    }
    if (!present) continue;

    for (int i = 0; i < n; ++i) {
      const double p = probs.at(i, k);
      errors[static_cast<std::size_t>(i)] =
          fg[static_cast<std::size_t>(i)] ? 1.0 - p : p;
    }
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double ea = errors[static_cast<std::size_t>(a)];
      const double eb = errors[static_cast<std::size_t>(b)];
      if (ea != eb) return ea > eb;  // descending; ties by pixel index
      return a < b;
    });
    for (int j = 0; j < n; ++j) {
      fg_sorted[static_cast<std::size_t>(j)] =
          fg[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
    }
    const std::vector<double> grad = lovasz_jaccard_grad(fg_sorted);

    std::vector<double> terms(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      const int o = order[static_cast<std::size_t>(j)];
      terms[static_cast<std::size_t>(j)] =
          errors[static_cast<std::size_t>(o)] * grad[static_cast<std::size_t>(j)];
      // d loss_k / d p_ok, sorting treated as locally constant
      const double de_dp = fg[static_cast<std::size_t>(o)] ? -1.0 : 1.0;
      result.gradient.at(o, k) += grad[static_cast<std::size_t>(j)] * de_dp;
    }
    class_values.push_back(pairwise_sum(terms.data(), terms.size()));
  }

  const double present_count = static_cast<double>(class_values.size());
  result.value =
      pairwise_sum(class_values.data(), class_values.size()) / present_count;
  for (double& g : result.gradient.data) g /= present_count;
  return result;
}

LossResult lovasz_softmax_loss(const ScoreMap& scores, const LabelMask& gt) {
  check_pair(scores, gt);
  const int c = scores.classes;
  const int n = scores.pixels();

  std::vector<double> probs_data = softmax_all(scores);
  ScoreMap probs{scores.height, scores.width, c, std::move(probs_data)};
  LossResult prob_level = lovasz_softmax_probs(probs, gt);

  LossResult result;
  result.value = prob_level.value;
  result.gradient = ScoreMap::zeros(scores.height, scores.width, c);
  chain_softmax(probs.data, prob_level.gradient.data, n, c, result.gradient);
  return result;
}

namespace {

class CeLoss final : public Loss {
 public:
  explicit CeLoss(std::optional<std::vector<double>> weights)
      : weights_(std::move(weights)) {}
  LossResult operator()(const ScoreMap& s, const LabelMask& g) const override {
    return ce_loss(s, g, weights_);
  }
  std::string name() const override { return "ce"; }

 private:
  std::optional<std::vector<double>> weights_;
};

class FocalLoss final : public Loss {
 public:
  explicit FocalLoss(double gamma) : gamma_(gamma) {}
  LossResult operator()(const ScoreMap& s, const LabelMask& g) const override {
    return focal_loss(s, g, gamma_);
  }
  std::string name() const override { return "focal"; }

 private:
  double gamma_;
};

class DiceLoss final : public Loss {
 public:
  explicit DiceLoss(double smooth) : smooth_(smooth) {}
  LossResult operator()(const ScoreMap& s, const LabelMask& g) const override {
    return dice_loss(s, g, smooth_);
  }
  std::string name() const override { return "dice"; }

 private:
  double smooth_;
};

class TverskyLoss final : public Loss {
 public:
  TverskyLoss(double alpha, double beta, double smooth)
      : alpha_(alpha), beta_(beta), smooth_(smooth) {}
  LossResult operator()(const ScoreMap& s, const LabelMask& g) const override {
    return tversky_loss(s, g, alpha_, beta_, smooth_);
  }
  std::string name() const override { return "tversky"; }

 private:
  double alpha_, beta_, smooth_;
};

class LovaszLoss final : public Loss {
 public:
  LossResult operator()(const ScoreMap& s, const LabelMask& g) const override {
    return lovasz_softmax_loss(s, g);
  }
  std::string name() const override { return "lovasz"; }
};

class McLoss final : public Loss {
 public:
  explicit McLoss(MarginOffsets offsets) : offsets_(std::move(offsets)) {}
  LossResult operator()(const ScoreMap& s, const LabelMask& g) const override {
    return mc_loss(s, g, offsets_);
  }
  std::string name() const override { return "mc"; }

 private:
  MarginOffsets offsets_;
};

class CombinedLoss final : public Loss {
 public:
  CombinedLoss(std::unique_ptr<Loss> first, std::unique_ptr<Loss> second,
               double w)
      : first_(std::move(first)), second_(std::move(second)), w_(w) {}
  LossResult operator()(const ScoreMap& s, const LabelMask& g) const override {
    LossResult a = (*first_)(s, g);
    const LossResult b = (*second_)(s, g);
    a.value = w_ * a.value + (1.0 - w_) * b.value;
    for (std::size_t i = 0; i < a.gradient.data.size(); ++i) {
      a.gradient.data[i] =
          w_ * a.gradient.data[i] + (1.0 - w_) * b.gradient.data[i];
    }
    return a;
  }
  std::string name() const override {
    return first_->name() + "+" + second_->name();
  }

 private:
  std::unique_ptr<Loss> first_;
  std::unique_ptr<Loss> second_;
  double w_;
};

}  // namespace

std::unique_ptr<Loss> make_ce_loss(std::optional<std::vector<double>> weights) {
  return std::make_unique<CeLoss>(std::move(weights));
}
std::unique_ptr<Loss> make_focal_loss(double gamma) {
  return std::make_unique<FocalLoss>(gamma);
}
std::unique_ptr<Loss> make_dice_loss(double smooth) {
  return std::make_unique<DiceLoss>(smooth);
}
std::unique_ptr<Loss> make_tversky_loss(double alpha, double beta,
                                        double smooth) {
  return std::make_unique<TverskyLoss>(alpha, beta, smooth);
}
std::unique_ptr<Loss> make_lovasz_loss() {
  return std::make_unique<LovaszLoss>();
}
std::unique_ptr<Loss> make_mc_loss(MarginOffsets offsets) {
  return std::make_unique<McLoss>(std::move(offsets));
}
std::unique_ptr<Loss> combine(std::unique_ptr<Loss> first,
                              std::unique_ptr<Loss> second, double w) {
  if (w < 0.0 || w > 1.0) {
    throw Error(Errc::config_error, "combination weight must lie in [0, 1]");
  }
  return std::make_unique<CombinedLoss>(std::move(first), std::move(second), w);
}

}  // namespace segcal
