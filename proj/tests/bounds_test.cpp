#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"

using namespace segcal;

namespace {

LabelMask mask_of(std::vector<std::uint8_t> labels, int c) {
  const int n = static_cast<int>(labels.size());
  return LabelMask{n, 1, c, std::move(labels)};
}

PredMask pred_of(std::vector<std::uint8_t> labels, int c) {
  const int n = static_cast<int>(labels.size());
  return PredMask{n, 1, c, std::move(labels)};
}

}  // namespace

TEST_CASE("error_probs from the confusion matrix") {
  ConfusionMatrix perfect = ConfusionMatrix::zeros(2);
  accumulate(perfect, mask_of({0, 1, 1}, 2), pred_of({0, 1, 1}, 2));
  const ErrorProbs clean = error_probs(perfect);
  for (int k = 0; k < 2; ++k) {
    CHECK(clean.p_k0[static_cast<std::size_t>(k)] == 0.0);
    CHECK(clean.p_0k[static_cast<std::size_t>(k)] == 0.0);
  }

  ConfusionMatrix cm = ConfusionMatrix::zeros(2);
  accumulate(cm, mask_of({0, 0, 1, 1}, 2), pred_of({0, 1, 1, 1}, 2));
  const ErrorProbs probs = error_probs(cm);
  CHECK(probs.p_k0[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(probs.p_0k[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(probs.p_k[0] == doctest::Approx(0.5).epsilon(1e-15));

  ConfusionMatrix empty = ConfusionMatrix::zeros(2);
  CHECK_THROWS_AS(error_probs(empty), Error);
}

TEST_CASE("probability form reconstructs iou on random instances") {
  SplitMix64 rng(61);
  for (int trial = 0; trial < 300; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(5));
    const LabelMask gt = test::random_mask(rng, 6, 6, c);
    const PredMask pred = test::random_pred(rng, 6, 6, c);
    ConfusionMatrix cm = ConfusionMatrix::zeros(c);
    accumulate(cm, gt, pred);
    const ErrorProbs probs = error_probs(cm);
    for (int k = 0; k < c; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      const double denom = probs.p_k[ks] + probs.p_0k[ks];
      const double reconstructed =
          denom == 0.0 ? 1.0 : (probs.p_k[ks] - probs.p_k0[ks]) / denom;
      CHECK(std::abs(reconstructed - iou(cm, k)) <= 1e-12);
      CHECK(probs.p_k0[ks] <= probs.p_k[ks] + 1e-15);
    }
  }
}

TEST_CASE("surrogate_ell saturates to zero and dominates error probs") {
  // all correct with margins beyond every rho -> ell = 0 = p
  const MarginOffsets offsets = test::manual_offsets({1.0, 1.0}, {1.0, 1.0});
  ScoreMap s = ScoreMap::zeros(2, 1, 2);
  s.data = {5.0, -5.0, -5.0, 5.0};
  const LabelMask gt = mask_of({0, 1}, 2);
  const SurrogateEll hinge = surrogate_ell(s, gt, offsets, SurrogateKind::rho_margin);
  for (double v : hinge.ell_k0) CHECK(v == 0.0);
  for (double v : hinge.ell_0k) CHECK(v == 0.0);

  SplitMix64 rng(62);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(4));
    const int n = 2 + static_cast<int>(rng.below(30));
    const ScoreMap scores = test::random_scores(rng, n, 1, c);
    const LabelMask mask = test::random_mask(rng, n, 1, c);
    const MarginOffsets off = test::random_offsets(rng, c);

    ConfusionMatrix cm = ConfusionMatrix::zeros(c);
    accumulate(cm, mask, argmax_predict(scores));
    const ErrorProbs probs = error_probs(cm);
    const SurrogateEll ell_hinge =
        surrogate_ell(scores, mask, off, SurrogateKind::rho_margin);
    const SurrogateEll ell_cal =
        surrogate_ell(scores, mask, off, SurrogateKind::calibrated_log);
    for (int k = 0; k < c; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      CHECK(probs.p_k0[ks] <= ell_hinge.ell_k0[ks] + 1e-12);
      CHECK(probs.p_0k[ks] <= ell_hinge.ell_0k[ks] + 1e-12);
      CHECK(ell_hinge.ell_k0[ks] <= ell_cal.ell_k0[ks] + 1e-12);
      CHECK(ell_hinge.ell_0k[ks] <= ell_cal.ell_0k[ks] + 1e-12);
    }
  }
}

TEST_CASE("iou_lower_bound handles degenerate numerators and denominators") {
  ErrorProbs probs;
  probs.n = 100;
  probs.p_k = {0.5, 0.5};
  probs.p_k0 = {0.0, 0.0};
  probs.p_0k = {0.0, 0.0};

  SurrogateEll zero{{0.0, 0.0}, {0.0, 0.0}};
  const IouLowerBound perfect = iou_lower_bound(probs, zero);
  CHECK(perfect.per_class[0] == 1.0);
  CHECK(perfect.miou_lower == 1.0);

  SurrogateEll saturated{{0.5, 0.0}, {0.0, 0.0}};
  const IouLowerBound flagged = iou_lower_bound(probs, saturated);
  CHECK(flagged.per_class[0] == 0.0);
  CHECK_FALSE(flagged.negative_numerator[0]);
  SurrogateEll beyond{{0.7, 0.0}, {0.1, 0.0}};
  const IouLowerBound negative = iou_lower_bound(probs, beyond);
  CHECK(negative.per_class[0] < 0.0);
  CHECK(negative.negative_numerator[0]);

  // absent class: 0/0 -> 1 as in the empirical convention
  ErrorProbs absent;
  absent.n = 10;
  absent.p_k = {1.0, 0.0};
  absent.p_k0 = {0.0, 0.0};
  absent.p_0k = {0.0, 0.0};
  const IouLowerBound conv = iou_lower_bound(absent, zero);
  CHECK(conv.per_class[1] == 1.0);
  CHECK(conv.valid[1]);
}

TEST_CASE("lower bounds stay below empirical iou on random instances") {
  SplitMix64 rng(63);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 2 + static_cast<int>(rng.below(4));
    const int n = 4 + static_cast<int>(rng.below(40));
    const ScoreMap scores = test::random_scores(rng, n, 1, c);
    const LabelMask mask = test::random_mask(rng, n, 1, c);
    const MarginOffsets off = test::random_offsets(rng, c);

    ConfusionMatrix cm = ConfusionMatrix::zeros(c);
    accumulate(cm, mask, argmax_predict(scores));
    const ErrorProbs probs = error_probs(cm);
    const SurrogateEll ell =
        surrogate_ell(scores, mask, off, SurrogateKind::rho_margin);
    const IouLowerBound lb = iou_lower_bound(probs, ell);
    const MetricReport rep = report(cm);
    for (int k = 0; k < c; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      REQUIRE(lb.valid[ks]);
      CHECK(lb.per_class[ks] <= rep.per_class_iou[ks] + 1e-12);
    }
    CHECK(lb.miou_lower <= rep.miou + 1e-12);
  }
}

TEST_CASE("epsilon_bound reproduces the worked example") {
  // n = 100, n_k = 50, c = 2, F = 1, rho_0k = 10, mu = 1:
  // (sqrt(50) + sqrt(50)) / (50 * 10 / 8 - sqrt(50))
  const ClassStats stats = ClassStats::from_counts({50, 50}, 100);
  const MarginOffsets offsets =
      test::manual_offsets({10.0, 10.0}, {10.0, 10.0});
  BoundConfig bc;
  bc.F = 1.0;
  bc.classes = 2;
  bc.m = 100;
  const BoundReport report = epsilon_bound(stats, offsets, bc);
  CHECK(report.epsilon_k[0] ==
        doctest::Approx(0.255139961486725).epsilon(1e-12));
  CHECK(report.epsilon_k[1] ==
        doctest::Approx(0.255139961486725).epsilon(1e-12));
  CHECK(report.epsilon == doctest::Approx(0.255139961486725).epsilon(1e-12));
  CHECK(report.valid[0]);
  CHECK_FALSE(report.vacuous);
}

TEST_CASE("epsilon_bound monotonicities and vacuous classes") {
  const ClassStats stats = ClassStats::from_counts({600, 400}, 1000);
  BoundConfig bc;
  bc.F = 1.0;
  bc.classes = 2;
  bc.m = 1000;

  double prev = std::numeric_limits<double>::infinity();
  for (double rho : {5.0, 10.0, 20.0, 40.0, 80.0}) {
    const MarginOffsets offsets = test::manual_offsets({rho, rho}, {rho, rho});
    const BoundReport r = epsilon_bound(stats, offsets, bc);
    REQUIRE(r.valid[0]);
    CHECK(r.epsilon < prev);
    CHECK(r.epsilon > 0.0);
    prev = r.epsilon;
  }

  // growing F eventually flips the denominator sign: vacuous classes
  const MarginOffsets offsets = test::manual_offsets({5.0, 5.0}, {5.0, 5.0});
  const BoundReport small_f = epsilon_bound(stats, offsets, bc);
  BoundConfig big;
  big.F = 1e9;
  big.classes = 2;
  big.m = 1000;
  const BoundReport vac = epsilon_bound(stats, offsets, big);
  CHECK_FALSE(small_f.vacuous);
  CHECK(vac.vacuous);
  CHECK_FALSE(vac.valid[0]);
  CHECK(std::isnan(vac.epsilon));

  BoundConfig mid;
  mid.F = 2.0;
  mid.classes = 2;
  mid.m = 1000;
  CHECK(epsilon_bound(stats, offsets, mid).epsilon > small_f.epsilon);

  // more pixels of a class shrink its epsilon, everything else fixed
  const MarginOffsets fixed = test::manual_offsets({10.0, 10.0}, {10.0, 10.0});
  double prev_eps = std::numeric_limits<double>::infinity();
  for (std::int64_t nk : {400, 600, 800}) {
    const ClassStats grown = ClassStats::from_counts({nk, 1000 - nk}, 1000);
    const BoundReport r = epsilon_bound(grown, fixed, bc);
    REQUIRE(r.valid[0]);
    CHECK(r.epsilon_k[0] < prev_eps);
    prev_eps = r.epsilon_k[0];
  }
}

TEST_CASE("sigma term follows its closed form") {
  // (rho_max / 4c) sqrt(2 m log(2c / eta))
  const double direct =
      (3.0 / 8.0) * std::sqrt(2.0 * 1024.0 * std::log(4.0 / 0.05));
  CHECK(sigma_term(0.05, 1024, 2, 3.0) == doctest::Approx(direct).epsilon(1e-15));
  CHECK_THROWS_AS(sigma_term(0.0, 1024, 2, 3.0), Error);
  CHECK_THROWS_AS(sigma_term(0.5, 0, 2, 3.0), Error);

  const ClassStats stats = ClassStats::from_counts({500, 500}, 1000);
  const MarginOffsets offsets = test::manual_offsets({10.0, 10.0}, {1.0, 1.0});
  BoundConfig with_sigma;
  with_sigma.F = 1.0;
  with_sigma.eta = 0.05;
  with_sigma.m = 1000;
  with_sigma.classes = 2;
  with_sigma.include_sigma = true;
  const BoundReport r = epsilon_bound(stats, offsets, with_sigma);
  CHECK(r.effective_F ==
        doctest::Approx(1.0 + sigma_term(0.05, 1000, 2, 10.0)).epsilon(1e-12));
}

TEST_CASE("verify_optimality accepts the closed form and explores perturbations") {
  BoundConfig bc;
  bc.F = 1.0;
  bc.eta = 0.05;

  SUBCASE("balanced two-class stats") {
    const ClassStats stats = ClassStats::from_counts({5000, 5000}, 1000);
    bc.classes = 2;
    bc.m = 1000;
    const OptimalityVerdict verdict =
        verify_optimality(stats, CalibConfig{10.0, 1.0}, bc, 200);
    CHECK(verdict.optimal);
    CHECK(verdict.trials == 200);
    CHECK(verdict.worst_margin <= 1e-9);
  }

  SUBCASE("imbalanced stats") {
    const ClassStats stats = ClassStats::from_counts({90000, 10000}, 1000);
    bc.classes = 2;
    bc.m = 1000;
    const OptimalityVerdict verdict =
        verify_optimality(stats, CalibConfig{10.0, 1.0}, bc, 200);
    CHECK(verdict.optimal);
  }

  SUBCASE("zero trials is vacuously optimal") {
    const ClassStats stats = ClassStats::from_counts({500, 500}, 1000);
    bc.classes = 2;
    bc.m = 1000;
    const OptimalityVerdict verdict =
        verify_optimality(stats, CalibConfig{10.0, 1.0}, bc, 0);
    CHECK(verdict.optimal);
    CHECK(verdict.trials == 0);
  }

  SUBCASE("several random label distributions") {
    SplitMix64 rng(64);
    for (int c : {2, 3, 5}) {
      std::vector<std::int64_t> counts(static_cast<std::size_t>(c));
      for (auto& count : counts) {
        count = 2000 + static_cast<std::int64_t>(rng.below(200000));
      }
      const ClassStats stats = ClassStats::from_counts(counts, 1024);
      bc.classes = c;
      bc.m = 1024;
      const OptimalityVerdict verdict =
          verify_optimality(stats, CalibConfig{10.0, 1.0}, bc, 100);
      CHECK(verdict.optimal);
    }
  }
}

TEST_CASE("bound csv includes vacuous flags and a summary row") {
  const ClassStats stats = ClassStats::from_counts({600, 400}, 1000);
  const MarginOffsets offsets = test::manual_offsets({5.0, 5.0}, {5.0, 5.0});
  BoundConfig bc;
  bc.F = 1.0;
  bc.classes = 2;
  bc.m = 1000;
  const BoundReport r = epsilon_bound(stats, offsets, bc);
  std::ostringstream out;
  write_bound_csv(r, out);
  const std::string csv = out.str();
  CHECK(csv.find("class,rho_0k") != std::string::npos);
  CHECK(csv.find("summary,") != std::string::npos);
  CHECK(csv.find("vacuous") != std::string::npos);
}
