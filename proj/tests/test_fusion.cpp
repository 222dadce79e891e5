#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>

#include "mifuse/fusion.hpp"

using namespace mifuse;

namespace {

TeacherSampleSet set_with(ProbDist mean, double mi) {
  return TeacherSampleSet{{mean}, mean, mi};
}

ProbDist random_dist(std::size_t c, std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> v(c);
  double sum = 0.0;
  for (double& x : v) {
    x = expo(rng);
    sum += x;
  }
  for (double& x : v) x /= sum;
  return ProbDist::unchecked(std::move(v));
}

}  // namespace

TEST_CASE("FusionConfig validation") {
  FusionConfig ok;
  ok.validate();

  FusionConfig single_mi;
  single_mi.generation = Generation::kSingle;
  single_mi.weighting = Weighting::kMi;
  CHECK_THROWS_AS(single_mi.validate(), std::invalid_argument);

  FusionConfig off_grid;
  off_grid.gate = Gate::kKl;
  off_grid.kl_tau = 0.5;
  CHECK_THROWS_AS(off_grid.validate(), std::invalid_argument);
  off_grid.validate(/*allow_free_tau=*/true);

  FusionConfig bad_tau;
  bad_tau.gate = Gate::kKl;
  bad_tau.kl_tau = -1.0;
  CHECK_THROWS_AS(bad_tau.validate(true), std::invalid_argument);
}

TEST_CASE("equal MI gives the simple average") {
  auto cls = set_with(ProbDist({0.6, 0.4}), 0.3);
  auto lm = set_with(ProbDist({0.2, 0.8}), 0.3);
  FusionConfig config;  // Direct + Mi
  auto fused = fuse(cls, lm, config);
  CHECK(fused.source == FusionSource::kFused);
  CHECK(fused.w_cls == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fused.dist[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(fused.dist[1] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("worked MI-weighted fusion example") {
  auto cls = set_with(ProbDist({0.6, 0.4}), 0.0);
  auto lm = set_with(ProbDist({0.2, 0.8}), std::log(2.0));
  FusionConfig config;
  auto fused = fuse(cls, lm, config);
  CHECK(fused.w_cls == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
  CHECK(fused.w_lm == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(fused.dist[0] == doctest::Approx(0.46667).epsilon(1e-5 / 0.46667));
  CHECK(fused.dist[1] == doctest::Approx(0.53333).epsilon(1e-5 / 0.53333));
}

TEST_CASE("KL gate passes on identical means") {
  auto cls = set_with(ProbDist({0.5, 0.5}), 0.1);
  auto lm = set_with(ProbDist({0.5, 0.5}), 0.2);
  FusionConfig config;
  config.gate = Gate::kKl;
  config.kl_tau = 0.4;
  auto fused = fuse(cls, lm, config);
  CHECK(fused.source == FusionSource::kFused);
}

TEST_CASE("KL gate falls back to the lower-entropy teacher") {
  auto cls = set_with(ProbDist({0.99, 0.01}), 0.0);
  auto lm = set_with(ProbDist({0.01, 0.99}), 0.0);
  FusionConfig config;
  config.gate = Gate::kKl;
  config.kl_tau = 0.4;
  auto fused = fuse(cls, lm, config);
  CHECK(fused.source == FusionSource::kClsOnly);  // tie broken to classifier
  CHECK(fused.dist.probs() == cls.mean.probs());
}

TEST_CASE("NoFusion takes the lower-entropy mean") {
  auto cls = set_with(ProbDist({1.0, 0.0}), 0.0);
  auto lm = set_with(ProbDist({0.5, 0.5}), 0.0);
  FusionConfig config;
  config.gate = Gate::kNoFusion;
  auto fused = fuse(cls, lm, config);
  CHECK(fused.source == FusionSource::kClsOnly);
  CHECK(fused.dist[0] == doctest::Approx(1.0));
}

TEST_CASE("select_lower_entropy examples") {
  auto a = set_with(ProbDist({0.9, 0.1}), 0.0);   // H ~ 0.325083
  auto b = set_with(ProbDist({0.6, 0.4}), 0.0);   // H ~ 0.673012
  auto pick = select_lower_entropy(a, b);
  CHECK(pick.source == FusionSource::kClsOnly);
  CHECK(pick.dist.probs() == a.mean.probs());

  auto tie = select_lower_entropy(b, b);
  CHECK(tie.source == FusionSource::kClsOnly);

  auto flipped = select_lower_entropy(b, a);
  CHECK(flipped.source == FusionSource::kLmOnly);
}

TEST_CASE("fusion properties over random pairs") {
  std::mt19937_64 rng(314);
  std::uniform_real_distribution<double> mi_dist(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t c = 4;
    auto cls = set_with(random_dist(c, rng), mi_dist(rng));
    auto lm = set_with(random_dist(c, rng), mi_dist(rng));

    FusionConfig direct;  // Direct + Mi
    auto fused = fuse(cls, lm, direct);

    // Convexity: entries between the entrywise min and max of the means.
    for (std::size_t i = 0; i < c; ++i) {
      const double lo = std::min(cls.mean[i], lm.mean[i]);
      const double hi = std::max(cls.mean[i], lm.mean[i]);
      CHECK(fused.dist[i] >= lo - 1e-12);
      CHECK(fused.dist[i] <= hi + 1e-12);
    }
    CHECK(fused.w_cls + fused.w_lm == doctest::Approx(1.0).epsilon(1e-9));

    // Shift invariance: adding a constant to both MIs changes nothing.
    auto cls_shift = cls, lm_shift = lm;
    cls_shift.mutual_info += 0.37;
    lm_shift.mutual_info += 0.37;
    auto fused_shift = fuse(cls_shift, lm_shift, direct);
    for (std::size_t i = 0; i < c; ++i)
      CHECK(fused_shift.dist[i] ==
            doctest::Approx(fused.dist[i]).epsilon(1e-12));

    // Equal weighting is exactly the arithmetic mean.
    FusionConfig equal;
    equal.weighting = Weighting::kEqual;
    auto eq = fuse(cls, lm, equal);
    for (std::size_t i = 0; i < c; ++i)
      CHECK(eq.dist[i] ==
            doctest::Approx((cls.mean[i] + lm.mean[i]) / 2).epsilon(1e-12));

    // Gate consistency: tau above any achievable KL reduces to Direct.
    FusionConfig gated;
    gated.gate = Gate::kKl;
    gated.kl_tau = 1e9;
    auto kl_fused = fuse(cls, lm, gated);
    CHECK(kl_fused.dist.probs() == fused.dist.probs());

    // Determinism.
    auto fused2 = fuse(cls, lm, direct);
    CHECK(fused2.dist.probs() == fused.dist.probs());
  }
}

TEST_CASE("weight monotonicity in the LM mutual information") {
  auto cls = set_with(ProbDist({0.6, 0.4}), 0.2);
  FusionConfig config;
  double prev_w_lm = 1.0;
  for (double mi = 0.0; mi <= 2.0; mi += 0.1) {
    auto lm = set_with(ProbDist({0.3, 0.7}), mi);
    auto fused = fuse(cls, lm, config);
    CHECK(fused.w_lm < prev_w_lm);
    prev_w_lm = fused.w_lm;
  }
}

TEST_CASE("fuse rejects mismatched class counts") {
  auto cls = set_with(ProbDist({0.5, 0.5}), 0.0);
  auto lm = set_with(ProbDist({0.4, 0.3, 0.3}), 0.0);
  CHECK_THROWS_AS(fuse(cls, lm, FusionConfig{}), std::invalid_argument);
}
