#include "mifuse/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace mifuse {

void FusionConfig::validate(bool allow_free_tau) const {
  if (generation == Generation::kSingle && gate != Gate::kNoFusion &&
      weighting == Weighting::kMi)
    throw std::invalid_argument(
        "FusionConfig: MI weighting is vacuous in Single generation mode");
  if (gate == Gate::kKl) {
    if (kl_tau <= 0.0)
      throw std::invalid_argument("FusionConfig: KL tau must be > 0");
    if (!allow_free_tau && kl_tau != 0.4 && kl_tau != 0.6 && kl_tau != 0.8)
      throw std::invalid_argument(
          "FusionConfig: KL tau must be one of {0.4, 0.6, 0.8} "
          "(pass allow_free_tau to override)");
  }
}

std::string FusionConfig::describe() const {
  std::string s = generation == Generation::kMulti ? "multi" : "single";
  s += gate == Gate::kDirect ? "/direct"
       : gate == Gate::kKl   ? "/kl" + std::to_string(kl_tau)
                             : "/nofusion";
  if (gate != Gate::kNoFusion)
    s += weighting == Weighting::kMi        ? "/mi"
         : weighting == Weighting::kEntropy ? "/entropy"
                                            : "/equal";
  return s;
}

namespace {

FusedLabel weighted_fuse(const TeacherSampleSet& cls, const TeacherSampleSet& lm,
                         Weighting weighting) {
  double score_cls = 0.0, score_lm = 0.0;  // weights proportional to e^score
  switch (weighting) {
    case Weighting::kMi:
      score_cls = -cls.mutual_info;
      score_lm = -lm.mutual_info;
      break;
    case Weighting::kEntropy:
      score_cls = -entropy(cls.mean);
      score_lm = -entropy(lm.mean);
      break;
    case Weighting::kEqual:
      break;
  }
  // Max-subtracted for shift invariance.
  const double m = std::max(score_cls, score_lm);
  const double e_cls = std::exp(score_cls - m);
  const double e_lm = std::exp(score_lm - m);
  const double w_cls = e_cls / (e_cls + e_lm);
  const double w_lm = 1.0 - w_cls;

  std::vector<double> fused(cls.mean.size());
  for (std::size_t i = 0; i < fused.size(); ++i)
    fused[i] = w_cls * cls.mean[i] + w_lm * lm.mean[i];
  return {ProbDist::unchecked(std::move(fused)), FusionSource::kFused, w_cls,
          w_lm};
}

}  // namespace

FusedLabel select_lower_entropy(const TeacherSampleSet& cls,
                                const TeacherSampleSet& lm) {
  if (cls.mean.size() != lm.mean.size())
    throw std::invalid_argument("select_lower_entropy: class count mismatch");
  const double h_cls = entropy(cls.mean);
  const double h_lm = entropy(lm.mean);
  if (h_lm < h_cls - 1e-12)
    return {lm.mean, FusionSource::kLmOnly, 0.0, 1.0};
  return {cls.mean, FusionSource::kClsOnly, 1.0, 0.0};
}

FusedLabel fuse(const TeacherSampleSet& cls, const TeacherSampleSet& lm,
                const FusionConfig& config) {
  if (cls.mean.size() != lm.mean.size())
    throw std::invalid_argument("fuse: class count mismatch");
  config.validate(/*allow_free_tau=*/true);
  switch (config.gate) {
    case Gate::kDirect:
      return weighted_fuse(cls, lm, config.weighting);
    case Gate::kKl:
      if (kl_divergence(cls.mean, lm.mean) <= config.kl_tau)
        return weighted_fuse(cls, lm, config.weighting);
      return select_lower_entropy(cls, lm);
    case Gate::kNoFusion:
      return select_lower_entropy(cls, lm);
  }
  throw std::logic_error("fuse: unreachable");
}

}  // namespace mifuse
