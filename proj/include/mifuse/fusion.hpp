#pragma once

#include <optional>
#include <string>

#include "mifuse/uncertainty.hpp"

namespace mifuse {

enum class Generation { kMulti, kSingle };
enum class Gate { kDirect, kKl, kNoFusion };
enum class Weighting { kMi, kEntropy, kEqual };

struct FusionConfig {
  Generation generation = Generation::kMulti;
  Gate gate = Gate::kDirect;
  double kl_tau = 0.6;  // only meaningful when gate == kKl
  Weighting weighting = Weighting::kMi;

  // Rejects (Single, *, Mi): a single sample has zero mutual information, so
  // MI weighting is vacuous. Off-grid tau values need allow_free_tau.
  void validate(bool allow_free_tau = false) const;

  std::string describe() const;
};

enum class FusionSource { kFused, kClsOnly, kLmOnly };

struct FusedLabel {
  ProbDist dist;
  FusionSource source = FusionSource::kFused;
  double w_cls = 0.0;
  double w_lm = 0.0;
};

// Combine the classifier and LALM sample sets per the configured strategy.
FusedLabel fuse(const TeacherSampleSet& cls, const TeacherSampleSet& lm,
                const FusionConfig& config);

// Mean of whichever teacher has the lower-entropy mean; ties go to the
// classifier side.
FusedLabel select_lower_entropy(const TeacherSampleSet& cls,
                                const TeacherSampleSet& lm);

}  // namespace mifuse
