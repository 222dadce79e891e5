#pragma once

#include <cstddef>
#include <vector>

namespace mifuse {

// Categorical distribution over C classes. Construction renormalizes when the
// sum is within 1e-3 of one and rejects otherwise, so numbers parsed from a
// provider payload pass while genuinely broken inputs do not.
class ProbDist {
 public:
  explicit ProbDist(std::vector<double> probs);

  // Skips validation; caller guarantees the entries already form a
  // distribution (e.g. softmax output).
  static ProbDist unchecked(std::vector<double> probs);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const std::vector<double>& probs() const { return probs_; }

  bool operator==(const ProbDist&) const = default;

 private:
  ProbDist() = default;
  std::vector<double> probs_;
};

// -sum p ln p in nats, with 0 ln 0 = 0. Result lies in [0, ln C].
double entropy(const ProbDist& p);

// Entrywise arithmetic mean; all samples must share the class count.
ProbDist mean_dist(const std::vector<ProbDist>& samples);

// H(mean) - mean of per-sample entropies, clamped to [0, inf) after 1e-9
// numerical slack.
double mutual_information(const std::vector<ProbDist>& samples);

// sum p ln(p/q) with 0 ln(0/q) = 0; q floored at 1e-12 inside the log.
double kl_divergence(const ProbDist& p, const ProbDist& q);

// K stochastic predictions from one teacher plus their mean and the mutual
// information across them.
struct TeacherSampleSet {
  std::vector<ProbDist> samples;
  ProbDist mean;
  double mutual_info = 0.0;

  static TeacherSampleSet from_samples(std::vector<ProbDist> samples);
};

}  // namespace mifuse
