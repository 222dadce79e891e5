#include "mifuse/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mifuse {

ProbDist::ProbDist(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw std::invalid_argument("ProbDist: empty");
  double sum = 0.0;
  for (double v : probs_) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("ProbDist: entries must be finite and >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-3)
    throw std::invalid_argument("ProbDist: sum " + std::to_string(sum) +
                                " not within 1e-3 of 1");
  if (sum != 1.0)
    for (double& v : probs_) v /= sum;
}

ProbDist ProbDist::unchecked(std::vector<double> probs) {
  ProbDist p;
  p.probs_ = std::move(probs);
  return p;
}

double entropy(const ProbDist& p) {
  double h = 0.0;
  for (double v : p.probs())
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

ProbDist mean_dist(const std::vector<ProbDist>& samples) {
  if (samples.empty()) throw std::invalid_argument("mean_dist: no samples");
  const std::size_t c = samples.front().size();
  std::vector<double> acc(c, 0.0);
  for (const auto& s : samples) {
    if (s.size() != c)
      throw std::invalid_argument("mean_dist: mixed class counts");
    for (std::size_t i = 0; i < c; ++i) acc[i] += s[i];
  }
  for (double& v : acc) v /= static_cast<double>(samples.size());
  return ProbDist::unchecked(std::move(acc));
}

double mutual_information(const std::vector<ProbDist>& samples) {
  const ProbDist mean = mean_dist(samples);
  double expected_h = 0.0;
  for (const auto& s : samples) expected_h += entropy(s);
  expected_h /= static_cast<double>(samples.size());
  double mi = entropy(mean) - expected_h;
  if (mi < -1e-9)
    throw std::logic_error("mutual_information: negative beyond slack");
  return std::max(mi, 0.0);
}

double kl_divergence(const ProbDist& p, const ProbDist& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl_divergence: class count mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  return kl;
}

TeacherSampleSet TeacherSampleSet::from_samples(std::vector<ProbDist> samples) {
  TeacherSampleSet set{std::move(samples), ProbDist::unchecked({1.0}), 0.0};
  set.mean = mean_dist(set.samples);
  set.mutual_info = mutual_information(set.samples);
  return set;
}

}  // namespace mifuse
