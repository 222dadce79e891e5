#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mifuse/dataio.hpp"
#include "mifuse/numkit.hpp"
#include "mifuse/uncertainty.hpp"

namespace mifuse {

// Black-box sample-only teacher. Implementations prompt however they like;
// the engine only consumes class-aligned distributions.
class LalmProvider {
 public:
  virtual ~LalmProvider() = default;
  // Returned distribution has exactly class_names.size() entries, aligned to
  // class_names order. sample_index identifies the stochastic draw so cached
  // and replayed runs agree.
  virtual ProbDist sample(const std::string& utterance_id,
                          const std::vector<std::string>& class_names,
                          double temperature, int sample_index) = 0;
};

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only (utterance_id, sample_index) -> ProbDist store persisted as
// line-delimited JSON. Re-querying a cached key returns the stored value
// bit-identically.
class TeacherCache {
 public:
  TeacherCache() = default;
  // Loads existing records if the file exists; appends go to the same file.
  explicit TeacherCache(std::filesystem::path file);

  const ProbDist* find(const std::string& utterance_id, int sample_index) const;
  void put(const std::string& utterance_id, int sample_index,
           const ProbDist& dist);
  std::size_t size() const { return entries_.size(); }

 private:
  std::filesystem::path file_;
  std::map<std::pair<std::string, int>, ProbDist> entries_;
  mutable std::mutex mutex_;
};

// Synthetic stand-in for the remote teacher: emits sharp Dirichlet-style
// distributions whose mode is the true label with probability `accuracy`.
struct NoisyOracleConfig {
  double accuracy = 0.7;       // P(mode == true label)
  double concentration = 5.0;  // sharpness; one-hot in the limit
  std::uint64_t seed = 0;
};

class NoisyOracleProvider : public LalmProvider {
 public:
  // Errors land on a seeded random subset of utterances; the wrong mode is
  // uniform over the other classes.
  NoisyOracleProvider(NoisyOracleConfig config,
                      std::map<std::string, int> true_labels);

  // Feature-aware variant: each class has a directed confusion partner, and
  // errors land on the utterances sitting closest to that partner's mean.
  // Emitted sharpness also scales with ambiguity — diffuse, high-disagreement
  // draws on hard inputs, sharp ones on easy inputs — mimicking a teacher
  // that fails systematically and hedges where it fails.
  NoisyOracleProvider(NoisyOracleConfig config, const FeatureDataset& labeled);

  ProbDist sample(const std::string& utterance_id,
                  const std::vector<std::string>& class_names,
                  double temperature, int sample_index) override;

 private:
  NoisyOracleConfig config_;
  std::map<std::string, int> true_labels_;
  std::map<std::string, int> modes_;  // empty: draw the mode per utterance
  std::map<std::string, double> kappa_;  // per-utterance concentration
};

// HTTP client for the documented wire protocol: POST /v1/predict with
// {"utterance_id", "classes", "temperature", "sample_index"}; the response
// body is {"probs": {class: number, ...}}. Non-200 responses retry with
// exponential backoff.
class HttpProvider : public LalmProvider {
 public:
  struct Options {
    std::string host;  // e.g. "localhost"
    int port = 80;
    std::string auth_token;  // sent as a bearer token when nonempty
    int max_retries = 3;
    int backoff_initial_ms = 1000;
  };
  explicit HttpProvider(Options options);
  ~HttpProvider() override;

  ProbDist sample(const std::string& utterance_id,
                  const std::vector<std::string>& class_names,
                  double temperature, int sample_index) override;

  // Parse failures fall back to uniform; this counts them.
  std::size_t parse_failures() const { return parse_failures_; }

 private:
  Options options_;
  std::size_t parse_failures_ = 0;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Parses {"probs": {class_name: number, ...}}: negatives clipped to zero,
// missing classes treated as zero, then renormalized. Anything unparseable
// degrades to uniform and bumps *parse_failures. Never throws.
ProbDist parse_lalm_response(const std::string& payload,
                             const std::vector<std::string>& class_names,
                             std::size_t* parse_failures = nullptr);

// n_passes train-mode forwards through the teacher, softmaxed.
TeacherSampleSet mc_dropout_predict(const MlpClassifier& teacher,
                                    std::span<const double> x,
                                    std::size_t n_passes, Rng& rng);

// Cache-first sampling from the provider. temperature == 0 forces a single
// deterministic sample regardless of n_samples.
TeacherSampleSet lalm_predict(LalmProvider& provider, TeacherCache& cache,
                              const std::string& utterance_id,
                              const std::vector<std::string>& class_names,
                              std::size_t n_samples, double temperature);

struct EmaState {
  MlpClassifier teacher;
  double alpha = 0.999;
};

// theta_teacher <- alpha * theta_teacher + (1 - alpha) * theta_student.
void ema_update(EmaState& ema, const MlpClassifier& student);

}  // namespace mifuse
