#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "mifuse/dataio.hpp"
#include "mifuse/evalkit.hpp"
#include "mifuse/fusion.hpp"
#include "mifuse/numkit.hpp"
#include "mifuse/teachers.hpp"

namespace mifuse {

// Which teachers drive the fused soft labels. ClsOnly / LmOnly are the
// single-teacher adaptation baselines.
enum class TeacherMode { kBoth, kClsOnly, kLmOnly };

struct AdaptConfig {
  std::size_t batch_size = 32;
  double dropout = 0.4;
  double weight_decay = 0.1;
  double teacher_lr = 5e-4;
  double student_lr = 5e-4;
  std::vector<double> student_lr_grid = {7.5e-4, 5e-4, 1e-4, 5e-5, 1e-6};
  std::size_t plateau_patience_steps = 1000;
  double alpha_ema = 0.999;
  double lambda_div = 1.0;
  std::size_t n_lm = 5;
  std::size_t n_cls = 8;
  double lalm_temperature = 0.6;
  std::uint64_t seed = 0;

  std::size_t hidden_dim = 256;
  std::size_t max_steps = 20000;  // hard cap on top of the plateau stop
  std::size_t eval_every = 100;
  std::size_t checkpoint_every = 500;
  TeacherMode teacher_mode = TeacherMode::kBoth;

  void validate() const;
};

struct AdaptState {
  MlpClassifier student;
  EmaState ema_teacher;
  AdamWState optimizer;
  std::uint64_t step = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  std::uint64_t steps_since_best = 0;
  MlpClassifier best_student;
  std::vector<MetricPoint> metric_log;
  std::string rng_state;
};

// Source-domain supervised training with hard-label cross-entropy and the
// same plateau stop; returns the parameters from the best-loss step.
MlpClassifier train_source(const FeatureDataset& data, const AdaptConfig& config,
                           Rng& rng);

// Plateau stopping rule: a strict new minimum resets the patience counter;
// `patience` steps without one stops the run.
struct PlateauTracker {
  double best_loss = std::numeric_limits<double>::infinity();
  std::uint64_t best_step = 0;
  std::uint64_t steps_since_best = 0;

  // Returns true when this observation makes a new best.
  bool observe(std::uint64_t step, double loss) {
    if (loss < best_loss) {
      best_loss = loss;
      best_step = step;
      steps_since_best = 0;
      return true;
    }
    steps_since_best += 1;
    return false;
  }

  bool should_stop(std::uint64_t patience) const {
    return steps_since_best >= patience;
  }
};

struct DiversityLoss {
  double loss = 0.0;                           // -H(batch mean), in [-ln C, 0]
  std::vector<std::vector<double>> grad;       // [B][C], wrt each prob entry
};

DiversityLoss diversity_loss(const std::vector<ProbDist>& batch_probs);

struct SoftCeLoss {
  double loss = 0.0;
  std::vector<double> grad_logits;  // softmax(logits) - target
};

SoftCeLoss soft_cross_entropy(std::span<const double> logits,
                              const ProbDist& target);

struct AdaptResult {
  MlpClassifier student;  // best-loss checkpoint
  AdaptState state;
};

// The full adaptation loop: per step, fused teacher soft labels supervise the
// student under L_CE + lambda_div * L_div, followed by an AdamW step and an
// EMA teacher update. When run_dir is nonempty, metrics stream to
// metrics.jsonl and the state checkpoints to checkpoint.json every
// checkpoint_every steps (resume picks the checkpoint back up).
AdaptResult adapt_student(const FeatureDataset& target_data,
                          const MlpClassifier& source_model,
                          LalmProvider& provider, TeacherCache& cache,
                          const FusionConfig& fusion, const AdaptConfig& config,
                          const FeatureDataset* dev_data = nullptr,
                          const std::filesystem::path& run_dir = {},
                          bool resume = false);

struct LrScanResult {
  double best_lr = 0.0;
  AdaptResult best;
  std::vector<std::pair<double, double>> dev_accuracy_by_lr;
};

// One adapt run per grid entry with identical seeds; selects the highest
// final dev unweighted accuracy, ties to the smaller lr.
LrScanResult lr_scan(const FeatureDataset& target_data,
                     const MlpClassifier& source_model, LalmProvider& provider,
                     TeacherCache& cache, const FusionConfig& fusion,
                     const AdaptConfig& config, const FeatureDataset& dev_data);

// Versioned JSON checkpoint round-trip.
void save_checkpoint(const AdaptState& state, const std::filesystem::path& path);
AdaptState load_checkpoint(const std::filesystem::path& path);

void save_model(const MlpClassifier& model, const std::filesystem::path& path);
MlpClassifier load_model(const std::filesystem::path& path);

}  // namespace mifuse
