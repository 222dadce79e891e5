#pragma once

#include <filesystem>
#include <vector>

#include "mifuse/dataio.hpp"
#include "mifuse/numkit.hpp"

namespace mifuse {

struct EvalReport {
  double unweighted_accuracy = 0.0;  // mean per-class recall over supported classes
  double plain_accuracy = 0.0;       // trace / n
  std::vector<std::vector<long>> confusion;  // rows = true, cols = predicted
  std::size_t n = 0;
  std::size_t excluded_classes = 0;  // classes with zero support
};

// Eval-mode inference over a labeled dataset; argmax ties break to the
// lowest index.
EvalReport evaluate(const MlpClassifier& model, const FeatureDataset& data);

struct MetricPoint {
  std::uint64_t step = 0;
  double loss = 0.0;
  double dev_ua = -1.0;  // < 0 when no dev evaluation happened at this step
};

// (step, dev_ua) rows for the steps that carry a dev evaluation, ordered and
// deduplicated by step; rejects out-of-order logs.
std::vector<std::pair<std::uint64_t, double>> curve_points(
    const std::vector<MetricPoint>& log);

void write_curve_csv(const std::vector<MetricPoint>& log,
                     const std::filesystem::path& path);

void write_report_json(const EvalReport& report, const std::filesystem::path& path,
                       std::uint64_t seed, const std::string& config_hash);

}  // namespace mifuse
