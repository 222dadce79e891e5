#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mifuse/numkit.hpp"

namespace mifuse {

struct Manifest {
  std::vector<std::string> class_names;
  std::size_t feature_dim = 0;
  std::size_t layer_count = 1;

  std::size_t n_classes() const { return class_names.size(); }
  bool operator==(const Manifest&) const = default;
};

struct Record {
  std::string id;
  std::vector<double> features;  // [L x D] flat
  std::optional<int> label;      // 0..C-1

  bool operator==(const Record&) const = default;
};

struct FeatureDataset {
  Manifest manifest;
  std::vector<Record> records;

  bool fully_labeled() const;
  // Copy with labels stripped, for the adaptation input.
  FeatureDataset unlabeled_view() const;
};

FeatureDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path);

struct SynthShiftSpec {
  std::size_t n_classes = 4;
  std::size_t feature_dim = 16;
  std::size_t samples_per_class = 500;
  double separation = 3.0;
  double offset_magnitude = 1.5;   // target mean offset along a seeded direction
  double rotation_degrees = 25.0;  // rotation in a seeded random 2-D subspace
  double noise_scale = 1.3;        // target noise std multiplier
  std::uint64_t seed = 0;
};

struct SynthShiftResult {
  FeatureDataset source;          // labeled
  FeatureDataset target_labeled;  // labels kept for evaluation only
};

// Gaussian blobs at separated class means; the target applies the configured
// rotation, mean offset, and noise scaling to the same blobs.
SynthShiftResult generate_synth_shift(const SynthShiftSpec& spec);

struct SplitResult {
  FeatureDataset train, dev, test;
};

// Disjoint, exhaustive, seed-deterministic; stratified by label when present.
SplitResult split(const FeatureDataset& ds, const std::array<double, 3>& fractions,
                  std::uint64_t seed);

}  // namespace mifuse
