#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mifuse/uncertainty.hpp"

namespace mifuse {

using Rng = std::mt19937_64;

// Classifier over a stack of L precomputed feature layers: softmax-weighted
// layer aggregation (identity when L = 1), one hidden affine + relu + dropout,
// then the output affine.
struct MlpClassifier {
  std::size_t input_dim = 0;   // D
  std::size_t hidden_dim = 0;  // H
  std::size_t n_classes = 0;   // C
  std::size_t n_layers = 1;    // L

  std::vector<double> layer_weights;  // [L], empty when L = 1
  std::vector<double> w1;             // [H x D] row-major
  std::vector<double> b1;             // [H]
  std::vector<double> w2;             // [C x H] row-major
  std::vector<double> b2;             // [C]
  double dropout_rate = 0.0;

  static MlpClassifier init(std::size_t input_dim, std::size_t hidden_dim,
                            std::size_t n_classes, std::size_t n_layers,
                            double dropout_rate, Rng& rng);

  std::size_t param_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);

  bool operator==(const MlpClassifier&) const = default;
};

// Per-parameter gradients, same layout as the model fields.
struct MlpGradients {
  std::vector<double> layer_weights;
  std::vector<double> w1, b1, w2, b2;

  std::vector<double> flatten() const;
};

struct ForwardCache {
  std::vector<double> aggregated_input;  // [D]
  std::vector<double> layer_inputs;      // [L x D], empty when L = 1
  std::vector<double> layer_softmax;     // [L], empty when L = 1
  std::vector<double> pre_activation;    // [H]
  std::vector<double> post_activation;   // [H], after relu, before dropout
  std::vector<double> dropout_mask;      // [H], 0 or 1/(1-rate)
  std::vector<double> logits;            // [C]
};

enum class ForwardMode { kTrain, kEval };

// x is [L x D] row-major (or [D] when L = 1). Train mode draws a fresh
// dropout mask from rng; eval mode uses an all-ones mask.
std::pair<std::vector<double>, ForwardCache> forward(const MlpClassifier& model,
                                                     std::span<const double> x,
                                                     ForwardMode mode,
                                                     Rng* rng = nullptr);

// Exact gradients for the cached forward pass; reuses the cached dropout mask.
MlpGradients backward(const MlpClassifier& model, const ForwardCache& cache,
                      std::span<const double> grad_logits);

ProbDist softmax(std::span<const double> logits);

struct AdamWState {
  std::vector<double> m, v;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.1;

  static AdamWState init(std::size_t n_params, double weight_decay);
};

// Bias-corrected Adam step followed by decoupled weight decay
// (theta -= lr * wd * theta). Mutates params and state in place.
void adamw_step(AdamWState& state, std::span<double> params,
                std::span<const double> grads, double lr);

}  // namespace mifuse
