#include "mifuse/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mifuse/kernels.hpp"

namespace mifuse {

namespace {

void check_dims(std::size_t d, std::size_t h, std::size_t c, std::size_t l) {
  if (d < 1 || h < 1 || c < 2 || l < 1)
    throw std::invalid_argument("MlpClassifier: need D>=1, H>=1, C>=2, L>=1");
}

std::vector<double> softmax_vec(std::span<const double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - zmax);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace

MlpClassifier MlpClassifier::init(std::size_t input_dim, std::size_t hidden_dim,
                                  std::size_t n_classes, std::size_t n_layers,
                                  double dropout_rate, Rng& rng) {
  check_dims(input_dim, hidden_dim, n_classes, n_layers);
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("MlpClassifier: dropout_rate must be in [0,1)");
  MlpClassifier m;
  m.input_dim = input_dim;
  m.hidden_dim = hidden_dim;
  m.n_classes = n_classes;
  m.n_layers = n_layers;
  m.dropout_rate = dropout_rate;
  if (n_layers > 1) m.layer_weights.assign(n_layers, 0.0);

  auto glorot = [&rng](std::vector<double>& w, std::size_t fan_in,
                       std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w) v = dist(rng);
  };
  m.w1.resize(hidden_dim * input_dim);
  glorot(m.w1, input_dim, hidden_dim);
  m.b1.assign(hidden_dim, 0.0);
  m.w2.resize(n_classes * hidden_dim);
  glorot(m.w2, hidden_dim, n_classes);
  m.b2.assign(n_classes, 0.0);
  return m;
}

std::size_t MlpClassifier::param_count() const {
  return layer_weights.size() + w1.size() + b1.size() + w2.size() + b2.size();
}

std::vector<double> MlpClassifier::flatten() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (const auto* vec : {&layer_weights, &w1, &b1, &w2, &b2})
    flat.insert(flat.end(), vec->begin(), vec->end());
  return flat;
}

void MlpClassifier::unflatten(std::span<const double> flat) {
  if (flat.size() != param_count())
    throw std::invalid_argument("unflatten: size mismatch");
  auto it = flat.begin();
  for (auto* vec : {&layer_weights, &w1, &b1, &w2, &b2}) {
    std::copy(it, it + static_cast<long>(vec->size()), vec->begin());
    it += static_cast<long>(vec->size());
  }
}

std::vector<double> MlpGradients::flatten() const {
  std::vector<double> flat;
  for (const auto* vec : {&layer_weights, &w1, &b1, &w2, &b2})
    flat.insert(flat.end(), vec->begin(), vec->end());
  return flat;
}

std::pair<std::vector<double>, ForwardCache> forward(const MlpClassifier& model,
                                                     std::span<const double> x,
                                                     ForwardMode mode,
                                                     Rng* rng) {
  const std::size_t d = model.input_dim, h = model.hidden_dim,
                    c = model.n_classes, l = model.n_layers;
  if (x.size() != l * d)
    throw std::invalid_argument("forward: input size mismatch");
  for (double v : x)
    if (!std::isfinite(v))
      throw std::invalid_argument("forward: non-finite input");
  if (mode == ForwardMode::kTrain && rng == nullptr)
    throw std::invalid_argument("forward: train mode requires an rng");

  ForwardCache cache;
  if (l == 1) {
    cache.aggregated_input.assign(x.begin(), x.end());
  } else {
    cache.layer_inputs.assign(x.begin(), x.end());
    cache.layer_softmax = softmax_vec(model.layer_weights);
    cache.aggregated_input.assign(d, 0.0);
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t i = 0; i < d; ++i)
        cache.aggregated_input[i] += cache.layer_softmax[li] * x[li * d + i];
  }

  cache.pre_activation.resize(h);
  kernels::matvec(model.w1, h, d, cache.aggregated_input, model.b1,
                  cache.pre_activation);
  cache.post_activation.resize(h);
  for (std::size_t i = 0; i < h; ++i)
    cache.post_activation[i] = std::max(cache.pre_activation[i], 0.0);

  cache.dropout_mask.assign(h, 1.0);
  if (mode == ForwardMode::kTrain && model.dropout_rate > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - model.dropout_rate);
    for (std::size_t i = 0; i < h; ++i)
      cache.dropout_mask[i] = unit(*rng) < model.dropout_rate ? 0.0 : keep_scale;
  }

  std::vector<double> dropped(h);
  for (std::size_t i = 0; i < h; ++i)
    dropped[i] = cache.post_activation[i] * cache.dropout_mask[i];

  cache.logits.resize(c);
  kernels::matvec(model.w2, c, h, dropped, model.b2, cache.logits);
  return {cache.logits, cache};
}

MlpGradients backward(const MlpClassifier& model, const ForwardCache& cache,
                      std::span<const double> grad_logits) {
  const std::size_t d = model.input_dim, h = model.hidden_dim,
                    c = model.n_classes, l = model.n_layers;
  if (grad_logits.size() != c)
    throw std::invalid_argument("backward: grad_logits size mismatch");
  if (cache.post_activation.size() != h || cache.aggregated_input.size() != d)
    throw std::invalid_argument("backward: cache does not match model");

  MlpGradients g;
  g.b2.assign(grad_logits.begin(), grad_logits.end());

  std::vector<double> dropped(h);
  for (std::size_t i = 0; i < h; ++i)
    dropped[i] = cache.post_activation[i] * cache.dropout_mask[i];
  g.w2.assign(c * h, 0.0);
  kernels::outer_accum(g.w2, grad_logits, dropped);

  std::vector<double> grad_dropped(h);
  kernels::matvec_transpose(model.w2, c, h, grad_logits, grad_dropped);
  std::vector<double> grad_pre(h);
  for (std::size_t i = 0; i < h; ++i)
    grad_pre[i] = cache.pre_activation[i] > 0.0
                      ? grad_dropped[i] * cache.dropout_mask[i]
                      : 0.0;

  g.b1 = grad_pre;
  g.w1.assign(h * d, 0.0);
  kernels::outer_accum(g.w1, grad_pre, cache.aggregated_input);

  if (l > 1) {
    // Backprop through agg = sum_l s_l x_l with s = softmax(layer_weights).
    if (cache.layer_inputs.size() != l * d || cache.layer_softmax.size() != l)
      throw std::invalid_argument("backward: cache missing layer inputs");
    std::vector<double> grad_agg(d);
    kernels::matvec_transpose(model.w1, h, d, grad_pre, grad_agg);
    std::vector<double> grad_s(l, 0.0);
    for (std::size_t li = 0; li < l; ++li)
      for (std::size_t i = 0; i < d; ++i)
        grad_s[li] += grad_agg[i] * cache.layer_inputs[li * d + i];
    double dot = 0.0;
    for (std::size_t li = 0; li < l; ++li)
      dot += cache.layer_softmax[li] * grad_s[li];
    g.layer_weights.resize(l);
    for (std::size_t li = 0; li < l; ++li)
      g.layer_weights[li] = cache.layer_softmax[li] * (grad_s[li] - dot);
  }
  return g;
}

ProbDist softmax(std::span<const double> logits) {
  for (double v : logits)
    if (!std::isfinite(v))
      throw std::invalid_argument("softmax: non-finite logit");
  return ProbDist::unchecked(softmax_vec(logits));
}

AdamWState AdamWState::init(std::size_t n_params, double weight_decay) {
  AdamWState s;
  s.m.assign(n_params, 0.0);
  s.v.assign(n_params, 0.0);
  s.weight_decay = weight_decay;
  return s;
}

void adamw_step(AdamWState& state, std::span<double> params,
                std::span<const double> grads, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adamw_step: shape mismatch");
  for (double g : grads)
    if (!std::isfinite(g))
      throw std::runtime_error("adamw_step: non-finite gradient");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] =
        state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    params[i] -= lr * state.weight_decay * params[i];
  }
}

}  // namespace mifuse
