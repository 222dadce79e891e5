#include "mifuse/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mifuse {

using nlohmann::json;

void AdaptConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("AdaptConfig: batch_size >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("AdaptConfig: dropout in [0,1)");
  if (weight_decay < 0.0)
    throw std::invalid_argument("AdaptConfig: weight_decay >= 0");
  if (teacher_lr <= 0.0 || student_lr <= 0.0)
    throw std::invalid_argument("AdaptConfig: learning rates must be > 0");
  if (plateau_patience_steps < 1)
    throw std::invalid_argument("AdaptConfig: plateau_patience_steps >= 1");
  if (alpha_ema < 0.0 || alpha_ema >= 1.0)
    throw std::invalid_argument("AdaptConfig: alpha_ema in [0,1)");
  if (lambda_div < 0.0) throw std::invalid_argument("AdaptConfig: lambda_div >= 0");
  if (n_lm < 1 || n_cls < 1)
    throw std::invalid_argument("AdaptConfig: n_lm, n_cls >= 1");
  if (lalm_temperature < 0.0)
    throw std::invalid_argument("AdaptConfig: lalm_temperature >= 0");
  if (hidden_dim < 1 || max_steps < 1)
    throw std::invalid_argument("AdaptConfig: hidden_dim, max_steps >= 1");
}

DiversityLoss diversity_loss(const std::vector<ProbDist>& batch_probs) {
  if (batch_probs.empty())
    throw std::invalid_argument("diversity_loss: empty batch");
  const std::size_t b = batch_probs.size();
  const std::size_t c = batch_probs.front().size();
  std::vector<double> mean(c, 0.0);
  for (const auto& p : batch_probs)
    for (std::size_t i = 0; i < c; ++i) mean[i] += p[i];
  for (double& v : mean) v /= static_cast<double>(b);

  DiversityLoss out;
  out.loss = 0.0;
  std::vector<double> grad_row(c);
  for (std::size_t i = 0; i < c; ++i) {
    if (mean[i] > 0.0) out.loss += mean[i] * std::log(mean[i]);
    // d(-H)/dp_{k,i} = (ln mean_i + 1)/B; floor inside the log only to keep
    // the gradient finite at exact zeros.
    grad_row[i] = (std::log(std::max(mean[i], 1e-300)) + 1.0) /
                  static_cast<double>(b);
  }
  out.grad.assign(b, grad_row);
  return out;
}

SoftCeLoss soft_cross_entropy(std::span<const double> logits,
                              const ProbDist& target) {
  if (logits.size() != target.size())
    throw std::invalid_argument("soft_cross_entropy: size mismatch");
  const ProbDist p = softmax(logits);
  SoftCeLoss out;
  out.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (target[i] > 0.0)
      out.loss -= target[i] * std::log(std::max(p[i], 1e-300));
    out.grad_logits[i] = p[i] - target[i];
  }
  return out;
}

namespace {

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  return rng;
}

json model_to_json(const MlpClassifier& m) {
  return {{"input_dim", m.input_dim},   {"hidden_dim", m.hidden_dim},
          {"n_classes", m.n_classes},   {"n_layers", m.n_layers},
          {"layer_weights", m.layer_weights},
          {"w1", m.w1},                 {"b1", m.b1},
          {"w2", m.w2},                 {"b2", m.b2},
          {"dropout_rate", m.dropout_rate}};
}

MlpClassifier model_from_json(const json& j) {
  MlpClassifier m;
  m.input_dim = j.at("input_dim").get<std::size_t>();
  m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  m.n_classes = j.at("n_classes").get<std::size_t>();
  m.n_layers = j.at("n_layers").get<std::size_t>();
  m.layer_weights = j.at("layer_weights").get<std::vector<double>>();
  m.w1 = j.at("w1").get<std::vector<double>>();
  m.b1 = j.at("b1").get<std::vector<double>>();
  m.w2 = j.at("w2").get<std::vector<double>>();
  m.b2 = j.at("b2").get<std::vector<double>>();
  m.dropout_rate = j.at("dropout_rate").get<double>();
  if (m.w1.size() != m.hidden_dim * m.input_dim ||
      m.w2.size() != m.n_classes * m.hidden_dim ||
      m.b1.size() != m.hidden_dim || m.b2.size() != m.n_classes)
    throw std::runtime_error("model_from_json: inconsistent shapes");
  return m;
}

// Deterministic epoch-shuffled batch source.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size)
      : n_(n), batch_size_(std::min(batch_size, n)) {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  std::vector<std::size_t> next(Rng& rng) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    for (std::size_t i = 0; i < batch_size_; ++i) {
      if (cursor_ == 0) std::shuffle(order_.begin(), order_.end(), rng);
      batch.push_back(order_[cursor_]);
      cursor_ = (cursor_ + 1) % n_;
    }
    return batch;
  }

 private:
  std::size_t n_, batch_size_, cursor_ = 0;
  std::vector<std::size_t> order_;
};

void append_metric(std::ofstream* out, const MetricPoint& p) {
  if (!out || !out->is_open()) return;
  json j = {{"step", p.step}, {"loss", p.loss}};
  if (p.dev_ua >= 0.0)
    j["dev_ua"] = p.dev_ua;
  else
    j["dev_ua"] = nullptr;
  *out << j.dump() << '\n';
  out->flush();
}

}  // namespace

MlpClassifier train_source(const FeatureDataset& data, const AdaptConfig& config,
                           Rng& rng) {
  config.validate();
  if (data.records.empty())
    throw std::invalid_argument("train_source: empty dataset");
  if (!data.fully_labeled())
    throw std::invalid_argument("train_source: dataset must be labeled");
  const std::size_t c = data.manifest.n_classes();
  std::vector<long> support(c, 0);
  for (const auto& r : data.records) ++support[static_cast<std::size_t>(*r.label)];
  for (std::size_t i = 0; i < c; ++i)
    if (support[i] == 0)
      throw std::invalid_argument("train_source: class " +
                                  data.manifest.class_names[i] +
                                  " absent from data");

  MlpClassifier model = MlpClassifier::init(
      data.manifest.feature_dim, config.hidden_dim, c,
      data.manifest.layer_count, config.dropout, rng);
  AdamWState opt = AdamWState::init(model.param_count(), config.weight_decay);
  BatchSampler sampler(data.records.size(), config.batch_size);

  MlpClassifier best = model;
  PlateauTracker plateau;

  for (std::uint64_t step = 1; step <= config.max_steps; ++step) {
    const auto batch = sampler.next(rng);
    std::vector<double> grad_flat(model.param_count(), 0.0);
    double loss = 0.0;
    for (std::size_t idx : batch) {
      const Record& r = data.records[idx];
      auto [logits, cache] =
          forward(model, r.features, ForwardMode::kTrain, &rng);
      std::vector<double> one_hot(c, 0.0);
      one_hot[static_cast<std::size_t>(*r.label)] = 1.0;
      auto ce = soft_cross_entropy(logits, ProbDist::unchecked(one_hot));
      loss += ce.loss;
      for (double& g : ce.grad_logits)
        g /= static_cast<double>(batch.size());
      const auto grads = backward(model, cache, ce.grad_logits);
      const auto flat = grads.flatten();
      for (std::size_t i = 0; i < flat.size(); ++i) grad_flat[i] += flat[i];
    }
    loss /= static_cast<double>(batch.size());

    auto params = model.flatten();
    adamw_step(opt, params, grad_flat, config.teacher_lr);
    model.unflatten(params);

    if (plateau.observe(step, loss)) best = model;
    if (plateau.should_stop(config.plateau_patience_steps)) break;
  }
  return best;
}

AdaptResult adapt_student(const FeatureDataset& target_data,
                          const MlpClassifier& source_model,
                          LalmProvider& provider, TeacherCache& cache,
                          const FusionConfig& fusion, const AdaptConfig& config,
                          const FeatureDataset* dev_data,
                          const std::filesystem::path& run_dir, bool resume) {
  config.validate();
  fusion.validate(/*allow_free_tau=*/true);
  if (target_data.records.empty())
    throw std::invalid_argument("adapt_student: empty target dataset");
  const std::size_t c = target_data.manifest.n_classes();
  if (source_model.n_classes != c)
    throw std::invalid_argument("adapt_student: class count mismatch");
  if (source_model.input_dim != target_data.manifest.feature_dim ||
      source_model.n_layers != target_data.manifest.layer_count)
    throw std::invalid_argument("adapt_student: feature shape mismatch");

  const bool single_gen = fusion.generation == Generation::kSingle;
  const std::size_t n_lm = single_gen ? 1 : config.n_lm;
  const double lm_temperature = single_gen ? 0.0 : config.lalm_temperature;

  AdaptState state;
  const std::filesystem::path ckpt_path =
      run_dir.empty() ? std::filesystem::path{} : run_dir / "checkpoint.json";
  Rng rng(config.seed);
  bool resumed = false;
  if (resume && !ckpt_path.empty() && std::filesystem::exists(ckpt_path)) {
    state = load_checkpoint(ckpt_path);
    rng = rng_from_string(state.rng_state);
    resumed = true;
  } else {
    state.student = source_model;
    state.student.dropout_rate = config.dropout;
    state.ema_teacher.teacher = state.student;
    state.ema_teacher.alpha = config.alpha_ema;
    state.optimizer =
        AdamWState::init(state.student.param_count(), config.weight_decay);
    state.best_student = state.student;
  }

  std::ofstream metrics_out;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    metrics_out.open(run_dir / "metrics.jsonl",
                     resumed ? std::ios::app : std::ios::trunc);
  }

  // The sampler draws from its own rng so a resume can replay the consumed
  // prefix and land on the same batch sequence as an uninterrupted run.
  Rng sampler_rng(config.seed ^ 0x517cc1b727220a95ULL);
  BatchSampler sampler(target_data.records.size(), config.batch_size);
  if (resumed)
    for (std::uint64_t s = 0; s < state.step; ++s) sampler.next(sampler_rng);

  while (state.step < config.max_steps &&
         state.steps_since_best < config.plateau_patience_steps) {
    const auto batch = sampler.next(sampler_rng);
    state.step += 1;

    // Teacher soft labels for the batch.
    std::vector<ProbDist> targets;
    targets.reserve(batch.size());
    for (std::size_t idx : batch) {
      const Record& r = target_data.records[idx];
      switch (config.teacher_mode) {
        case TeacherMode::kBoth: {
          auto cls = mc_dropout_predict(state.ema_teacher.teacher, r.features,
                                        config.n_cls, rng);
          auto lm = lalm_predict(provider, cache, r.id,
                                 target_data.manifest.class_names, n_lm,
                                 lm_temperature);
          targets.push_back(fuse(cls, lm, fusion).dist);
          break;
        }
        case TeacherMode::kClsOnly: {
          auto cls = mc_dropout_predict(state.ema_teacher.teacher, r.features,
                                        config.n_cls, rng);
          targets.push_back(cls.mean);
          break;
        }
        case TeacherMode::kLmOnly: {
          auto lm = lalm_predict(provider, cache, r.id,
                                 target_data.manifest.class_names, n_lm,
                                 lm_temperature);
          targets.push_back(lm.mean);
          break;
        }
      }
    }

    // Student forward passes (train mode), then the combined loss.
    std::vector<ForwardCache> caches(batch.size());
    std::vector<ProbDist> student_probs;
    student_probs.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Record& r = target_data.records[batch[i]];
      auto [logits, fc] =
          forward(state.student, r.features, ForwardMode::kTrain, &rng);
      caches[i] = std::move(fc);
      student_probs.push_back(softmax(logits));
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    DiversityLoss div;
    if (config.lambda_div > 0.0) div = diversity_loss(student_probs);

    std::vector<double> grad_flat(state.student.param_count(), 0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto ce = soft_cross_entropy(caches[i].logits, targets[i]);
      std::vector<double> grad_logits(c, 0.0);
      for (std::size_t k = 0; k < c; ++k)
        grad_logits[k] = ce.grad_logits[k] * inv_b;
      if (config.lambda_div > 0.0) {
        // Chain the diversity gradient (wrt probs) through softmax.
        const ProbDist& p = student_probs[i];
        double dot = 0.0;
        for (std::size_t k = 0; k < c; ++k) dot += div.grad[i][k] * p[k];
        for (std::size_t k = 0; k < c; ++k)
          grad_logits[k] += config.lambda_div * p[k] * (div.grad[i][k] - dot);
      }
      const auto grads = backward(state.student, caches[i], grad_logits);
      const auto flat = grads.flatten();
      for (std::size_t k = 0; k < flat.size(); ++k) grad_flat[k] += flat[k];
    }
    // Plateau bookkeeping tracks the objective at the current parameters
    // through a deterministic forward. The train-mode loss above carries
    // dropout noise that grows as the teachers sharpen, which would bias the
    // best-loss checkpoint toward early steps.
    std::vector<ProbDist> eval_probs;
    eval_probs.reserve(batch.size());
    double eval_ce = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Record& r = target_data.records[batch[i]];
      auto [logits, fc] =
          forward(state.student, r.features, ForwardMode::kEval, nullptr);
      eval_ce += soft_cross_entropy(logits, targets[i]).loss;
      eval_probs.push_back(softmax(logits));
    }
    double total_loss = eval_ce * inv_b;
    if (config.lambda_div > 0.0)
      total_loss += config.lambda_div * diversity_loss(eval_probs).loss;

    auto params = state.student.flatten();
    adamw_step(state.optimizer, params, grad_flat, config.student_lr);
    state.student.unflatten(params);
    ema_update(state.ema_teacher, state.student);

    MetricPoint point{state.step, total_loss, -1.0};
    if (dev_data &&
        (state.step == 1 || state.step % config.eval_every == 0)) {
      point.dev_ua = evaluate(state.student, *dev_data).unweighted_accuracy;
    }
    state.metric_log.push_back(point);
    append_metric(metrics_out.is_open() ? &metrics_out : nullptr, point);

    if (total_loss < state.best_loss) {
      state.best_loss = total_loss;
      state.best_step = state.step;
      state.best_student = state.student;
      state.steps_since_best = 0;
    } else {
      state.steps_since_best += 1;
    }

    if (!ckpt_path.empty() && state.step % config.checkpoint_every == 0) {
      state.rng_state = rng_to_string(rng);
      save_checkpoint(state, ckpt_path);
    }
  }

  state.rng_state = rng_to_string(rng);
  if (!ckpt_path.empty()) save_checkpoint(state, ckpt_path);
  return {state.best_student, std::move(state)};
}

LrScanResult lr_scan(const FeatureDataset& target_data,
                     const MlpClassifier& source_model, LalmProvider& provider,
                     TeacherCache& cache, const FusionConfig& fusion,
                     const AdaptConfig& config, const FeatureDataset& dev_data) {
  if (dev_data.records.empty())
    throw std::invalid_argument("lr_scan: dev set required");
  if (config.student_lr_grid.empty())
    throw std::invalid_argument("lr_scan: empty grid");

  LrScanResult out;
  double best_ua = -1.0;
  for (double lr : config.student_lr_grid) {
    AdaptConfig run_config = config;
    run_config.student_lr = lr;
    AdaptResult result = adapt_student(target_data, source_model, provider,
                                       cache, fusion, run_config, &dev_data);
    const double ua = evaluate(result.student, dev_data).unweighted_accuracy;
    out.dev_accuracy_by_lr.emplace_back(lr, ua);
    const bool better = ua > best_ua || (ua == best_ua && lr < out.best_lr);
    if (better) {
      best_ua = ua;
      out.best_lr = lr;
      out.best = std::move(result);
    }
  }
  return out;
}

void save_model(const MlpClassifier& model, const std::filesystem::path& path) {
  std::ofstream o(path, std::ios::trunc);
  if (!o) throw std::runtime_error("save_model: cannot open " + path.string());
  json j = {{"version", 1}, {"model", model_to_json(model)}};
  o << j.dump() << '\n';
}

MlpClassifier load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path.string());
  json j = json::parse(in);
  return model_from_json(j.at("model"));
}

void save_checkpoint(const AdaptState& state, const std::filesystem::path& path) {
  json log = json::array();
  for (const auto& p : state.metric_log)
    log.push_back({p.step, p.loss, p.dev_ua});
  json j = {{"version", 1},
            {"student", model_to_json(state.student)},
            {"ema_teacher", model_to_json(state.ema_teacher.teacher)},
            {"ema_alpha", state.ema_teacher.alpha},
            {"optimizer",
             {{"m", state.optimizer.m},
              {"v", state.optimizer.v},
              {"step_count", state.optimizer.step_count},
              {"beta1", state.optimizer.beta1},
              {"beta2", state.optimizer.beta2},
              {"epsilon", state.optimizer.epsilon},
              {"weight_decay", state.optimizer.weight_decay}}},
            {"step", state.step},
            {"best_loss", state.best_loss},
            {"best_step", state.best_step},
            {"steps_since_best", state.steps_since_best},
            {"best_student", model_to_json(state.best_student)},
            {"metric_log", log},
            {"rng_state", state.rng_state}};
  const auto tmp = path.string() + ".tmp";
  std::ofstream o(tmp, std::ios::trunc);
  if (!o) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
  o << j.dump() << '\n';
  o.close();
  std::filesystem::rename(tmp, path);
}

AdaptState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  json j = json::parse(in);
  if (j.at("version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported version");
  AdaptState s;
  s.student = model_from_json(j.at("student"));
  s.ema_teacher.teacher = model_from_json(j.at("ema_teacher"));
  s.ema_teacher.alpha = j.at("ema_alpha").get<double>();
  const json& opt = j.at("optimizer");
  s.optimizer.m = opt.at("m").get<std::vector<double>>();
  s.optimizer.v = opt.at("v").get<std::vector<double>>();
  s.optimizer.step_count = opt.at("step_count").get<std::uint64_t>();
  s.optimizer.beta1 = opt.at("beta1").get<double>();
  s.optimizer.beta2 = opt.at("beta2").get<double>();
  s.optimizer.epsilon = opt.at("epsilon").get<double>();
  s.optimizer.weight_decay = opt.at("weight_decay").get<double>();
  s.step = j.at("step").get<std::uint64_t>();
  s.best_loss = j.at("best_loss").get<double>();
  s.best_step = j.at("best_step").get<std::uint64_t>();
  s.steps_since_best = j.at("steps_since_best").get<std::uint64_t>();
  s.best_student = model_from_json(j.at("best_student"));
  for (const auto& row : j.at("metric_log"))
    s.metric_log.push_back({row.at(0).get<std::uint64_t>(),
                            row.at(1).get<double>(), row.at(2).get<double>()});
  s.rng_state = j.at("rng_state").get<std::string>();
  return s;
}

}  // namespace mifuse
