#include "mifuse/teachers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <iostream>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace mifuse {

using nlohmann::json;

// ---------------------------------------------------------------- cache

TeacherCache::TeacherCache(std::filesystem::path file) : file_(std::move(file)) {
  if (!std::filesystem::exists(file_)) return;
  std::ifstream in(file_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("TeacherCache: bad record at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    auto probs = j.at("probs").get<std::vector<double>>();
    [[maybe_unused]] ProbDist validated{probs};  // keep the stored bits as-is
    entries_.emplace(
        std::make_pair(j.at("utterance_id").get<std::string>(),
                       j.at("sample_index").get<int>()),
        ProbDist::unchecked(std::move(probs)));
  }
}

const ProbDist* TeacherCache::find(const std::string& utterance_id,
                                   int sample_index) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find({utterance_id, sample_index});
  return it == entries_.end() ? nullptr : &it->second;
}

void TeacherCache::put(const std::string& utterance_id, int sample_index,
                       const ProbDist& dist) {
  std::lock_guard lock(mutex_);
  auto [it, inserted] =
      entries_.emplace(std::make_pair(utterance_id, sample_index), dist);
  if (!inserted) return;  // append-only; first write wins
  if (!file_.empty()) {
    std::ofstream out(file_, std::ios::app);
    json j = {{"utterance_id", utterance_id},
              {"sample_index", sample_index},
              {"probs", dist.probs()}};
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------- oracle

NoisyOracleProvider::NoisyOracleProvider(NoisyOracleConfig config,
                                         std::map<std::string, int> true_labels)
    : config_(std::move(config)), true_labels_(std::move(true_labels)) {
  if (config_.accuracy <= 0.0 || config_.accuracy > 1.0)
    throw std::invalid_argument("NoisyOracle: accuracy must be in (0,1]");
  if (config_.concentration <= 0.0)
    throw std::invalid_argument("NoisyOracle: concentration must be > 0");
}

NoisyOracleProvider::NoisyOracleProvider(NoisyOracleConfig config,
                                         const FeatureDataset& labeled)
    : NoisyOracleProvider(std::move(config), std::map<std::string, int>{}) {
  if (!labeled.fully_labeled() || labeled.records.empty())
    throw std::invalid_argument(
        "NoisyOracle: feature-aware variant needs a labeled dataset");
  const std::size_t c = labeled.manifest.n_classes();
  const std::size_t dim = labeled.records.front().features.size();

  std::vector<std::vector<double>> mean(c, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(c, 0);
  for (const auto& r : labeled.records) {
    const auto cls = static_cast<std::size_t>(*r.label);
    ++count[cls];
    for (std::size_t i = 0; i < dim; ++i) mean[cls][i] += r.features[i];
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (count[k] == 0)
      throw std::invalid_argument("NoisyOracle: class " +
                                  labeled.manifest.class_names[k] +
                                  " absent from data");
    for (double& v : mean[k]) v /= static_cast<double>(count[k]);
  }

  // Each class has one directed confusion partner (the next class,
  // cyclically), and errors land on the samples that sit closest to that
  // partner: margin = d²(x, partner mean) − d²(x, true mean) is smallest for
  // them. Directed confusions matter: if both sides of a boundary mislabeled
  // each other symmetrically the errors would cancel and a student could
  // still learn the true boundary from the corrupted labels.
  struct Scored {
    const Record* rec;
    double margin;
  };
  std::vector<std::vector<Scored>> by_class(c);
  for (const auto& r : labeled.records) {
    const auto truth = static_cast<std::size_t>(*r.label);
    const std::size_t partner = (truth + 1) % c;
    double d_true = 0.0, d_partner = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double dt = r.features[i] - mean[truth][i];
      const double dp = r.features[i] - mean[partner][i];
      d_true += dt * dt;
      d_partner += dp * dp;
    }
    by_class[truth].push_back({&r, d_partner - d_true});
    true_labels_[r.id] = *r.label;
  }

  for (std::size_t k = 0; k < c; ++k) {
    auto& group = by_class[k];
    std::sort(group.begin(), group.end(), [](const Scored& a, const Scored& b) {
      return a.margin != b.margin ? a.margin < b.margin
                                  : a.rec->id < b.rec->id;
    });
    const auto n_wrong = static_cast<std::size_t>(std::llround(
        (1.0 - config_.accuracy) * static_cast<double>(group.size())));
    const int partner = static_cast<int>((k + 1) % c);
    for (std::size_t i = 0; i < group.size(); ++i) {
      modes_[group[i].rec->id] = i < n_wrong ? partner : static_cast<int>(k);
      // The teacher is confidently wrong where it errs (1.5x the base
      // sharpness) and sharpens with ease rank where it is right, so
      // correct-but-hard utterances come out diffuse. Confidence alone is
      // therefore not a reliable signal of correctness, as with a real
      // black-box teacher.
      double multiplier = 1.5;
      if (i >= n_wrong && group.size() > n_wrong) {
        const double rank = static_cast<double>(i - n_wrong) /
                            static_cast<double>(group.size() - n_wrong);
        multiplier = 0.3 + 1.7 * rank;
      }
      kappa_[group[i].rec->id] = config_.concentration * multiplier;
    }
  }
}

ProbDist NoisyOracleProvider::sample(const std::string& utterance_id,
                                     const std::vector<std::string>& class_names,
                                     double temperature, int sample_index) {
  auto it = true_labels_.find(utterance_id);
  if (it == true_labels_.end())
    throw ProviderError("NoisyOracle: unknown utterance " + utterance_id);
  const std::size_t c = class_names.size();
  const int truth = it->second;
  if (truth < 0 || truth >= static_cast<int>(c))
    throw ProviderError("NoisyOracle: label out of range for " + utterance_id);

  // The mode is a property of the utterance, not of the individual draw:
  // like a real black-box teacher, the oracle is systematically wrong on a
  // fixed subset of inputs rather than wrong on random samples, so repeated
  // sampling cannot average its mistakes away.
  int mode = truth;
  if (auto assigned = modes_.find(utterance_id); assigned != modes_.end()) {
    mode = assigned->second;
  } else {
    std::seed_seq mode_seq{config_.seed,
                           std::hash<std::string>{}(utterance_id)};
    Rng mode_rng(0);
    mode_rng.seed(mode_seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(mode_rng) >= config_.accuracy) {
      // Uniform over the other classes.
      auto pick = static_cast<std::size_t>(unit(mode_rng) *
                                           static_cast<double>(c - 1));
      if (pick >= c - 1) pick = c - 2;
      mode = static_cast<int>(
          pick >= static_cast<std::size_t>(truth) ? pick + 1 : pick);
    }
  }

  // Per-key seeding keeps the stochastic part of each draw stable across
  // runs and call orders.
  std::seed_seq seq{config_.seed, std::hash<std::string>{}(utterance_id),
                    static_cast<std::size_t>(sample_index)};
  Rng rng(0);
  rng.seed(seq);

  // Base draw is Dirichlet(1,...,1); zero temperature collapses it to
  // uniform so repeated samples coincide.
  std::vector<double> base(c, 1.0 / static_cast<double>(c));
  if (temperature > 0.0) {
    std::exponential_distribution<double> expo(1.0);
    double sum = 0.0;
    for (double& v : base) {
      v = expo(rng);
      sum += v;
    }
    for (double& v : base) v /= sum;
  }
  double kappa = config_.concentration;
  if (auto it_k = kappa_.find(utterance_id); it_k != kappa_.end())
    kappa = it_k->second;
  // When wrong, the teacher keeps substantial runner-up mass on the true
  // class — mistaken predictions still hedge toward the right answer.
  const double kappa_truth = mode == truth ? 0.0 : 0.7 * kappa;
  std::vector<double> probs(c);
  for (std::size_t i = 0; i < c; ++i) {
    double mass = base[i];
    if (static_cast<int>(i) == mode) mass += kappa;
    if (static_cast<int>(i) == truth) mass += kappa_truth;
    probs[i] = mass / (1.0 + kappa + kappa_truth);
  }
  return ProbDist::unchecked(std::move(probs));
}

// ---------------------------------------------------------------- parsing

ProbDist parse_lalm_response(const std::string& payload,
                             const std::vector<std::string>& class_names,
                             std::size_t* parse_failures) {
  const std::size_t c = class_names.size();
  auto fallback = [&] {
    if (parse_failures) ++*parse_failures;
    std::cerr << "[mifuse] warning: unparseable teacher payload, "
                 "falling back to uniform\n";
    return ProbDist::unchecked(
        std::vector<double>(c, 1.0 / static_cast<double>(c)));
  };

  json j = json::parse(payload, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("probs") ||
      !j.at("probs").is_object())
    return fallback();

  const json& probs = j.at("probs");
  std::vector<double> values(c, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    auto it = probs.find(class_names[i]);
    if (it == probs.end() || !it->is_number()) continue;
    const double v = std::max(it->get<double>(), 0.0);
    if (!std::isfinite(v)) return fallback();
    values[i] = v;
    sum += v;
  }
  if (sum <= 0.0) return fallback();
  for (double& v : values) v /= sum;
  return ProbDist::unchecked(std::move(values));
}

// ---------------------------------------------------------------- http

struct HttpProvider::Impl {
  httplib::Client client;
  explicit Impl(const Options& o) : client(o.host, o.port) {
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
  }
};

HttpProvider::HttpProvider(Options options)
    : options_(std::move(options)), impl_(std::make_unique<Impl>(options_)) {
  if (!options_.auth_token.empty())
    impl_->client.set_bearer_token_auth(options_.auth_token);
}

HttpProvider::~HttpProvider() = default;

ProbDist HttpProvider::sample(const std::string& utterance_id,
                              const std::vector<std::string>& class_names,
                              double temperature, int sample_index) {
  json body = {{"utterance_id", utterance_id},
               {"classes", class_names},
               {"temperature", temperature},
               {"sample_index", sample_index}};
  const std::string payload = body.dump();

  int backoff_ms = options_.backoff_initial_ms;
  for (int attempt = 0;; ++attempt) {
    auto res = impl_->client.Post("/v1/predict", payload, "application/json");
    if (res && res->status == 200)
      return parse_lalm_response(res->body, class_names, &parse_failures_);
    if (attempt >= options_.max_retries)
      throw ProviderError("HttpProvider: request failed for " + utterance_id +
                          " after " + std::to_string(attempt + 1) +
                          " attempts" +
                          (res ? " (status " + std::to_string(res->status) + ")"
                               : " (transport error)"));
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
    backoff_ms *= 2;
  }
}

// ---------------------------------------------------------------- predicts

TeacherSampleSet mc_dropout_predict(const MlpClassifier& teacher,
                                    std::span<const double> x,
                                    std::size_t n_passes, Rng& rng) {
  if (n_passes < 1)
    throw std::invalid_argument("mc_dropout_predict: n_passes must be >= 1");
  if (teacher.dropout_rate == 0.0 && n_passes > 1)
    std::cerr << "[mifuse] warning: MC dropout with dropout_rate 0; "
                 "mutual information will be 0\n";
  std::vector<ProbDist> samples;
  samples.reserve(n_passes);
  for (std::size_t k = 0; k < n_passes; ++k) {
    auto [logits, cache] = forward(teacher, x, ForwardMode::kTrain, &rng);
    samples.push_back(softmax(logits));
  }
  return TeacherSampleSet::from_samples(std::move(samples));
}

TeacherSampleSet lalm_predict(LalmProvider& provider, TeacherCache& cache,
                              const std::string& utterance_id,
                              const std::vector<std::string>& class_names,
                              std::size_t n_samples, double temperature) {
  if (n_samples < 1)
    throw std::invalid_argument("lalm_predict: n_samples must be >= 1");
  if (temperature < 0.0)
    throw std::invalid_argument("lalm_predict: temperature must be >= 0");
  if (temperature == 0.0) n_samples = 1;

  std::vector<ProbDist> samples;
  samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    // The deterministic zero-temperature draw lives at its own cache slot so
    // it never collides with the stochastic samples.
    const int idx = temperature == 0.0 ? -1 : static_cast<int>(i);
    if (const ProbDist* hit = cache.find(utterance_id, idx)) {
      samples.push_back(*hit);
      continue;
    }
    ProbDist drawn =
        provider.sample(utterance_id, class_names, temperature, idx);
    if (drawn.size() != class_names.size())
      throw ProviderError("lalm_predict: provider returned wrong class count");
    cache.put(utterance_id, idx, drawn);
    samples.push_back(std::move(drawn));
  }
  return TeacherSampleSet::from_samples(std::move(samples));
}

void ema_update(EmaState& ema, const MlpClassifier& student) {
  MlpClassifier& t = ema.teacher;
  if (t.param_count() != student.param_count() ||
      t.input_dim != student.input_dim || t.hidden_dim != student.hidden_dim ||
      t.n_classes != student.n_classes || t.n_layers != student.n_layers)
    throw std::invalid_argument("ema_update: shape mismatch");
  const double a = ema.alpha;
  auto blend = [a](std::vector<double>& tp, const std::vector<double>& sp) {
    for (std::size_t i = 0; i < tp.size(); ++i)
      tp[i] = a * tp[i] + (1.0 - a) * sp[i];
  };
  blend(t.layer_weights, student.layer_weights);
  blend(t.w1, student.w1);
  blend(t.b1, student.b1);
  blend(t.w2, student.w2);
  blend(t.b2, student.b2);
}

}  // namespace mifuse
