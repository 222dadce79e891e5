#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>

#include "mifuse/teachers.hpp"
#include "mifuse/uncertainty.hpp"

using namespace mifuse;
namespace fs = std::filesystem;

namespace {

// Counts calls and delegates to a noisy oracle.
class CountingProvider : public LalmProvider {
 public:
  explicit CountingProvider(LalmProvider& inner) : inner_(inner) {}
  ProbDist sample(const std::string& id, const std::vector<std::string>& names,
                  double temperature, int index) override {
    ++calls;
    return inner_.sample(id, names, temperature, index);
  }
  std::size_t calls = 0;

 private:
  LalmProvider& inner_;
};

const std::vector<std::string> kClasses = {"happy", "sad", "angry", "neutral"};

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mifuse-test-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("mc_dropout with rate 0 yields identical samples and zero MI") {
  Rng init_rng(1);
  auto teacher = MlpClassifier::init(6, 8, 4, 1, 0.0, init_rng);
  std::vector<double> x(6, 0.5);
  Rng rng(2);
  auto set = mc_dropout_predict(teacher, x, 4, rng);
  CHECK(set.samples.size() == 4);
  for (const auto& s : set.samples) CHECK(s.probs() == set.samples[0].probs());
  CHECK(set.mutual_info == doctest::Approx(0.0));
}

TEST_CASE("mc_dropout is deterministic under seeding") {
  Rng init_rng(3);
  auto teacher = MlpClassifier::init(8, 16, 4, 1, 0.4, init_rng);
  std::vector<double> x(8);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (double& v : x) v = dist(init_rng);

  Rng rng_a(77), rng_b(77);
  auto a = mc_dropout_predict(teacher, x, 8, rng_a);
  auto b = mc_dropout_predict(teacher, x, 8, rng_b);
  CHECK(a.mean.probs() == b.mean.probs());
  CHECK(a.mutual_info == b.mutual_info);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(a.samples[i].probs() == b.samples[i].probs());
}

TEST_CASE("mc_dropout mean equals the mean of its samples") {
  Rng init_rng(3);
  auto teacher = MlpClassifier::init(8, 16, 4, 1, 0.4, init_rng);
  std::vector<double> x(8, 0.25);
  Rng rng(5);
  auto set = mc_dropout_predict(teacher, x, 8, rng);
  auto mean = mean_dist(set.samples);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(set.mean[i] == doctest::Approx(mean[i]).epsilon(1e-12));
  CHECK(set.mutual_info ==
        doctest::Approx(mutual_information(set.samples)).epsilon(1e-12));
}

TEST_CASE("mc_dropout mean drift shrinks with more passes") {
  Rng init_rng(9);
  auto teacher = MlpClassifier::init(6, 12, 4, 1, 0.4, init_rng);
  std::vector<double> x(6, -0.3);

  // Average L1 drift between consecutive doublings, over 20 seeds.
  std::vector<std::size_t> sizes = {8, 16, 32, 64, 128, 256};
  std::vector<double> mean_drift(sizes.size() - 1, 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<ProbDist> means;
    for (std::size_t n : sizes) {
      Rng local(seed * 1000 + n);
      means.push_back(mc_dropout_predict(teacher, x, n, local).mean);
    }
    for (std::size_t i = 0; i + 1 < means.size(); ++i) {
      double drift = 0.0;
      for (std::size_t k = 0; k < 4; ++k)
        drift += std::abs(means[i + 1][k] - means[i][k]);
      mean_drift[i] += drift;
    }
  }
  for (std::size_t i = 0; i + 1 < mean_drift.size(); ++i)
    CHECK(mean_drift[i + 1] <= mean_drift[i] + 1e-12);
}

TEST_CASE("teacher cache persists and replays bit-identically") {
  TempDir tmp;
  const fs::path file = tmp.path / "cache.jsonl";
  NoisyOracleProvider oracle({0.7, 5.0, 11}, {{"u1", 2}, {"u2", 0}});
  CountingProvider counting(oracle);

  TeacherCache cache(file);
  auto first = lalm_predict(counting, cache, "u1", kClasses, 5, 0.6);
  CHECK(counting.calls == 5);
  auto again = lalm_predict(counting, cache, "u1", kClasses, 5, 0.6);
  CHECK(counting.calls == 5);  // all served from cache
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(first.samples[i].probs() == again.samples[i].probs());

  // Fresh cache object reloads from disk; still zero provider calls.
  TeacherCache reloaded(file);
  auto replayed = lalm_predict(counting, reloaded, "u1", kClasses, 5, 0.6);
  CHECK(counting.calls == 5);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(first.samples[i].probs() == replayed.samples[i].probs());
}

TEST_CASE("lalm_predict at zero temperature uses one deterministic sample") {
  NoisyOracleProvider oracle({1.0, 5.0, 3}, {{"u1", 1}});
  CountingProvider counting(oracle);
  TeacherCache cache;
  auto set = lalm_predict(counting, cache, "u1", kClasses, 5, 0.0);
  CHECK(set.samples.size() == 1);
  CHECK(counting.calls == 1);
  CHECK(set.mutual_info == doctest::Approx(0.0));
  // The deterministic draw sits in its own slot, distinct from index 0.
  CHECK(cache.find("u1", -1) != nullptr);
  CHECK(cache.find("u1", 0) == nullptr);
}

TEST_CASE("perfect oracle in the sharp limit is one-hot with zero MI") {
  NoisyOracleProvider oracle({1.0, 1e12, 0}, {{"u1", 2}});
  TeacherCache cache;
  auto set = lalm_predict(oracle, cache, "u1", kClasses, 5, 0.6);
  for (const auto& s : set.samples) {
    CHECK(s[2] == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(set.mutual_info == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("noisy oracle MI matches the uncertainty module") {
  NoisyOracleProvider oracle({0.7, 5.0, 11}, {{"u9", 3}});
  TeacherCache cache;
  auto set = lalm_predict(oracle, cache, "u9", kClasses, 5, 0.6);
  CHECK(set.mutual_info ==
        doctest::Approx(mutual_information(set.samples)).epsilon(1e-12));
}

TEST_CASE("noisy oracle argmax accuracy statistical contract") {
  // The mode is fixed per utterance, so the 10k draws must span many
  // utterances for the fraction to concentrate.
  std::map<std::string, int> labels;
  for (int i = 0; i < 2500; ++i) labels["u" + std::to_string(i)] = i % 4;
  NoisyOracleProvider oracle({0.7, 5.0, 123}, labels);
  int correct = 0, total = 0;
  for (int i = 0; i < 2500; ++i) {
    const std::string id = "u" + std::to_string(i);
    for (int k = 0; k < 4; ++k) {
      auto p = oracle.sample(id, kClasses, 0.6, k);
      std::size_t argmax = 0;
      for (std::size_t j = 1; j < 4; ++j)
        if (p[j] > p[argmax]) argmax = j;
      correct += static_cast<int>(argmax) == i % 4 ? 1 : 0;
      ++total;
    }
  }
  const double frac = static_cast<double>(correct) / total;
  CHECK(frac == doctest::Approx(0.7).epsilon(0.02 / 0.7));
}

TEST_CASE("feature-aware oracle errs on ambiguous utterances") {
  // Two well-separated clusters per class on a line; class k's confusion
  // partner is class (k+1)%C, and the samples nearest the partner's mean
  // must be the mislabeled ones.
  FeatureDataset ds;
  ds.manifest.class_names = {"a", "b"};
  ds.manifest.feature_dim = 1;
  ds.manifest.layer_count = 1;
  // Class 0 at x ~ 0, class 1 at x ~ 10; within class 0, x grows with the
  // index so higher indices sit closer to class 1.
  for (int i = 0; i < 10; ++i) {
    Record r;
    r.id = "a" + std::to_string(i);
    r.features = {static_cast<double>(i) * 0.4};
    r.label = 0;
    ds.records.push_back(r);
    Record s;
    s.id = "b" + std::to_string(i);
    s.features = {10.0 - static_cast<double>(i) * 0.4};
    s.label = 1;
    ds.records.push_back(s);
  }

  NoisyOracleProvider oracle({0.7, 5.0, 4}, ds);
  auto mode_of = [&](const std::string& id) {
    auto p = oracle.sample(id, {"a", "b"}, 0.0, -1);
    std::size_t argmax = 0;
    for (std::size_t j = 1; j < p.size(); ++j)
      if (p[j] > p[argmax]) argmax = j;
    return static_cast<int>(argmax);
  };

  // 30% of each class (3 of 10) is wrong, and exactly the samples closest
  // to the other class's mean.
  int wrong_a = 0, wrong_b = 0;
  for (int i = 0; i < 10; ++i) {
    const bool a_wrong = mode_of("a" + std::to_string(i)) != 0;
    const bool b_wrong = mode_of("b" + std::to_string(i)) != 1;
    wrong_a += a_wrong;
    wrong_b += b_wrong;
    CHECK(a_wrong == (i >= 7));  // the three largest x in class 0
    CHECK(b_wrong == (i >= 7));  // the three smallest x in class 1
  }
  CHECK(wrong_a == 3);
  CHECK(wrong_b == 3);

  // Wrong emissions keep runner-up mass on the truth: the true class still
  // holds clearly more than a uniform share.
  auto p = oracle.sample("a9", {"a", "b"}, 0.6, 0);
  CHECK(p[1] > p[0]);   // mode is the partner
  CHECK(p[0] > 0.25);   // hedged toward the truth

  // Correct emissions sharpen with ease: the easiest utterance is more
  // confident than the hardest correct one.
  auto easy = oracle.sample("a0", {"a", "b"}, 0.0, -1);
  auto hard = oracle.sample("a6", {"a", "b"}, 0.0, -1);
  CHECK(easy[0] > hard[0]);
}

TEST_CASE("parse_lalm_response examples") {
  std::size_t failures = 0;
  SUBCASE("uniform payload") {
    auto p = parse_lalm_response(
        R"({"probs": {"happy":0.25,"sad":0.25,"angry":0.25,"neutral":0.25}})",
        kClasses, &failures);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25));
    CHECK(failures == 0);
  }
  SUBCASE("clip and renormalize") {
    auto p = parse_lalm_response(
        R"({"probs": {"happy":2,"sad":1,"angry":1,"neutral":0}})", kClasses,
        &failures);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.25));
    CHECK(p[2] == doctest::Approx(0.25));
    CHECK(p[3] == doctest::Approx(0.0));
    CHECK(failures == 0);
  }
  SUBCASE("missing class becomes zero") {
    auto p = parse_lalm_response(R"({"probs": {"happy":1,"sad":1}})", kClasses,
                                 &failures);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[2] == doctest::Approx(0.0));
    CHECK(failures == 0);
  }
  SUBCASE("negative entries clipped") {
    auto p = parse_lalm_response(
        R"({"probs": {"happy":1,"sad":-5,"angry":1,"neutral":0}})", kClasses,
        &failures);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.0));
    CHECK(failures == 0);
  }
  SUBCASE("free text falls back to uniform with a counted warning") {
    auto p = parse_lalm_response("I think it is happy.", kClasses, &failures);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25));
    CHECK(failures == 1);
  }
  SUBCASE("never throws, always valid") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> ch(0, 255);
    for (int trial = 0; trial < 200; ++trial) {
      std::string garbage;
      for (int i = 0; i < 40; ++i)
        garbage.push_back(static_cast<char>(ch(rng)));
      auto p = parse_lalm_response(garbage, kClasses);
      double sum = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p[i] >= 0.0);
        sum += p[i];
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("ema_update examples") {
  Rng rng(0);
  auto student = MlpClassifier::init(2, 2, 2, 1, 0.0, rng);
  SUBCASE("direct formula") {
    auto teacher = student;
    std::fill(teacher.w1.begin(), teacher.w1.end(), 1.0);
    std::fill(student.w1.begin(), student.w1.end(), 0.0);
    EmaState ema{teacher, 0.999};
    ema_update(ema, student);
    CHECK(ema.teacher.w1[0] == doctest::Approx(0.999).epsilon(1e-12));
  }
  SUBCASE("teacher == student is a fixed point") {
    EmaState ema{student, 0.999};
    ema_update(ema, student);
    CHECK(ema.teacher == student);
  }
  SUBCASE("closed-form geometric decay over 1000 steps") {
    auto teacher = student;
    std::fill(teacher.w1.begin(), teacher.w1.end(), 1.0);
    std::fill(student.w1.begin(), student.w1.end(), 0.0);
    EmaState ema{teacher, 0.999};
    for (int i = 0; i < 1000; ++i) ema_update(ema, student);
    CHECK(ema.teacher.w1[0] ==
          doctest::Approx(std::pow(0.999, 1000)).epsilon(1e-9));
  }
}

TEST_CASE("ema contraction is exactly a factor alpha per step") {
  Rng rng(10);
  auto student = MlpClassifier::init(3, 4, 2, 1, 0.0, rng);
  auto teacher = MlpClassifier::init(3, 4, 2, 1, 0.0, rng);
  EmaState ema{teacher, 0.999};
  auto gap = [&] {
    double g = 0.0;
    auto tf = ema.teacher.flatten();
    auto sf = student.flatten();
    for (std::size_t i = 0; i < tf.size(); ++i)
      g = std::max(g, std::abs(tf[i] - sf[i]));
    return g;
  };
  double prev = gap();
  for (int i = 0; i < 50; ++i) {
    ema_update(ema, student);
    const double cur = gap();
    CHECK(cur == doctest::Approx(prev * 0.999).epsilon(1e-9));
    // Every parameter stays between its old value and the student's.
    prev = cur;
  }
}

TEST_CASE("ema_update rejects shape mismatch") {
  Rng rng(0);
  auto a = MlpClassifier::init(2, 2, 2, 1, 0.0, rng);
  auto b = MlpClassifier::init(3, 2, 2, 1, 0.0, rng);
  EmaState ema{a, 0.999};
  CHECK_THROWS_AS(ema_update(ema, b), std::invalid_argument);
}
