// Operator CLI for the adaptation pipeline: synthetic benchmark generation,
// source training, teacher-cache population, adaptation, evaluation, and the
// fusion-strategy ablation grid.
//
// Exit codes: 0 success, 2 config/validation error, 3 missing inputs or
// pre-existing outputs without --overwrite, 4 provider/transport failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mifuse/adapt.hpp"
#include "mifuse/dataio.hpp"
#include "mifuse/evalkit.hpp"
#include "mifuse/fusion.hpp"
#include "mifuse/teachers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mifuse;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitProvider = 4;

struct CliError : std::runtime_error {
  int code;
  CliError(int code, const std::string& msg)
      : std::runtime_error(msg), code(code) {}
};

// ------------------------------------------------------------- run config

json default_config() {
  return {
      {"adapt",
       {{"batch_size", 32},
        {"dropout", 0.4},
        {"weight_decay", 0.1},
        {"teacher_lr", 5e-4},
        {"student_lr", 5e-4},
        {"student_lr_grid", {7.5e-4, 5e-4, 1e-4, 5e-5, 1e-6}},
        {"plateau_patience_steps", 1000},
        {"alpha_ema", 0.999},
        {"lambda_div", 1.0},
        {"n_lm", 5},
        {"n_cls", 8},
        {"lalm_temperature", 0.6},
        {"seed", 0},
        {"hidden_dim", 256},
        {"max_steps", 20000},
        {"eval_every", 100},
        {"checkpoint_every", 500},
        {"teacher_mode", "both"}}},
      {"fusion",
       {{"generation", "multi"},
        {"gate", "direct"},
        {"kl_tau", 0.6},
        {"weighting", "mi"},
        {"allow_free_tau", false}}},
      {"data",
       {{"source", ""},
        {"target_unlabeled", ""},
        {"target_labeled", ""},
        {"dev", ""}}},
      {"provider",
       {{"kind", "noisy-oracle"},
        {"oracle",
         {{"accuracy", 0.7},
          {"concentration", 5.0},
          {"seed", 0},
          {"labels_path", ""}}},
        {"max_retries", 3},
        {"backoff_initial_ms", 1000}}},
      {"cache", ""},
      {"source_model", ""}};
}

void deep_merge(json& base, const json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) &&
        base[it.key()].is_object())
      deep_merge(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

// Flat dotted-path overrides: adapt.lambda_div=0, fusion.gate=kl, ...
void apply_set(json& config, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw CliError(kExitConfig, "--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);
  json* node = &config;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot - pos);
    if (part.empty())
      throw CliError(kExitConfig, "--set: empty key segment in '" + key + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

json load_run_config(const std::string& config_path,
                     const std::vector<std::string>& sets,
                     std::optional<std::uint64_t> seed_flag) {
  json config = default_config();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw CliError(kExitMissing, "config file not found: " + config_path);
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded())
      throw CliError(kExitConfig, "config file is not valid JSON: " + config_path);
    deep_merge(config, user);
  }
  for (const auto& kv : sets) apply_set(config, kv);
  if (seed_flag) {
    config["adapt"]["seed"] = *seed_flag;
    config["provider"]["oracle"]["seed"] = *seed_flag;
  }
  return config;
}

AdaptConfig parse_adapt(const json& j) {
  AdaptConfig c;
  try {
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.teacher_lr = j.at("teacher_lr").get<double>();
    c.student_lr = j.at("student_lr").get<double>();
    c.student_lr_grid = j.at("student_lr_grid").get<std::vector<double>>();
    c.plateau_patience_steps = j.at("plateau_patience_steps").get<std::size_t>();
    c.alpha_ema = j.at("alpha_ema").get<double>();
    c.lambda_div = j.at("lambda_div").get<double>();
    c.n_lm = j.at("n_lm").get<std::size_t>();
    c.n_cls = j.at("n_cls").get<std::size_t>();
    c.lalm_temperature = j.at("lalm_temperature").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.max_steps = j.at("max_steps").get<std::size_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    const std::string mode = j.at("teacher_mode").get<std::string>();
    if (mode == "both")
      c.teacher_mode = TeacherMode::kBoth;
    else if (mode == "cls-only")
      c.teacher_mode = TeacherMode::kClsOnly;
    else if (mode == "lm-only")
      c.teacher_mode = TeacherMode::kLmOnly;
    else
      throw CliError(kExitConfig, "unknown teacher_mode: " + mode);
    c.validate();
  } catch (const json::exception& e) {
    throw CliError(kExitConfig, std::string("bad adapt config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitConfig, std::string("bad adapt config: ") + e.what());
  }
  return c;
}

FusionConfig parse_fusion(const json& j) {
  FusionConfig f;
  try {
    const std::string gen = j.at("generation").get<std::string>();
    const std::string gate = j.at("gate").get<std::string>();
    const std::string weighting = j.at("weighting").get<std::string>();
    if (gen == "multi")
      f.generation = Generation::kMulti;
    else if (gen == "single")
      f.generation = Generation::kSingle;
    else
      throw CliError(kExitConfig, "unknown generation: " + gen);
    if (gate == "direct")
      f.gate = Gate::kDirect;
    else if (gate == "kl")
      f.gate = Gate::kKl;
    else if (gate == "nofusion")
      f.gate = Gate::kNoFusion;
    else
      throw CliError(kExitConfig, "unknown gate: " + gate);
    if (weighting == "mi")
      f.weighting = Weighting::kMi;
    else if (weighting == "entropy")
      f.weighting = Weighting::kEntropy;
    else if (weighting == "equal")
      f.weighting = Weighting::kEqual;
    else
      throw CliError(kExitConfig, "unknown weighting: " + weighting);
    f.kl_tau = j.at("kl_tau").get<double>();
    f.validate(j.value("allow_free_tau", false));
  } catch (const json::exception& e) {
    throw CliError(kExitConfig, std::string("bad fusion config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitConfig, std::string("bad fusion config: ") + e.what());
  }
  return f;
}

FeatureDataset load_required(const std::string& path, const std::string& what) {
  if (path.empty())
    throw CliError(kExitConfig, "config is missing the " + what + " path");
  if (!fs::exists(path))
    throw CliError(kExitMissing, what + " not found: " + path);
  try {
    return load_dataset(path);
  } catch (const std::exception& e) {
    throw CliError(kExitConfig, e.what());
  }
}

// Throws on every sample request; adaptation from a cold entry fails fast.
class CacheOnlyProvider : public LalmProvider {
 public:
  ProbDist sample(const std::string& utterance_id,
                  const std::vector<std::string>&, double,
                  int sample_index) override {
    throw ProviderError("cache miss for (" + utterance_id + ", " +
                        std::to_string(sample_index) + ")");
  }
};

std::unique_ptr<LalmProvider> make_provider(const json& config) {
  const json& p = config.at("provider");
  const std::string kind = p.at("kind").get<std::string>();
  if (kind == "cache-only") return std::make_unique<CacheOnlyProvider>();
  if (kind == "noisy-oracle") {
    const json& o = p.at("oracle");
    NoisyOracleConfig oc;
    oc.accuracy = o.at("accuracy").get<double>();
    oc.concentration = o.at("concentration").get<double>();
    oc.seed = o.at("seed").get<std::uint64_t>();
    std::string labels_path = o.at("labels_path").get<std::string>();
    if (labels_path.empty())
      labels_path = config.at("data").at("target_labeled").get<std::string>();
    if (labels_path.empty())
      throw CliError(kExitConfig,
                     "noisy-oracle provider needs oracle.labels_path or "
                     "data.target_labeled");
    auto labeled = load_required(labels_path, "oracle label dataset");
    try {
      return std::make_unique<NoisyOracleProvider>(oc, labeled);
    } catch (const std::invalid_argument& e) {
      throw CliError(kExitConfig, e.what());
    }
  }
  if (kind == "remote") {
    // Endpoint and token come from the environment, never from RunConfig.
    const char* url = std::getenv("MIFUSE_PROVIDER_URL");
    if (!url)
      throw CliError(kExitConfig,
                     "remote provider requires MIFUSE_PROVIDER_URL "
                     "(host:port)");
    const char* token = std::getenv("MIFUSE_PROVIDER_TOKEN");
    std::string hostport(url);
    HttpProvider::Options opts;
    const auto colon = hostport.rfind(':');
    if (colon == std::string::npos)
      throw CliError(kExitConfig, "MIFUSE_PROVIDER_URL must be host:port");
    opts.host = hostport.substr(0, colon);
    opts.port = std::stoi(hostport.substr(colon + 1));
    opts.auth_token = token ? token : "";
    opts.max_retries = p.value("max_retries", 3);
    opts.backoff_initial_ms = p.value("backoff_initial_ms", 1000);
    return std::make_unique<HttpProvider>(opts);
  }
  throw CliError(kExitConfig, "unknown provider kind: " + kind);
}

fs::path prepare_out_dir(const std::string& out, bool overwrite) {
  if (out.empty()) throw CliError(kExitConfig, "--out is required");
  fs::path dir(out);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite)
      throw CliError(kExitMissing,
                     "output directory exists: " + out +
                         " (pass --overwrite to reuse it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

void freeze_config(const json& config, const fs::path& dir) {
  std::ofstream o(dir / "config.json", std::ios::trunc);
  o << config.dump(2) << '\n';
}

std::string config_hash(const json& config) {
  // FNV-1a over the canonical dump; enough to tie reports to a config.
  const std::string s = config.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --------------------------------------------------------------- commands

int cmd_synth_gen(const SynthShiftSpec& spec, const std::string& out,
                  bool overwrite) {
  fs::path dir = prepare_out_dir(out, overwrite);
  SynthShiftResult result = generate_synth_shift(spec);
  save_dataset(result.source, dir / "source.jsonl");
  save_dataset(result.target_labeled, dir / "target_labeled.jsonl");
  save_dataset(result.target_labeled.unlabeled_view(),
               dir / "target_unlabeled.jsonl");
  std::cout << "wrote source/target_labeled/target_unlabeled to " << dir
            << "\n";
  return 0;
}

int cmd_train_source(const json& config, const std::string& out,
                     bool overwrite) {
  AdaptConfig adapt_config = parse_adapt(config.at("adapt"));
  auto source = load_required(config.at("data").at("source").get<std::string>(),
                              "source dataset");
  fs::path dir = prepare_out_dir(out, overwrite);
  freeze_config(config, dir);

  auto parts = split(source, {0.9, 0.1, 0.0}, adapt_config.seed);
  Rng rng(adapt_config.seed);
  MlpClassifier model;
  try {
    model = train_source(parts.train, adapt_config, rng);
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitConfig, e.what());
  }
  save_model(model, dir / "model.json");
  EvalReport report = evaluate(model, parts.dev);
  write_report_json(report, dir / "report.json", adapt_config.seed,
                    config_hash(config));
  std::cout << "train-source done: dev UA " << report.unweighted_accuracy
            << ", model at " << (dir / "model.json") << "\n";
  return 0;
}

int cmd_cache_lalm(const json& config, const std::string& out, bool overwrite) {
  AdaptConfig adapt_config = parse_adapt(config.at("adapt"));
  auto target = load_required(
      config.at("data").at("target_unlabeled").get<std::string>(),
      "target dataset");
  std::string cache_path = config.at("cache").get<std::string>();
  fs::path dir;
  if (!out.empty()) {
    dir = prepare_out_dir(out, overwrite);
    freeze_config(config, dir);
    if (cache_path.empty()) cache_path = (dir / "lalm_cache.jsonl").string();
  }
  if (cache_path.empty())
    throw CliError(kExitConfig, "cache-lalm needs cache path or --out");

  auto provider = make_provider(config);
  TeacherCache cache{fs::path(cache_path)};
  std::size_t queried = 0;
  for (const auto& r : target.records) {
    // Stochastic samples plus the deterministic zero-temperature slot, so
    // Single-generation ablation cells replay from the same cache.
    lalm_predict(*provider, cache, r.id, target.manifest.class_names,
                 adapt_config.n_lm, adapt_config.lalm_temperature);
    lalm_predict(*provider, cache, r.id, target.manifest.class_names, 1, 0.0);
    ++queried;
  }
  std::cout << "cached teacher samples for " << queried << " utterances ("
            << cache.size() << " records) at " << cache_path << "\n";
  return 0;
}

struct AdaptInputs {
  AdaptConfig adapt_config;
  FusionConfig fusion;
  FeatureDataset target;
  std::optional<FeatureDataset> dev;
  std::optional<FeatureDataset> test;
  MlpClassifier source_model;
  std::unique_ptr<LalmProvider> provider;
  std::string cache_path;
};

AdaptInputs gather_adapt_inputs(const json& config) {
  AdaptInputs in;
  in.adapt_config = parse_adapt(config.at("adapt"));
  in.fusion = parse_fusion(config.at("fusion"));
  in.target = load_required(
      config.at("data").at("target_unlabeled").get<std::string>(),
      "target dataset");
  const std::string dev_path = config.at("data").at("dev").get<std::string>();
  if (!dev_path.empty()) in.dev = load_required(dev_path, "dev dataset");
  const std::string test_path =
      config.at("data").at("target_labeled").get<std::string>();
  if (!test_path.empty()) in.test = load_required(test_path, "test dataset");
  const std::string model_path = config.at("source_model").get<std::string>();
  if (model_path.empty())
    throw CliError(kExitConfig, "config is missing source_model");
  if (!fs::exists(model_path))
    throw CliError(kExitMissing, "source model not found: " + model_path);
  in.source_model = load_model(model_path);
  in.provider = make_provider(config);
  in.cache_path = config.at("cache").get<std::string>();
  return in;
}

int cmd_adapt(const json& config, const std::string& out, bool overwrite,
              bool resume) {
  AdaptInputs in = gather_adapt_inputs(config);
  fs::path dir(out);
  if (resume) {
    if (out.empty() || !fs::exists(dir))
      throw CliError(kExitMissing, "--resume needs an existing --out directory");
  } else {
    dir = prepare_out_dir(out, overwrite);
    freeze_config(config, dir);
  }

  TeacherCache cache = in.cache_path.empty()
                           ? TeacherCache{dir / "lalm_cache.jsonl"}
                           : TeacherCache{fs::path(in.cache_path)};
  AdaptResult result = adapt_student(
      in.target, in.source_model, *in.provider, cache, in.fusion,
      in.adapt_config, in.dev ? &*in.dev : nullptr, dir, resume);
  save_model(result.student, dir / "student.json");
  if (in.dev) write_curve_csv(result.state.metric_log, dir / "curve.csv");
  if (in.test) {
    EvalReport report = evaluate(result.student, *in.test);
    write_report_json(report, dir / "report.json", in.adapt_config.seed,
                      config_hash(config));
    std::cout << "adapt done at step " << result.state.step << ": target UA "
              << report.unweighted_accuracy << "\n";
  } else {
    std::cout << "adapt done at step " << result.state.step << "\n";
  }
  return 0;
}

int cmd_evaluate(const json& config, const std::string& model_path,
                 const std::string& data_path, const std::string& out,
                 bool overwrite) {
  if (!fs::exists(model_path))
    throw CliError(kExitMissing, "model not found: " + model_path);
  MlpClassifier model = load_model(model_path);
  FeatureDataset data = load_required(data_path, "evaluation dataset");
  EvalReport report;
  try {
    report = evaluate(model, data);
  } catch (const std::invalid_argument& e) {
    throw CliError(kExitConfig, e.what());
  }
  std::cout << "UA " << report.unweighted_accuracy << " plain "
            << report.plain_accuracy << " over " << report.n << " samples\n";
  if (!out.empty()) {
    fs::path dir = prepare_out_dir(out, overwrite);
    freeze_config(config, dir);
    write_report_json(report, dir / "report.json",
                      config.at("adapt").at("seed").get<std::uint64_t>(),
                      config_hash(config));
  }
  return 0;
}

struct AblationCell {
  Generation generation;
  Gate gate;
  Weighting weighting;  // ignored for NoFusion
};

const std::vector<AblationCell>& ablation_grid() {
  static const std::vector<AblationCell> cells = {
      {Generation::kMulti, Gate::kDirect, Weighting::kMi},
      {Generation::kMulti, Gate::kDirect, Weighting::kEntropy},
      {Generation::kMulti, Gate::kDirect, Weighting::kEqual},
      {Generation::kMulti, Gate::kKl, Weighting::kMi},
      {Generation::kMulti, Gate::kKl, Weighting::kEntropy},
      {Generation::kMulti, Gate::kKl, Weighting::kEqual},
      {Generation::kMulti, Gate::kNoFusion, Weighting::kEqual},
      {Generation::kSingle, Gate::kDirect, Weighting::kEntropy},
      {Generation::kSingle, Gate::kDirect, Weighting::kEqual},
      {Generation::kSingle, Gate::kKl, Weighting::kEntropy},
      {Generation::kSingle, Gate::kKl, Weighting::kEqual},
      {Generation::kSingle, Gate::kNoFusion, Weighting::kEqual},
  };
  return cells;
}

int cmd_ablate(const json& config, const std::string& out, bool overwrite) {
  AdaptInputs in = gather_adapt_inputs(config);
  if (!in.dev)
    throw CliError(kExitConfig, "ablate needs data.dev for tau selection");
  if (!in.test)
    throw CliError(kExitConfig, "ablate needs data.target_labeled for scoring");
  if (in.cache_path.empty())
    throw CliError(kExitConfig, "ablate needs a pre-populated cache");
  fs::path dir = prepare_out_dir(out, overwrite);
  freeze_config(config, dir);

  TeacherCache cache{fs::path(in.cache_path)};
  const std::vector<double> tau_grid = {0.4, 0.6, 0.8};

  struct Row {
    std::string generation, gate, weighting;
    double tau = 0.0;
    double dev_ua = 0.0, test_ua = 0.0;
  };
  std::vector<Row> rows;

  for (const AblationCell& cell : ablation_grid()) {
    FusionConfig f;
    f.generation = cell.generation;
    f.gate = cell.gate;
    f.weighting = cell.weighting;

    auto run_once = [&](const FusionConfig& fc) {
      AdaptResult r = adapt_student(in.target, in.source_model, *in.provider,
                                    cache, fc, in.adapt_config, &*in.dev);
      const double dev_ua = evaluate(r.student, *in.dev).unweighted_accuracy;
      const double test_ua = evaluate(r.student, *in.test).unweighted_accuracy;
      return std::make_tuple(dev_ua, test_ua);
    };

    Row row;
    row.generation = cell.generation == Generation::kMulti ? "multi" : "single";
    row.gate = cell.gate == Gate::kDirect    ? "direct"
               : cell.gate == Gate::kKl      ? "kl"
                                             : "nofusion";
    row.weighting = cell.gate == Gate::kNoFusion ? "-"
                    : cell.weighting == Weighting::kMi        ? "mi"
                    : cell.weighting == Weighting::kEntropy   ? "entropy"
                                                              : "equal";
    if (cell.gate == Gate::kKl) {
      double best_dev = -1.0;
      for (double tau : tau_grid) {
        FusionConfig fc = f;
        fc.kl_tau = tau;
        auto [dev_ua, test_ua] = run_once(fc);
        if (dev_ua > best_dev) {
          best_dev = dev_ua;
          row.tau = tau;
          row.dev_ua = dev_ua;
          row.test_ua = test_ua;
        }
      }
    } else {
      auto [dev_ua, test_ua] = run_once(f);
      row.dev_ua = dev_ua;
      row.test_ua = test_ua;
    }
    rows.push_back(row);
    std::cout << "cell " << row.generation << "/" << row.gate << "/"
              << row.weighting << " dev UA " << row.dev_ua << " test UA "
              << row.test_ua << "\n";
  }

  std::size_t best_idx = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].test_ua > rows[best_idx].test_ua) best_idx = i;

  std::ofstream csv(dir / "ablation.csv", std::ios::trunc);
  csv << "generation,gate,weighting,tau,dev_ua,test_ua,best\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Row& r = rows[i];
    csv << r.generation << ',' << r.gate << ',' << r.weighting << ',';
    if (r.gate == "kl")
      csv << r.tau;
    csv << ',' << r.dev_ua << ',' << r.test_ua << ','
        << (i == best_idx ? 1 : 0) << '\n';
  }
  std::cout << "ablation summary at " << (dir / "ablation.csv") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MI-weighted label fusion adaptation pipeline"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::vector<std::string> sets;
  bool overwrite = false, resume = false;
  std::optional<std::uint64_t> seed_flag;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run config JSON");
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--set", sets, "Override config entries (key=value)");
    cmd->add_option("--seed", seed_flag, "Override the run seed");
    cmd->add_flag("--overwrite", overwrite, "Replace existing outputs");
    cmd->add_flag("--resume", resume, "Resume from a checkpoint");
  };

  SynthShiftSpec spec;
  auto* synth = app.add_subcommand("synth-gen", "Generate the synthetic shift benchmark");
  add_common(synth);
  synth->add_option("--classes", spec.n_classes);
  synth->add_option("--dim", spec.feature_dim);
  synth->add_option("--per-class", spec.samples_per_class);
  synth->add_option("--separation", spec.separation);
  synth->add_option("--offset", spec.offset_magnitude);
  synth->add_option("--rotation-deg", spec.rotation_degrees);
  synth->add_option("--noise-scale", spec.noise_scale);

  auto* train = app.add_subcommand("train-source", "Train the source classifier");
  add_common(train);
  auto* cache_cmd = app.add_subcommand("cache-lalm", "Populate the teacher cache");
  add_common(cache_cmd);
  auto* adapt_cmd = app.add_subcommand("adapt", "Run student adaptation");
  add_common(adapt_cmd);

  std::string model_path, data_path;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a model checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--model", model_path, "Model JSON")->required();
  eval_cmd->add_option("--data", data_path, "Labeled dataset")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "Run the fusion ablation grid");
  add_common(ablate_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (seed_flag) spec.seed = *seed_flag;
      try {
        return cmd_synth_gen(spec, out, overwrite);
      } catch (const std::invalid_argument& e) {
        throw CliError(kExitConfig, e.what());
      }
    }
    json config = load_run_config(config_path, sets, seed_flag);
    if (train->parsed()) return cmd_train_source(config, out, overwrite);
    if (cache_cmd->parsed()) return cmd_cache_lalm(config, out, overwrite);
    if (adapt_cmd->parsed()) return cmd_adapt(config, out, overwrite, resume);
    if (eval_cmd->parsed())
      return cmd_evaluate(config, model_path, data_path, out, overwrite);
    if (ablate_cmd->parsed()) return cmd_ablate(config, out, overwrite);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const ProviderError& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return kExitProvider;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
