#include "mifuse/evalkit.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mifuse {

EvalReport evaluate(const MlpClassifier& model, const FeatureDataset& data) {
  if (data.records.empty())
    throw std::invalid_argument("evaluate: empty dataset");
  if (!data.fully_labeled())
    throw std::invalid_argument("evaluate: dataset must be fully labeled");
  const std::size_t c = model.n_classes;
  if (data.manifest.n_classes() != c)
    throw std::invalid_argument("evaluate: class count mismatch");

  EvalReport report;
  report.confusion.assign(c, std::vector<long>(c, 0));
  report.n = data.records.size();
  for (const auto& r : data.records) {
    auto [logits, cache] = forward(model, r.features, ForwardMode::kEval);
    std::size_t pred = 0;
    for (std::size_t i = 1; i < c; ++i)
      if (logits[i] > logits[pred]) pred = i;
    report.confusion[static_cast<std::size_t>(*r.label)][pred] += 1;
  }

  long correct = 0;
  double recall_sum = 0.0;
  std::size_t supported = 0;
  for (std::size_t i = 0; i < c; ++i) {
    long support = 0;
    for (long v : report.confusion[i]) support += v;
    correct += report.confusion[i][i];
    if (support == 0) {
      ++report.excluded_classes;
      continue;
    }
    recall_sum += static_cast<double>(report.confusion[i][i]) /
                  static_cast<double>(support);
    ++supported;
  }
  report.plain_accuracy =
      static_cast<double>(correct) / static_cast<double>(report.n);
  report.unweighted_accuracy =
      supported == 0 ? 0.0 : recall_sum / static_cast<double>(supported);
  return report;
}

std::vector<std::pair<std::uint64_t, double>> curve_points(
    const std::vector<MetricPoint>& log) {
  if (log.empty()) throw std::invalid_argument("curve_points: empty log");
  std::vector<std::pair<std::uint64_t, double>> out;
  std::uint64_t prev = 0;
  bool first = true;
  for (const auto& p : log) {
    if (!first && p.step <= prev)
      throw std::invalid_argument("curve_points: steps out of order");
    prev = p.step;
    first = false;
    if (p.dev_ua >= 0.0) out.emplace_back(p.step, p.dev_ua);
  }
  return out;
}

void write_curve_csv(const std::vector<MetricPoint>& log,
                     const std::filesystem::path& path) {
  auto points = curve_points(log);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_curve_csv: cannot open " + path.string());
  out << "step,dev_ua\n";
  for (const auto& [step, ua] : points) out << step << ',' << ua << '\n';
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path,
                       std::uint64_t seed, const std::string& config_hash) {
  nlohmann::json j = {{"unweighted_accuracy", report.unweighted_accuracy},
                      {"plain_accuracy", report.plain_accuracy},
                      {"confusion", report.confusion},
                      {"n", report.n},
                      {"excluded_classes", report.excluded_classes},
                      {"seed", seed},
                      {"config_hash", config_hash}};
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw std::runtime_error("write_report_json: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace mifuse
