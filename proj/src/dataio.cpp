#include "mifuse/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

namespace mifuse {

using nlohmann::json;

bool FeatureDataset::fully_labeled() const {
  return std::all_of(records.begin(), records.end(),
                     [](const Record& r) { return r.label.has_value(); });
}

FeatureDataset FeatureDataset::unlabeled_view() const {
  FeatureDataset out{manifest, records};
  for (auto& r : out.records) r.label.reset();
  return out;
}

FeatureDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());

  FeatureDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::unordered_set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("load_dataset: parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      if (!j.contains("manifest"))
        throw std::runtime_error("load_dataset: first line must be a manifest");
      const json& m = j.at("manifest");
      ds.manifest.class_names = m.at("class_names").get<std::vector<std::string>>();
      ds.manifest.feature_dim = m.at("feature_dim").get<std::size_t>();
      ds.manifest.layer_count = m.value("layer_count", std::size_t{1});
      if (ds.manifest.class_names.size() < 2 || ds.manifest.feature_dim < 1 ||
          ds.manifest.layer_count < 1)
        throw std::runtime_error("load_dataset: invalid manifest");
      continue;
    }
    Record r;
    r.id = j.at("id").get<std::string>();
    r.features = j.at("features").get<std::vector<double>>();
    if (j.contains("label")) {
      const int label = j.at("label").get<int>();
      if (label < 0 || label >= static_cast<int>(ds.manifest.n_classes()))
        throw std::runtime_error("load_dataset: label out of range for id " + r.id);
      r.label = label;
    }
    const std::size_t expect =
        ds.manifest.layer_count * ds.manifest.feature_dim;
    if (r.features.size() != expect)
      throw std::runtime_error("load_dataset: ragged feature row for id " + r.id);
    for (double v : r.features)
      if (!std::isfinite(v))
        throw std::runtime_error("load_dataset: non-finite feature for id " + r.id);
    if (!seen_ids.insert(r.id).second)
      throw std::runtime_error("load_dataset: duplicate id " + r.id);
    ds.records.push_back(std::move(r));
  }
  if (line_no == 0) throw std::runtime_error("load_dataset: empty file");
  return ds;
}

void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
  json m = {{"manifest",
             {{"class_names", ds.manifest.class_names},
              {"feature_dim", ds.manifest.feature_dim},
              {"layer_count", ds.manifest.layer_count}}}};
  out << m.dump() << '\n';
  for (const auto& r : ds.records) {
    json j = {{"id", r.id}, {"features", r.features}};
    if (r.label) j["label"] = *r.label;
    out << j.dump() << '\n';
  }
}

namespace {

std::vector<double> random_unit_vector(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& x : v) {
      x = normal(rng);
      norm2 += x * x;
    }
  } while (norm2 < 1e-12);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
  return v;
}

// Rotation by `angle` radians in span{u, v}; identity on the complement.
std::vector<double> rotate_in_plane(const std::vector<double>& x,
                                    const std::vector<double>& u,
                                    const std::vector<double>& v, double angle) {
  double xu = 0.0, xv = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xu += x[i] * u[i];
    xv += x[i] * v[i];
  }
  const double c = std::cos(angle), s = std::sin(angle);
  const double nu = c * xu - s * xv;
  const double nv = s * xu + c * xv;
  std::vector<double> out = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] += (nu - xu) * u[i] + (nv - xv) * v[i];
  return out;
}

}  // namespace

SynthShiftResult generate_synth_shift(const SynthShiftSpec& spec) {
  if (spec.n_classes < 2 || spec.feature_dim < 2)
    throw std::invalid_argument("generate_synth_shift: need C>=2, D>=2");
  if (spec.separation <= 0.0)
    throw std::invalid_argument("generate_synth_shift: separation must be > 0");
  if (spec.samples_per_class < 8)
    throw std::invalid_argument(
        "generate_synth_shift: samples_per_class must be >= 8");

  if (spec.n_classes > spec.feature_dim)
    throw std::invalid_argument("generate_synth_shift: need C <= D");

  Rng rng(spec.seed);
  const std::size_t c = spec.n_classes, d = spec.feature_dim;

  // Class means sit at the vertices of a centered simplex (e_i minus the
  // centroid of the first C basis vectors, normalized), scaled by the
  // separation. Equidistant classes; antipodal when C = 2.
  std::vector<std::vector<double>> means(c, std::vector<double>(d, 0.0));
  for (std::size_t cls = 0; cls < c; ++cls) {
    double norm2 = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      means[cls][i] = (i == cls ? 1.0 : 0.0) - 1.0 / static_cast<double>(c);
      norm2 += means[cls][i] * means[cls][i];
    }
    const double scale = spec.separation / std::sqrt(norm2);
    for (std::size_t i = 0; i < c; ++i) means[cls][i] *= scale;
  }

  // Seeded shift geometry: offset direction plus an orthonormal rotation
  // plane. The plane is drawn from the span of the class means (not the full
  // ambient space) so the rotation genuinely moves the class structure
  // instead of spinning nuisance dimensions; that is what makes the source
  // model degrade noticeably yet recoverably under the default angles.
  std::vector<double> offset = random_unit_vector(d, rng);
  for (double& x : offset) x *= spec.offset_magnitude;

  auto random_in_mean_span = [&]() {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(d, 0.0);
    for (std::size_t cls = 0; cls < c; ++cls) {
      const double g = normal(rng);
      for (std::size_t i = 0; i < d; ++i) w[i] += g * means[cls][i];
    }
    return w;
  };
  auto normalize = [](std::vector<double>& w) {
    double n2 = 0.0;
    for (double x : w) n2 += x * x;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : w) x *= inv;
    return n2;
  };
  auto project_out = [&](std::vector<double>& w, const std::vector<double>& b) {
    const double dot = std::inner_product(w.begin(), w.end(), b.begin(), 0.0);
    for (std::size_t i = 0; i < d; ++i) w[i] -= dot * b[i];
  };

  std::vector<double> u = random_in_mean_span();
  normalize(u);
  std::vector<double> v = random_in_mean_span();
  project_out(v, u);
  double v_norm2 = 0.0;
  for (double x : v) v_norm2 += x * x;
  if (v_norm2 < 1e-12) {
    // Two-class means span a line; complete the plane with an ambient
    // direction so a 180-degree rotation still maps each mean to its
    // antipode.
    v = random_unit_vector(d, rng);
    project_out(v, u);
    v_norm2 = 0.0;
    for (double x : v) v_norm2 += x * x;
  }
  for (double& x : v) x /= std::sqrt(v_norm2);
  const double angle = spec.rotation_degrees * std::acos(-1.0) / 180.0;

  Manifest manifest;
  static const char* kNames[] = {"happy", "sad", "angry", "neutral"};
  for (std::size_t i = 0; i < c; ++i)
    manifest.class_names.push_back(
        i < 4 && c <= 4 ? kNames[i] : "class" + std::to_string(i));
  manifest.feature_dim = d;
  manifest.layer_count = 1;

  SynthShiftResult out;
  out.source.manifest = manifest;
  out.target_labeled.manifest = manifest;

  std::normal_distribution<double> normal(0.0, 1.0);
  auto make_record = [&](const std::string& prefix, std::size_t idx,
                         const std::vector<double>& mean, double noise,
                         int label) {
    Record r;
    r.id = prefix + std::to_string(idx);
    r.features.resize(d);
    for (std::size_t i = 0; i < d; ++i)
      r.features[i] = mean[i] + noise * normal(rng);
    r.label = label;
    return r;
  };

  std::size_t idx = 0;
  for (std::size_t cls = 0; cls < c; ++cls)
    for (std::size_t k = 0; k < spec.samples_per_class; ++k)
      out.source.records.push_back(
          make_record("src-", idx++, means[cls], 1.0, static_cast<int>(cls)));

  idx = 0;
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::vector<double> shifted = rotate_in_plane(means[cls], u, v, angle);
    for (std::size_t i = 0; i < d; ++i) shifted[i] += offset[i];
    for (std::size_t k = 0; k < spec.samples_per_class; ++k)
      out.target_labeled.records.push_back(make_record(
          "tgt-", idx++, shifted, spec.noise_scale, static_cast<int>(cls)));
  }
  return out;
}

SplitResult split(const FeatureDataset& ds, const std::array<double, 3>& fractions,
                  std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");

  // Stratify by label; unlabeled records form one group.
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> unlabeled;
  groups.resize(ds.manifest.n_classes());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (r.label)
      groups[static_cast<std::size_t>(*r.label)].push_back(i);
    else
      unlabeled.push_back(i);
  }
  if (!unlabeled.empty()) groups.push_back(std::move(unlabeled));

  SplitResult out;
  for (auto* part : {&out.train, &out.dev, &out.test})
    part->manifest = ds.manifest;

  Rng rng(seed);
  for (auto& group : groups) {
    std::shuffle(group.begin(), group.end(), rng);
    const std::size_t n = group.size();
    std::size_t n_train = static_cast<std::size_t>(
        std::floor(fractions[0] * static_cast<double>(n) + 1e-9));
    std::size_t n_dev = static_cast<std::size_t>(
        std::floor(fractions[1] * static_cast<double>(n) + 1e-9));
    if (n_train + n_dev > n) n_dev = n - n_train;
    for (std::size_t i = 0; i < n; ++i) {
      const Record& r = ds.records[group[i]];
      if (i < n_train)
        out.train.records.push_back(r);
      else if (i < n_train + n_dev)
        out.dev.records.push_back(r);
      else
        out.test.records.push_back(r);
    }
  }
  return out;
}

}  // namespace mifuse
