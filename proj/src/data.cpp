#include "flare/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "flare/error.hpp"
#include "flare/rng.hpp"

namespace flare {

using nlohmann::json;

int ViewManifest::total_dim() const {
  int d = 0;
  for (const auto& v : views) d += v.dim;
  return d;
}

int ViewManifest::view_offset(int v) const {
  if (v < 0 || static_cast<size_t>(v) >= views.size())
    throw ContractError("view_offset: view index out of range");
  int off = 0;
  for (int i = 0; i < v; ++i) off += views[i].dim;
  return off;
}

ViewManifest ViewManifest::defaults() {
  ViewManifest mf;
  mf.views = {{"gray_matter", 34},   {"texture", 34},  {"histogram", 34},
              {"region_number", 34}, {"intensity", 34}, {"surface", 34},
              {"volume", 33}};
  mf.classes = 2;
  return mf;
}

ViewManifest ViewManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  ViewManifest mf;
  if (!j.contains("views") || !j["views"].is_array() || j["views"].empty())
    throw ParseError("manifest " + path.string() + ": missing views array");
  for (const auto& v : j["views"]) {
    ViewSpec spec;
    spec.name = v.at("name").get<std::string>();
    spec.dim = v.at("dim").get<int>();
    if (spec.dim <= 0)
      throw ParseError("manifest " + path.string() + ": view '" + spec.name +
                       "' has non-positive dim");
    mf.views.push_back(std::move(spec));
  }
  mf.classes = j.value("classes", 2);
  if (mf.classes < 2)
    throw ParseError("manifest " + path.string() + ": classes must be >= 2");
  return mf;
}

void ViewManifest::save(const std::filesystem::path& path) const {
  json j;
  j["views"] = json::array();
  for (const auto& v : views) j["views"].push_back({{"name", v.name}, {"dim", v.dim}});
  j["classes"] = classes;
  std::ofstream out(path);
  if (!out) throw FlareError("cannot write manifest: " + path.string());
  out << j.dump(2) << "\n";
}

Setting setting_from_string(const std::string& s) {
  if (s == "balanced") return Setting::Balanced;
  if (s == "imbalanced") return Setting::Imbalanced;
  throw ContractError("unknown setting '" + s +
                      "' (expected balanced or imbalanced)");
}

const char* to_string(Setting s) {
  return s == Setting::Balanced ? "balanced" : "imbalanced";
}

Standardizer Standardizer::fit(const SampleSet& train, int dim) {
  if (train.empty()) throw ContractError("Standardizer::fit: empty set");
  Standardizer sc;
  sc.mean = Eigen::VectorXd::Zero(dim);
  sc.std = Eigen::VectorXd::Zero(dim);
  sc.dead.assign(dim, 0);
  for (const Sample& s : train) {
    if (s.x.size() != dim)
      throw ContractError("Standardizer::fit: sample width mismatch");
    sc.mean += s.x;
  }
  sc.mean /= double(train.size());
  for (const Sample& s : train) sc.std += (s.x - sc.mean).cwiseAbs2();
  sc.std = (sc.std / double(train.size())).cwiseSqrt();
  for (int j = 0; j < dim; ++j)
    if (sc.std[j] < 1e-8) sc.dead[j] = 1;
  return sc;
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
  if (x.size() != mean.size())
    throw ContractError("Standardizer::apply: sample width mismatch");
  Eigen::VectorXd out(x.size());
  for (int j = 0; j < x.size(); ++j)
    out[j] = dead[j] ? 0.0 : (x[j] - mean[j]) / std[j];
  return out;
}

void Standardizer::apply(SampleSet& set) const {
  for (Sample& s : set) s.x = apply(s.x);
}

namespace {

std::vector<std::vector<size_t>> indices_by_class(const SampleSet& set,
                                                  int classes) {
  std::vector<std::vector<size_t>> by(classes);
  for (size_t i = 0; i < set.size(); ++i) {
    int y = set[i].label;
    if (y < 0 || y >= classes)
      throw ContractError("partition: sample " + std::to_string(i) +
                          " has label outside [0, " + std::to_string(classes) +
                          ")");
    by[y].push_back(i);
  }
  return by;
}

SampleSet gather_sorted(const SampleSet& set, std::vector<size_t> idx) {
  std::sort(idx.begin(), idx.end());
  SampleSet out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(set[i]);
  return out;
}

}  // namespace

Partition partition_balanced(const SampleSet& site, uint64_t seed) {
  auto by = indices_by_class(site, 2);
  auto& mild = by[0];
  auto& severe = by[1];
  if (severe.empty() || mild.empty())
    throw ContractError("partition_balanced: both classes must be present");
  Rng rng(seed);
  rng.shuffle(severe);
  size_t n_sev_train =
      static_cast<size_t>(std::ceil(0.3 * double(severe.size())));
  std::vector<size_t> train(severe.begin(), severe.begin() + n_sev_train);
  std::vector<size_t> test(severe.begin() + n_sev_train, severe.end());
  size_t n_sev_test = severe.size() - n_sev_train;
  if (mild.size() < n_sev_test)
    throw InfeasibleError(
        "partition_balanced: negatives (" + std::to_string(mild.size()) +
        ") cannot cover a balanced test side of " + std::to_string(n_sev_test));
  rng.shuffle(mild);
  test.insert(test.end(), mild.begin(), mild.begin() + n_sev_test);
  train.insert(train.end(), mild.begin() + n_sev_test, mild.end());
  return {gather_sorted(site, std::move(train)),
          gather_sorted(site, std::move(test))};
}

Partition partition_imbalanced(const SampleSet& site, int classes,
                               uint64_t seed) {
  auto by = indices_by_class(site, classes);
  Rng rng(seed);
  std::vector<size_t> train, test;
  for (int c = 0; c < classes; ++c) {
    if (by[c].empty())
      throw ContractError("partition_imbalanced: class " + std::to_string(c) +
                          " has no samples");
    rng.shuffle(by[c]);
    size_t k = static_cast<size_t>(std::ceil(0.3 * double(by[c].size())));
    train.insert(train.end(), by[c].begin(), by[c].begin() + k);
    test.insert(test.end(), by[c].begin() + k, by[c].end());
  }
  return {gather_sorted(site, std::move(train)),
          gather_sorted(site, std::move(test))};
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  for (;;) {
    size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& s, int row, int col) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ParseError("csv row " + std::to_string(row) + ", column " +
                         std::to_string(col) + ": '" + s + "' is not a number",
                     row);
  return v;
}

}  // namespace

SampleSet load_csv(const std::filesystem::path& path, const ViewManifest& mf,
                   bool require_labels) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open csv: " + path.string());
  const int dim = mf.total_dim();
  std::string line;
  if (!std::getline(in, line)) throw ParseError("csv " + path.string() + ": empty file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    auto fields = split_fields(line);
    if (static_cast<int>(fields.size()) != dim + 2 || fields[0] != "f0" ||
        fields[dim] != "label" || fields[dim + 1] != "site")
      throw ParseError("csv " + path.string() +
                           ": header does not match manifest (want f0..f" +
                           std::to_string(dim - 1) + ",label,site)",
                       1);
  }
  SampleSet out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (static_cast<int>(fields.size()) != dim + 2)
      throw ParseError("csv row " + std::to_string(row) + ": expected " +
                           std::to_string(dim + 2) + " fields, got " +
                           std::to_string(fields.size()),
                       row);
    Sample s;
    s.x.resize(dim);
    for (int j = 0; j < dim; ++j) s.x[j] = parse_double(fields[j], row, j);
    const std::string& lab = fields[dim];
    if (lab.empty()) {
      if (require_labels)
        throw ParseError("csv row " + std::to_string(row) +
                             ": label required but missing",
                         row);
      s.label = kUnlabeled;
    } else {
      int y = 0;
      auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), y);
      if (ec != std::errc{} || ptr != lab.data() + lab.size() || y < 0 ||
          y >= mf.classes)
        throw ParseError("csv row " + std::to_string(row) + ": label '" + lab +
                             "' outside [0, " + std::to_string(mf.classes) +
                             ")",
                         row);
      s.label = y;
    }
    s.site = fields[dim + 1];
    out.push_back(std::move(s));
  }
  return out;
}

void save_csv(const std::filesystem::path& path, const SampleSet& set,
              const ViewManifest& mf) {
  const int dim = mf.total_dim();
  std::ofstream out(path);
  if (!out) throw FlareError("cannot write csv: " + path.string());
  for (int j = 0; j < dim; ++j) out << "f" << j << ",";
  out << "label,site\n";
  char buf[40];
  for (const Sample& s : set) {
    if (s.x.size() != dim)
      throw ContractError("save_csv: sample width mismatch");
    for (int j = 0; j < dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", s.x[j]);
      out << buf << ",";
    }
    if (s.label != kUnlabeled) out << s.label;
    out << "," << s.site << "\n";
  }
}

std::vector<SampleSet> synth_generate(const SynthSpec& spec) {
  const int dim = spec.manifest.total_dim();
  const int classes = spec.manifest.classes;
  if (static_cast<int>(spec.counts.size()) != classes)
    throw ContractError("synth_generate: need one count per class");
  for (int c : spec.counts)
    if (c <= 0) throw ContractError("synth_generate: counts must be positive");
  if (dim < classes)
    throw ContractError(
        "synth_generate: feature dim below class count, class means cannot "
        "be separated");
  if (spec.sites < 1) throw ContractError("synth_generate: sites must be >= 1");

  // Class means sit on distinct axes, `separation` apart.
  std::vector<Eigen::VectorXd> means(classes, Eigen::VectorXd::Zero(dim));
  for (int c = 0; c < classes; ++c) means[c][c] = spec.separation;

  std::vector<SampleSet> sites;
  for (int s = 0; s < spec.sites; ++s) {
    Rng rng(derive_seed(spec.seed, "synth.site", s));
    Matrix mix = Matrix::Identity(dim, dim);
    Eigen::VectorXd shift_vec = Eigen::VectorXd::Zero(dim);
    if (spec.shift != 0.0) {
      double scale = spec.shift / std::sqrt(double(dim));
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) mix(i, j) += scale * rng.normal();
      for (int i = 0; i < dim; ++i) shift_vec[i] = spec.shift * rng.normal();
    }
    SampleSet set;
    std::string site_name = "site" + std::to_string(s + 1);
    for (int c = 0; c < classes; ++c) {
      for (int k = 0; k < spec.counts[c]; ++k) {
        Eigen::VectorXd eps(dim);
        for (int i = 0; i < dim; ++i) eps[i] = rng.normal();
        Sample sample;
        sample.x = mix * (means[c] + spec.noise * eps) + shift_vec;
        sample.label = c;
        sample.site = site_name;
        set.push_back(std::move(sample));
      }
    }
    sites.push_back(std::move(set));
  }
  return sites;
}

DomainDataset make_multi_domain(const std::vector<SampleSet>& sources,
                                const SampleSet& target, const ViewManifest& mf,
                                Setting setting, uint64_t seed) {
  if (sources.empty())
    throw ContractError("make_multi_domain: at least one source required");
  const int dim = mf.total_dim();
  DomainDataset ds;
  ds.manifest = mf;
  for (const SampleSet& src : sources) {
    SampleSet s = src;
    Standardizer::fit(s, dim).apply(s);
    ds.sources.push_back(std::move(s));
  }
  Partition part = setting == Setting::Balanced
                       ? partition_balanced(target, seed)
                       : partition_imbalanced(target, mf.classes, seed);
  Standardizer sc = Standardizer::fit(part.train, dim);
  sc.apply(part.train);
  sc.apply(part.test);
  ds.target_labeled = std::move(part.train);
  ds.target_unlabeled = std::move(part.test);
  return ds;
}

DomainDataset make_tri_domain(const SampleSet& source, const SampleSet& target,
                              const ViewManifest& mf, Setting setting,
                              uint64_t seed) {
  return make_multi_domain({source}, target, mf, setting, seed);
}

void subsample_regime(DomainDataset& ds, double labeled_ratio,
                      double unlabeled_ratio, uint64_t seed) {
  if (labeled_ratio <= 0.0 || labeled_ratio > 1.0 || unlabeled_ratio <= 0.0 ||
      unlabeled_ratio > 1.0)
    throw ContractError("subsample_regime: ratios must lie in (0, 1]");
  Rng rng(seed);
  auto by = indices_by_class(ds.target_labeled, ds.manifest.classes);
  std::vector<size_t> keep;
  for (int c = 0; c < ds.manifest.classes; ++c) {
    size_t k = static_cast<size_t>(labeled_ratio * double(by[c].size()));
    if (k == 0)
      throw InfeasibleError("subsample_regime: class " + std::to_string(c) +
                            " of the labeled target pool would become empty");
    rng.shuffle(by[c]);
    keep.insert(keep.end(), by[c].begin(), by[c].begin() + k);
  }
  ds.target_labeled = gather_sorted(ds.target_labeled, std::move(keep));

  std::vector<size_t> uidx(ds.target_unlabeled.size());
  std::iota(uidx.begin(), uidx.end(), 0);
  size_t ku = static_cast<size_t>(unlabeled_ratio * double(uidx.size()));
  if (ku == 0)
    throw InfeasibleError(
        "subsample_regime: the unlabeled target pool would become empty");
  rng.shuffle(uidx);
  uidx.resize(ku);
  ds.target_unlabeled = gather_sorted(ds.target_unlabeled, std::move(uidx));
}

Matrix stack_features(const SampleSet& set) {
  if (set.empty()) throw ContractError("stack_features: empty set");
  Matrix m(set.size(), set[0].x.size());
  for (size_t i = 0; i < set.size(); ++i) {
    if (set[i].x.size() != m.cols())
      throw ContractError("stack_features: ragged feature widths");
    m.row(i) = set[i].x.transpose();
  }
  return m;
}

std::vector<int> labels_of(const SampleSet& set) {
  std::vector<int> y(set.size());
  for (size_t i = 0; i < set.size(); ++i) y[i] = set[i].label;
  return y;
}

std::vector<int> class_counts(const SampleSet& set, int classes) {
  std::vector<int> counts(classes, 0);
  for (const Sample& s : set) {
    if (s.label < 0 || s.label >= classes)
      throw ContractError("class_counts: label outside [0, classes)");
    ++counts[s.label];
  }
  return counts;
}

}  // namespace flare
