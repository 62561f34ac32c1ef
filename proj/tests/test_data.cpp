#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flare/data.hpp"
#include "flare/error.hpp"
#include "flare/rng.hpp"

using namespace flare;
namespace fs = std::filesystem;

namespace {

ViewManifest tiny_manifest() {
  ViewManifest mf;
  mf.views = {{"a", 2}, {"b", 1}};
  mf.classes = 2;
  return mf;
}

// n0 negatives then n1 positives, features encode the original index.
SampleSet labeled_pool(int n0, int n1, int dim = 3) {
  SampleSet set;
  for (int i = 0; i < n0 + n1; ++i) {
    Sample s;
    s.x = Eigen::VectorXd::Constant(dim, double(i));
    s.label = i < n0 ? 0 : 1;
    s.site = "t";
    set.push_back(std::move(s));
  }
  return set;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("flare_test_" + name);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("default manifest is seven views over 237 features") {
  ViewManifest mf = ViewManifest::defaults();
  CHECK(mf.views.size() == 7);
  CHECK(mf.total_dim() == 237);
  CHECK(mf.classes == 2);
  CHECK(mf.view_offset(0) == 0);
  CHECK(mf.view_offset(6) == 204);
  CHECK(mf.views[6].dim == 33);
}

TEST_CASE("manifest json round trip") {
  ViewManifest mf = tiny_manifest();
  auto p = temp_file("manifest.json");
  mf.save(p);
  ViewManifest back = ViewManifest::load(p);
  CHECK(back.views.size() == 2);
  CHECK(back.views[0].name == "a");
  CHECK(back.views[1].dim == 1);
  CHECK(back.classes == 2);
  fs::remove(p);
}

TEST_CASE("manifest loader rejects malformed files") {
  auto p = temp_file("bad_manifest.json");
  std::ofstream(p) << "{\"classes\": 2}";
  CHECK_THROWS_AS(ViewManifest::load(p), ParseError);
  std::ofstream(p) << "not json";
  CHECK_THROWS_AS(ViewManifest::load(p), ParseError);
  fs::remove(p);
}

TEST_CASE("standardizer hand case: column (0, 2) maps to (-1, 1)") {
  SampleSet set;
  for (double v : {0.0, 2.0}) {
    Sample s;
    s.x = Eigen::VectorXd::Constant(2, v);
    s.x[1] = 7.0;  // constant column, must go dead
    s.label = 0;
    set.push_back(s);
  }
  Standardizer sc = Standardizer::fit(set, 2);
  CHECK(sc.mean[0] == doctest::Approx(1.0));
  CHECK(sc.std[0] == doctest::Approx(1.0));  // population std, divide by n
  CHECK(sc.apply(set[0].x)[0] == doctest::Approx(-1.0));
  CHECK(sc.apply(set[1].x)[0] == doctest::Approx(1.0));
  CHECK(sc.dead[1] == 1);
  CHECK(sc.apply(set[0].x)[1] == 0.0);
}

TEST_CASE("csv round trip preserves everything including unlabeled rows") {
  ViewManifest mf = tiny_manifest();
  SampleSet set;
  Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    Sample s;
    s.x = Eigen::VectorXd::NullaryExpr(3, [&](Eigen::Index) { return rng.normal() * 1e3; });
    s.label = i % 3 == 0 ? kUnlabeled : i % 2;
    s.site = "site1";
    set.push_back(std::move(s));
  }
  auto p = temp_file("roundtrip.csv");
  save_csv(p, set, mf);
  SampleSet back = load_csv(p, mf, false);
  REQUIRE(back.size() == set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    CHECK(back[i].x == set[i].x);  // bit exact through 17 digit text
    CHECK(back[i].label == set[i].label);
    CHECK(back[i].site == set[i].site);
  }
  fs::remove(p);
}

TEST_CASE("csv loader reports the offending row") {
  ViewManifest mf = tiny_manifest();
  auto p = temp_file("bad.csv");

  std::ofstream(p) << "f0,f1,f2,label,site\n1,2,3,0,s\n1,2,0,s\n";
  try {
    load_csv(p, mf, true);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row == 3);
  }

  std::ofstream(p) << "f0,f1,f2,label,site\n1,2,3,5,s\n";
  CHECK_THROWS_AS(load_csv(p, mf, true), ParseError);  // label out of range

  std::ofstream(p) << "f0,f1,f2,label,site\n1,x,3,0,s\n";
  CHECK_THROWS_AS(load_csv(p, mf, true), ParseError);  // non-numeric

  std::ofstream(p) << "f0,f1,f2,label,site\n1,2,3,,s\n";
  CHECK_THROWS_AS(load_csv(p, mf, true), ParseError);  // missing required label
  SampleSet ok = load_csv(p, mf, false);
  CHECK(ok[0].label == kUnlabeled);

  std::ofstream(p) << "f0,f1,label,site\n";
  CHECK_THROWS_AS(load_csv(p, mf, true), ParseError);  // header mismatch
  fs::remove(p);
}

TEST_CASE("balanced partition reproduces the clinical split counts") {
  // Totals mirror the two extreme sites of the motivating cohort.
  struct Case { int mild, severe, mild_train, severe_train, test_each; };
  for (const Case& c : {Case{2433, 291, 2230, 88, 203},
                        Case{758, 631, 317, 190, 441}}) {
    SampleSet site = labeled_pool(c.mild, c.severe);
    Partition p = partition_balanced(site, 77);
    auto train = class_counts(p.train, 2);
    auto test = class_counts(p.test, 2);
    CHECK(train[0] == c.mild_train);
    CHECK(train[1] == c.severe_train);
    CHECK(test[0] == c.test_each);
    CHECK(test[1] == c.test_each);
    CHECK(p.train.size() + p.test.size() == site.size());
  }
}

TEST_CASE("imbalanced partition keeps prevalence with ceil(0.3 n) per class") {
  SampleSet site = labeled_pool(2433, 291);
  Partition p = partition_imbalanced(site, 2, 77);
  auto train = class_counts(p.train, 2);
  auto test = class_counts(p.test, 2);
  CHECK(train[0] == 730);
  CHECK(train[1] == 88);
  CHECK(test[0] == 1703);
  CHECK(test[1] == 203);
}

TEST_CASE("partitions are disjoint, exhaustive and seed-deterministic") {
  SampleSet site = labeled_pool(40, 11);
  Partition a = partition_balanced(site, 101);
  Partition b = partition_balanced(site, 101);
  Partition c = partition_balanced(site, 102);
  auto ids = [](const SampleSet& s) {
    std::vector<double> v;
    for (const Sample& x : s) v.push_back(x.x[0]);
    return v;
  };
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.test) == ids(b.test));
  CHECK(ids(a.train) != ids(c.train));
  std::vector<double> all = ids(a.train);
  auto t = ids(a.test);
  all.insert(all.end(), t.begin(), t.end());
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i < all.size(); ++i) CHECK(all[i] == double(i));
}

TEST_CASE("balanced partition is infeasible when negatives cannot fill the test side") {
  SampleSet site = labeled_pool(20, 100);
  CHECK_THROWS_AS(partition_balanced(site, 1), InfeasibleError);
}

TEST_CASE("partition rejects unlabeled or out-of-range rows") {
  SampleSet site = labeled_pool(5, 5);
  site[0].label = kUnlabeled;
  CHECK_THROWS_AS(partition_balanced(site, 1), ContractError);
}

TEST_CASE("synthetic generator is deterministic and honors shift = 0") {
  SynthSpec spec;
  spec.manifest = ViewManifest::defaults();
  spec.sites = 2;
  spec.counts = {400, 400};
  spec.shift = 0.0;
  spec.noise = 1.0;
  spec.separation = 3.0;
  spec.seed = 9;
  auto sites = synth_generate(spec);
  auto again = synth_generate(spec);
  REQUIRE(sites.size() == 2);
  CHECK(sites[0].size() == 800);
  CHECK(sites[0][0].site == "site1");
  CHECK(sites[1][0].site == "site2");
  for (size_t i = 0; i < sites[0].size(); ++i)
    CHECK(sites[0][i].x == again[0][i].x);

  // With no site distortion, per-site class means agree up to sampling noise:
  // each coordinate difference is N(0, 2 noise^2 / n).
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd m0 = Eigen::VectorXd::Zero(237), m1 = m0;
    for (const Sample& s : sites[0])
      if (s.label == c) m0 += s.x / 400.0;
    for (const Sample& s : sites[1])
      if (s.label == c) m1 += s.x / 400.0;
    double bound = 5.0 * spec.noise * std::sqrt(2.0 / 400.0);
    CHECK((m0 - m1).cwiseAbs().maxCoeff() < bound);
  }

  // Nonzero shift must actually move the site distributions apart.
  spec.shift = 2.0;
  auto shifted = synth_generate(spec);
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(237), m1 = m0;
  for (const Sample& s : shifted[0]) m0 += s.x / 800.0;
  for (const Sample& s : shifted[1]) m1 += s.x / 800.0;
  CHECK((m0 - m1).norm() > 1.0);
}

TEST_CASE("synthetic generator contract errors") {
  SynthSpec spec;
  spec.manifest = tiny_manifest();
  spec.counts = {10};  // wrong arity
  CHECK_THROWS_AS(synth_generate(spec), ContractError);
  spec.counts = {10, 10};
  spec.manifest.classes = 5;  // 5 classes need >= 5 dims, manifest has 3
  spec.counts = {1, 1, 1, 1, 1};
  CHECK_THROWS_AS(synth_generate(spec), ContractError);
}

TEST_CASE("make_tri_domain standardizes each site on its training portion") {
  SynthSpec spec;
  spec.manifest = tiny_manifest();
  spec.counts = {60, 20};
  spec.sites = 2;
  spec.seed = 4;
  auto sites = synth_generate(spec);
  DomainDataset ds =
      make_tri_domain(sites[0], sites[1], spec.manifest, Setting::Imbalanced, 5);
  REQUIRE(ds.sources.size() == 1);
  CHECK(ds.target_labeled.size() == 18 + 6);
  CHECK(ds.target_unlabeled.size() == 42 + 14);

  auto check_standardized = [](const SampleSet& set) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(3), var = mean;
    for (const Sample& s : set) mean += s.x;
    mean /= double(set.size());
    for (const Sample& s : set) var += (s.x - mean).cwiseAbs2();
    var /= double(set.size());
    CHECK(mean.cwiseAbs().maxCoeff() < 1e-9);
    CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-9);
  };
  check_standardized(ds.sources[0]);
  check_standardized(ds.target_labeled);
  // D_u reuses the D_t scaler, so it is close to but not exactly centered.
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
  for (const Sample& s : ds.target_unlabeled) mu += s.x;
  mu /= double(ds.target_unlabeled.size());
  CHECK(mu.cwiseAbs().maxCoeff() < 1.0);
  CHECK(mu.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("subsample_regime floors per class and errors on emptied pools") {
  SynthSpec spec;
  spec.manifest = tiny_manifest();
  spec.counts = {60, 20};
  spec.sites = 2;
  spec.seed = 4;
  auto sites = synth_generate(spec);
  DomainDataset ds =
      make_tri_domain(sites[0], sites[1], spec.manifest, Setting::Imbalanced, 5);
  DomainDataset cut = ds;
  subsample_regime(cut, 0.5, 0.25, 11);
  auto counts = class_counts(cut.target_labeled, 2);
  CHECK(counts[0] == 9);   // floor(0.5 * 18)
  CHECK(counts[1] == 3);   // floor(0.5 * 6)
  CHECK(cut.target_unlabeled.size() == 14);  // floor(0.25 * 56)
  CHECK(cut.sources[0].size() == ds.sources[0].size());

  DomainDataset bad = ds;
  CHECK_THROWS_AS(subsample_regime(bad, 0.05, 1.0, 1), InfeasibleError);
  CHECK_THROWS_AS(subsample_regime(bad, 1.2, 1.0, 1), ContractError);
  CHECK_THROWS_AS(subsample_regime(bad, 1.0, 0.0, 1), ContractError);
}

TEST_CASE("pool helpers") {
  SampleSet set = labeled_pool(3, 2);
  Matrix m = stack_features(set);
  CHECK(m.rows() == 5);
  CHECK(m.cols() == 3);
  CHECK(m(4, 0) == 4.0);
  CHECK(labels_of(set) == std::vector<int>{0, 0, 0, 1, 1});
  CHECK(class_counts(set, 2) == std::vector<int>{3, 2});
}

}  // TEST_SUITE
