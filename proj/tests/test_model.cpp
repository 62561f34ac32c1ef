#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flare/error.hpp"
#include "flare/model.hpp"
#include "flare/rng.hpp"

using namespace flare;
namespace fs = std::filesystem;

namespace {

ViewManifest tiny_manifest() {
  ViewManifest mf;
  mf.views = {{"a", 4}, {"b", 3}};
  mf.classes = 2;
  return mf;
}

Matrix random_input(Rng& rng, int n, int d) {
  Matrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("default shape follows the published layer plan") {
  NetworkShape s = NetworkShape::defaults(ViewManifest::defaults());
  CHECK(s.total_dim == 237);
  CHECK(s.translator.widths == std::vector<int>{237, 237, 237, 237});
  CHECK(s.extractor.widths == std::vector<int>{237, 128, 64});
  CHECK(s.classifier.widths == std::vector<int>{64, 32, 2});
  REQUIRE(s.decoders.size() == 7);
  CHECK(s.decoders[0].widths == std::vector<int>{64, 64, 34});
  CHECK(s.decoders[6].widths == std::vector<int>{64, 64, 33});
}

TEST_CASE("init is seeded, bounded by sqrt(6/fan_in) and zero-biased") {
  NetworkShape s = NetworkShape::defaults(tiny_manifest(), 6, 8, 5, 7);
  ModelParams a = ModelParams::init(s, 1, true, 42);
  ModelParams b = ModelParams::init(s, 1, true, 42);
  ModelParams c = ModelParams::init(s, 1, true, 43);

  bool identical = true, differs = false;
  double max_scaled = 0.0;
  for_each_tensor(a, [&](const std::string& name, const Matrix& m) {
    const Matrix* mb = nullptr;
    for_each_tensor(b, [&](const std::string& n2, const Matrix& m2) {
      if (n2 == name) mb = &m2;
    });
    REQUIRE(mb != nullptr);
    if (m != *mb) identical = false;
    for_each_tensor(c, [&](const std::string& n2, const Matrix& m2) {
      if (n2 == name && m != m2) differs = true;
    });
    if (name.find(".b") != std::string::npos) {
      CHECK(m.cwiseAbs().maxCoeff() == 0.0);
      CHECK(m.rows() == 1);
    } else {
      double bound = std::sqrt(6.0 / double(m.rows()));
      CHECK(m.cwiseAbs().maxCoeff() <= bound);
      max_scaled = std::max(max_scaled, m.cwiseAbs().maxCoeff() / bound);
    }
  });
  CHECK(identical);
  CHECK(differs);
  CHECK(max_scaled > 0.8);  // the uniform law actually fills its range
}

TEST_CASE("latent embeddings live on the unit sphere") {
  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 1, true, 1);
  Rng rng(2);
  Graph g;
  ModelVars m = insert_params(g, p, false);
  Var x = g.constant(random_input(rng, 17, mf.total_dim()));

  Var zt = forward_target(g, m, x);
  for (Eigen::Index i = 0; i < 17; ++i)
    CHECK(std::abs(g.value(zt).row(i).norm() - 1.0) <= 1e-9);

  SourceForward sf = forward_source(g, m, x, 0);
  CHECK(g.value(sf.translated).cols() == mf.total_dim());
  for (Eigen::Index i = 0; i < 17; ++i)
    CHECK(std::abs(g.value(sf.latent).row(i).norm() - 1.0) <= 1e-9);
}

TEST_CASE("all-zero input rides the zero-latent guard onto e1") {
  // Zero input with zero biases keeps every pre-activation at zero, so the
  // extractor emits an exactly zero latent row ahead of normalization.
  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 1, true, 1);
  Graph g;
  ModelVars m = insert_params(g, p, false);
  Var x = g.constant(Matrix::Zero(2, mf.total_dim()));
  Var z = forward_target(g, m, x);
  CHECK(g.guard_events() == 2);
  CHECK(g.value(z)(0, 0) == 1.0);
  CHECK(g.value(z).row(0).norm() == doctest::Approx(1.0));
}

TEST_CASE("translator-free configuration passes features straight through") {
  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 1, false, 3);
  CHECK(p.translators.empty());
  Rng rng(4);
  Graph g;
  ModelVars m = insert_params(g, p, false);
  Matrix xv = random_input(rng, 5, mf.total_dim());
  SourceForward sf = forward_source(g, m, g.constant(xv), 0);
  CHECK(g.value(sf.translated) == xv);
}

TEST_CASE("classifier emits probability rows; ties predict positive") {
  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 2, true, 9);
  Rng rng(5);
  Graph g;
  ModelVars m = insert_params(g, p, false);
  Var z = forward_target(g, m, g.constant(random_input(rng, 9, mf.total_dim())));
  for (int e = 0; e < 2; ++e) {
    Matrix probs = g.value(class_probs(g, m, z, e));
    CHECK(probs.cols() == 2);
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
      CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }

  Matrix tie(3, 2);
  tie << 0.5, 0.5, 0.6, 0.4, 0.49, 0.51;
  CHECK(predict_labels(tie) == std::vector<int>{1, 0, 1});

  Matrix multi(2, 3);
  multi << 0.2, 0.5, 0.3, 0.4, 0.4, 0.2;
  CHECK(predict_labels(multi) == std::vector<int>{1, 0});
}

TEST_CASE("decoders reconstruct each view at its own width") {
  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 1, true, 10);
  Rng rng(6);
  Graph g;
  ModelVars m = insert_params(g, p, false);
  Var z = forward_target(g, m, g.constant(random_input(rng, 4, mf.total_dim())));
  CHECK(g.value(reconstruct_view(g, m, z, 0)).cols() == 4);
  CHECK(g.value(reconstruct_view(g, m, z, 1)).cols() == 3);
  CHECK_THROWS_AS(reconstruct_view(g, m, z, 2), ContractError);
}

TEST_CASE("forward pass is row-wise: permuting inputs permutes latents") {
  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 1, true, 11);
  Rng rng(7);
  Matrix x = random_input(rng, 6, mf.total_dim());
  Matrix perm = x.colwise().reverse();  // reverse row order

  Graph g;
  ModelVars m = insert_params(g, p, false);
  Matrix z1 = g.value(forward_target(g, m, g.constant(x)));
  Matrix z2 = g.value(forward_target(g, m, g.constant(perm)));
  // Equivariance up to roundoff; the GEMM accumulation order may differ.
  CHECK((z1.colwise().reverse() - z2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 2, true, 123);
  p.source_weights = {0.25, 0.75};
  auto path = fs::temp_directory_path() / "flare_test_ckpt.bin";
  save_checkpoint(path, p);
  ModelParams back = load_checkpoint(path);
  CHECK(back.n_sources() == 2);
  CHECK(back.use_translator == p.use_translator);
  CHECK(back.shape.latent_dim == p.shape.latent_dim);
  CHECK(back.source_weights == p.source_weights);
  std::vector<std::pair<std::string, const Matrix*>> orig;
  for_each_tensor(p, [&](const std::string& n, const Matrix& m) {
    orig.emplace_back(n, &m);
  });
  size_t i = 0;
  bool all_equal = true;
  for_each_tensor(back, [&](const std::string& n, const Matrix& m) {
    REQUIRE(i < orig.size());
    CHECK(n == orig[i].first);
    if (m != *orig[i].second) all_equal = false;
    ++i;
  });
  CHECK(i == orig.size());
  CHECK(all_equal);
  fs::remove(path);
}

TEST_CASE("checkpoint loader rejects foreign and truncated files") {
  auto path = fs::temp_directory_path() / "flare_test_ckpt_bad.bin";
  std::ofstream(path, std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);

  ViewManifest mf = tiny_manifest();
  NetworkShape s = NetworkShape::defaults(mf, 6, 8, 5, 7);
  ModelParams p = ModelParams::init(s, 1, true, 5);
  save_checkpoint(path, p);
  auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  fs::remove(path);
}

}  // TEST_SUITE
