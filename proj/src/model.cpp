#include "flare/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "flare/error.hpp"
#include "flare/rng.hpp"

namespace flare {

NetworkShape NetworkShape::defaults(const ViewManifest& mf, int latent_dim,
                                    int extractor_hidden, int classifier_hidden,
                                    int decoder_hidden) {
  NetworkShape s;
  s.total_dim = mf.total_dim();
  s.classes = mf.classes;
  s.latent_dim = latent_dim;
  s.translator.widths = {s.total_dim, s.total_dim, s.total_dim, s.total_dim};
  s.extractor.widths = {s.total_dim, extractor_hidden, latent_dim};
  s.classifier.widths = {latent_dim, classifier_hidden, s.classes};
  for (const ViewSpec& v : mf.views)
    s.decoders.push_back({{latent_dim, decoder_hidden, v.dim}});
  return s;
}

namespace {

Mlp init_mlp(const MlpShape& shape, Rng& rng) {
  if (shape.widths.size() < 2)
    throw ContractError("init_mlp: a network needs at least two widths");
  Mlp net;
  for (size_t l = 0; l + 1 < shape.widths.size(); ++l) {
    int fan_in = shape.widths[l];
    int fan_out = shape.widths[l + 1];
    double bound = std::sqrt(6.0 / double(fan_in));
    Matrix w(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
      for (int j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-bound, bound);
    net.w.push_back(std::move(w));
    net.b.push_back(Matrix::Zero(1, fan_out));
  }
  return net;
}

}  // namespace

ModelParams ModelParams::init(const NetworkShape& shape, int n_sources,
                              bool use_translator, uint64_t seed) {
  if (n_sources < 1) throw ContractError("ModelParams: need >= 1 source");
  ModelParams p;
  p.shape = shape;
  p.use_translator = use_translator;
  Rng rng(derive_seed(seed, "model.init"));
  if (use_translator)
    for (int e = 0; e < n_sources; ++e)
      p.translators.push_back(init_mlp(shape.translator, rng));
  p.extractor = init_mlp(shape.extractor, rng);
  for (int e = 0; e < n_sources; ++e)
    p.classifiers.push_back(init_mlp(shape.classifier, rng));
  for (const MlpShape& d : shape.decoders) p.decoders.push_back(init_mlp(d, rng));
  p.source_weights.assign(n_sources, 1.0 / n_sources);
  return p;
}

namespace {

template <typename Params, typename Fn>
void visit_tensors(Params& p, const Fn& f) {
  auto visit_mlp = [&](auto& net, const std::string& prefix) {
    for (size_t l = 0; l < net.w.size(); ++l) {
      f(prefix + ".w" + std::to_string(l), net.w[l]);
      f(prefix + ".b" + std::to_string(l), net.b[l]);
    }
  };
  for (size_t e = 0; e < p.translators.size(); ++e)
    visit_mlp(p.translators[e], "translator" + std::to_string(e));
  visit_mlp(p.extractor, "extractor");
  for (size_t e = 0; e < p.classifiers.size(); ++e)
    visit_mlp(p.classifiers[e], "classifier" + std::to_string(e));
  for (size_t v = 0; v < p.decoders.size(); ++v)
    visit_mlp(p.decoders[v], "decoder" + std::to_string(v));
}

}  // namespace

void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, Matrix&)>& f) {
  visit_tensors(p, f);
}

void for_each_tensor(
    const ModelParams& p,
    const std::function<void(const std::string&, const Matrix&)>& f) {
  visit_tensors(p, f);
}

ModelVars insert_params(Graph& g, const ModelParams& p, bool trainable) {
  ModelVars m;
  m.use_translator = p.use_translator;
  auto insert_mlp = [&](const Mlp& net, const std::string& prefix) {
    MlpVars vars;
    for (size_t l = 0; l < net.w.size(); ++l) {
      std::string base = prefix + "." + std::to_string(l);
      vars.w.push_back(trainable ? g.parameter(net.w[l], base + ".w")
                                 : g.constant(net.w[l], base + ".w"));
      vars.b.push_back(trainable ? g.parameter(net.b[l], base + ".b")
                                 : g.constant(net.b[l], base + ".b"));
    }
    return vars;
  };
  for (size_t e = 0; e < p.translators.size(); ++e)
    m.translators.push_back(insert_mlp(p.translators[e], "translator" + std::to_string(e)));
  m.extractor = insert_mlp(p.extractor, "extractor");
  for (size_t e = 0; e < p.classifiers.size(); ++e)
    m.classifiers.push_back(insert_mlp(p.classifiers[e], "classifier" + std::to_string(e)));
  for (size_t v = 0; v < p.decoders.size(); ++v)
    m.decoders.push_back(insert_mlp(p.decoders[v], "decoder" + std::to_string(v)));
  return m;
}

Var mlp_forward(Graph& g, const MlpVars& net, Var x) {
  Var h = x;
  for (size_t l = 0; l < net.w.size(); ++l) {
    h = g.add_row(g.matmul(h, net.w[l]), net.b[l]);
    if (l + 1 < net.w.size()) h = g.relu(h);
  }
  return h;
}

SourceForward forward_source(Graph& g, const ModelVars& m, Var x, int source) {
  SourceForward out;
  if (m.use_translator) {
    if (source < 0 || source >= static_cast<int>(m.translators.size()))
      throw ContractError("forward_source: translator index out of range");
    out.translated = mlp_forward(g, m.translators[source], x);
  } else {
    out.translated = x;
  }
  out.latent = g.unit_rows(mlp_forward(g, m.extractor, out.translated));
  return out;
}

Var forward_target(Graph& g, const ModelVars& m, Var x) {
  return g.unit_rows(mlp_forward(g, m.extractor, x));
}

Var class_logits(Graph& g, const ModelVars& m, Var z, int source) {
  if (source < 0 || source >= static_cast<int>(m.classifiers.size()))
    throw ContractError("class_logits: classifier index out of range");
  return mlp_forward(g, m.classifiers[source], z);
}

Var class_probs(Graph& g, const ModelVars& m, Var z, int source) {
  return g.softmax_rows(class_logits(g, m, z, source));
}

Var reconstruct_view(Graph& g, const ModelVars& m, Var z, int view) {
  if (view < 0 || view >= static_cast<int>(m.decoders.size()))
    throw ContractError("reconstruct_view: view index out of range");
  return mlp_forward(g, m.decoders[view], z);
}

std::vector<int> predict_labels(const Matrix& probs) {
  if (probs.cols() < 2)
    throw ContractError("predict_labels: need at least two class columns");
  std::vector<int> out(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (probs.cols() == 2) {
      out[i] = probs(i, 1) >= 0.5 ? 1 : 0;
    } else {
      Eigen::Index best = 0;
      probs.row(i).maxCoeff(&best);
      out[i] = static_cast<int>(best);
    }
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'F', 'L', 'A', 'R', 'E', 'C', 'P', '2'};

void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError("checkpoint: truncated header");
  return v;
}

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError("checkpoint: truncated header");
  return v;
}

void write_widths(std::ostream& out, const MlpShape& s) {
  write_u32(out, static_cast<uint32_t>(s.widths.size()));
  for (int w : s.widths) write_u32(out, static_cast<uint32_t>(w));
}
MlpShape read_widths(std::istream& in) {
  MlpShape s;
  uint32_t n = read_u32(in);
  if (n < 2 || n > 64) throw ParseError("checkpoint: corrupt width list");
  for (uint32_t i = 0; i < n; ++i)
    s.widths.push_back(static_cast<int>(read_u32(in)));
  return s;
}

void write_tensor(std::ostream& out, const Matrix& m) {
  uint64_t rows = m.rows(), cols = m.cols();
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  for (uint64_t i = 0; i < rows; ++i)
    for (uint64_t j = 0; j < cols; ++j) {
      double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

Matrix read_tensor(std::istream& in, Eigen::Index want_rows,
                   Eigen::Index want_cols, const std::string& name) {
  uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in) throw ParseError("checkpoint: truncated at tensor " + name);
  if (static_cast<Eigen::Index>(rows) != want_rows ||
      static_cast<Eigen::Index>(cols) != want_cols)
    throw ParseError("checkpoint: tensor " + name + " is " +
                     std::to_string(rows) + "x" + std::to_string(cols) +
                     ", header promised " + std::to_string(want_rows) + "x" +
                     std::to_string(want_cols));
  Matrix m(rows, cols);
  for (uint64_t i = 0; i < rows; ++i)
    for (uint64_t j = 0; j < cols; ++j) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      if (!in) throw ParseError("checkpoint: truncated at tensor " + name);
      m(i, j) = v;
    }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FlareError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u32(out, static_cast<uint32_t>(p.n_sources()));
  write_u32(out, static_cast<uint32_t>(p.decoders.size()));
  write_u32(out, p.use_translator ? 1 : 0);
  write_u32(out, static_cast<uint32_t>(p.shape.total_dim));
  write_u32(out, static_cast<uint32_t>(p.shape.classes));
  write_u32(out, static_cast<uint32_t>(p.shape.latent_dim));
  write_widths(out, p.shape.translator);
  write_widths(out, p.shape.extractor);
  write_widths(out, p.shape.classifier);
  for (const MlpShape& d : p.shape.decoders) write_widths(out, d);
  if (p.source_weights.size() != static_cast<size_t>(p.n_sources()))
    throw ContractError("checkpoint: fusion weight count != source count");
  for (double w : p.source_weights) write_f64(out, w);
  for_each_tensor(p, [&](const std::string&, const Matrix& m) {
    write_tensor(out, m);
  });
  if (!out) throw FlareError("checkpoint write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ParseError("checkpoint " + path.string() + ": bad magic");
  uint32_t n_sources = read_u32(in);
  uint32_t n_views = read_u32(in);
  uint32_t use_translator = read_u32(in);
  NetworkShape shape;
  shape.total_dim = static_cast<int>(read_u32(in));
  shape.classes = static_cast<int>(read_u32(in));
  shape.latent_dim = static_cast<int>(read_u32(in));
  shape.translator = read_widths(in);
  shape.extractor = read_widths(in);
  shape.classifier = read_widths(in);
  for (uint32_t v = 0; v < n_views; ++v)
    shape.decoders.push_back(read_widths(in));
  std::vector<double> source_weights;
  for (uint32_t e = 0; e < n_sources; ++e)
    source_weights.push_back(read_f64(in));

  ModelParams p;
  p.shape = shape;
  p.use_translator = use_translator != 0;
  p.source_weights = std::move(source_weights);
  auto empty_mlp = [](const MlpShape& s) {
    Mlp net;
    for (size_t l = 0; l + 1 < s.widths.size(); ++l) {
      net.w.push_back(Matrix::Zero(s.widths[l], s.widths[l + 1]));
      net.b.push_back(Matrix::Zero(1, s.widths[l + 1]));
    }
    return net;
  };
  if (p.use_translator)
    for (uint32_t e = 0; e < n_sources; ++e)
      p.translators.push_back(empty_mlp(shape.translator));
  p.extractor = empty_mlp(shape.extractor);
  for (uint32_t e = 0; e < n_sources; ++e)
    p.classifiers.push_back(empty_mlp(shape.classifier));
  for (uint32_t v = 0; v < n_views; ++v)
    p.decoders.push_back(empty_mlp(shape.decoders[v]));

  for_each_tensor(p, [&](const std::string& name, Matrix& m) {
    m = read_tensor(in, m.rows(), m.cols(), name);
  });
  return p;
}

}  // namespace flare
