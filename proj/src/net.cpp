#include "interlab/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "backprop_detail.hpp"
#include "interlab/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "model dump format assumes a little-endian host");

namespace interlab {

namespace detail {

void forward_into(const ModelState& m, int token, ForwardScratch& s) {
  s.resize(m.hidden_dim(), m.answers());
  const double* e = m.embedding.row(token);
  matvec(m.w1, e, s.z1.data());
  for (int r = 0; r < m.hidden_dim(); ++r) {
    s.z1[r] += m.b1[r];
    s.a1[r] = s.z1[r] > 0.0 ? s.z1[r] : 0.0;
  }
  matvec(m.w2, s.a1.data(), s.z2.data());
  double zmax = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < m.answers(); ++r) {
    s.z2[r] += m.b2[r];
    zmax = std::max(zmax, s.z2[r]);
  }
  double denom = 0.0;
  for (int r = 0; r < m.answers(); ++r) {
    s.p[r] = std::exp(s.z2[r] - zmax);
    denom += s.p[r];
  }
  for (int r = 0; r < m.answers(); ++r) s.p[r] /= denom;
}

double item_nll(const ForwardScratch& s, int answer) {
  return -std::log(s.p[answer]);
}

void accumulate_nll_grad(const ModelState& m, int token, int answer,
                         double weight, const ForwardScratch& s,
                         GradAcc& acc) {
  const int h = m.hidden_dim();
  const int a = m.answers();
  const double* e = m.embedding.row(token);

  // delta2 = p − onehot(answer), scaled by the item weight.
  std::vector<double> delta2(a);
  for (int r = 0; r < a; ++r) {
    delta2[r] = weight * (s.p[r] - (r == answer ? 1.0 : 0.0));
  }
  for (int r = 0; r < a; ++r) {
    double* gw = acc.gw2.row(r);
    const double d2 = delta2[r];
    for (int c = 0; c < h; ++c) gw[c] += d2 * s.a1[c];
    acc.gb2[r] += d2;
  }

  // delta1 = (w2ᵀ delta2) ⊙ relu'(z1).
  std::vector<double> delta1(h, 0.0);
  for (int r = 0; r < a; ++r) {
    const double* w = m.w2.row(r);
    const double d2 = delta2[r];
    for (int c = 0; c < h; ++c) delta1[c] += w[c] * d2;
  }
  for (int c = 0; c < h; ++c) {
    if (s.z1[c] <= 0.0) delta1[c] = 0.0;
  }
  const int d = m.embed_dim();
  for (int r = 0; r < h; ++r) {
    const double d1 = delta1[r];
    if (d1 == 0.0) continue;
    double* gw = acc.gw1.row(r);
    for (int c = 0; c < d; ++c) gw[c] += d1 * e[c];
    acc.gb1[r] += d1;
  }

  // gE[token] += w1ᵀ delta1.
  auto& ge = acc.gembed[token];
  if (ge.empty()) ge.assign(d, 0.0);
  for (int r = 0; r < h; ++r) {
    const double d1 = delta1[r];
    if (d1 == 0.0) continue;
    const double* w = m.w1.row(r);
    for (int c = 0; c < d; ++c) ge[c] += d1 * w[c];
  }
}

void accumulate_activation_grad(const ModelState& m, int token,
                                const double* target, double weight,
                                const ForwardScratch& s, GradAcc& acc) {
  const int h = m.hidden_dim();
  const int d = m.embed_dim();
  const double* e = m.embedding.row(token);
  // L = weight · ‖a1 − target‖²  ⇒  dL/da1 = 2·weight·(a1 − target).
  for (int r = 0; r < h; ++r) {
    if (s.z1[r] <= 0.0) continue;  // relu gate
    const double d1 = 2.0 * weight * (s.a1[r] - target[r]);
    if (d1 == 0.0) continue;
    double* gw = acc.gw1.row(r);
    for (int c = 0; c < d; ++c) gw[c] += d1 * e[c];
    acc.gb1[r] += d1;
  }
}

void apply_update(ModelState& m, const GradAcc& acc, double lr,
                  const TrainMask* mask, bool train_embedding,
                  bool train_output_layer) {
  const Matrix* m1 = mask ? mask->w1_mask : nullptr;
  for (std::size_t i = 0; i < m.w1.a.size(); ++i) {
    if (m1 && m1->a[i] == 0.0) continue;
    m.w1.a[i] -= lr * acc.gw1.a[i];
  }
  for (std::size_t i = 0; i < m.b1.size(); ++i) m.b1[i] -= lr * acc.gb1[i];
  if (train_output_layer) {
    const Matrix* m2 = mask ? mask->w2_mask : nullptr;
    for (std::size_t i = 0; i < m.w2.a.size(); ++i) {
      if (m2 && m2->a[i] == 0.0) continue;
      m.w2.a[i] -= lr * acc.gw2.a[i];
    }
    for (std::size_t i = 0; i < m.b2.size(); ++i) m.b2[i] -= lr * acc.gb2[i];
  }
  if (train_embedding) {
    for (const auto& [token, ge] : acc.gembed) {
      double* row = m.embedding.row(token);
      for (std::size_t c = 0; c < ge.size(); ++c) row[c] -= lr * ge[c];
    }
  }
}

}  // namespace detail

void ModelState::validate() const {
  if (w1.cols != embedding.cols || static_cast<int>(b1.size()) != w1.rows ||
      w2.cols != w1.rows || static_cast<int>(b2.size()) != w2.rows) {
    fail(errc::shape, "model dimensions are inconsistent");
  }
  if (!embedding.all_finite() || !w1.all_finite() || !w2.all_finite() ||
      !all_finite(b1) || !all_finite(b2)) {
    fail(errc::divergence, "model contains non-finite parameters");
  }
}

bool ModelState::bit_equal(const ModelState& o) const {
  return embedding.same_shape(o.embedding) && w1.same_shape(o.w1) &&
         w2.same_shape(o.w2) && embedding.a == o.embedding.a &&
         w1.a == o.w1.a && b1 == o.b1 && w2.a == o.w2.a && b2 == o.b2;
}

Gradient zero_gradient_like(const ModelState& model) {
  Gradient g;
  g.embedding = Matrix(model.embedding.rows, model.embedding.cols);
  g.w1 = Matrix(model.w1.rows, model.w1.cols);
  g.b1.assign(model.b1.size(), 0.0);
  g.w2 = Matrix(model.w2.rows, model.w2.cols);
  g.b2.assign(model.b2.size(), 0.0);
  return g;
}

ModelState init_model(const FactCorpus& corpus, const NetInit& init) {
  corpus.validate();
  const int v = corpus.vocab_size;
  const int d = init.embed_dim;
  const int h = init.hidden_dim;
  const int a = corpus.answer_count;
  if (d < 1 || h < 1) fail(errc::shape, "embed/hidden dims must be positive");

  ModelState m;
  m.embedding = Matrix(v, d);
  m.w1 = Matrix(h, d);
  m.b1.assign(h, 0.0);
  m.w2 = Matrix(a, h);
  m.b2.assign(a, 0.0);

  // The forget cluster direction (unit vector in embedding space).
  Rng dir_rng(derive_seed(init.seed, "forget-direction"));
  std::vector<double> mu(d);
  double norm = 0.0;
  for (int c = 0; c < d; ++c) {
    mu[c] = dir_rng.normal();
    norm += mu[c] * mu[c];
  }
  norm = std::sqrt(norm);
  for (int c = 0; c < d; ++c) mu[c] /= norm;

  Rng emb_rng(derive_seed(init.seed, "embedding"));
  const double emb_sigma = init.embed_scale / std::sqrt(static_cast<double>(d));
  for (int r = 0; r < v; ++r) {
    double* row = m.embedding.row(r);
    for (int c = 0; c < d; ++c) row[c] = emb_sigma * emb_rng.normal();
  }

  Rng w_rng(derive_seed(init.seed, "weights"));
  const double w1_sigma = std::sqrt(2.0 / d);
  for (double& x : m.w1.a) x = w1_sigma * w_rng.normal();
  const double w2_sigma = std::sqrt(2.0 / h);
  for (double& x : m.w2.a) x = w2_sigma * w_rng.normal();

  // Forget facts form an embedding cluster: queries shifted along a shared
  // direction, mirroring the semantic coherence of a real forget corpus.
  const double offset = init.forget_cluster_offset * init.embed_scale;
  for (int idx : corpus.split(Split::forget)) {
    double* row = m.embedding.row(corpus.facts[idx].query_token);
    for (int c = 0; c < d; ++c) row[c] += offset * mu[c];
  }

  // Paraphrases start near their query (same fact, alternate phrasing).
  Rng para_rng(derive_seed(init.seed, "paraphrase"));
  for (const Fact& f : corpus.facts) {
    const double* q = m.embedding.row(f.query_token);
    for (int t : f.paraphrase_tokens) {
      double* row = m.embedding.row(t);
      for (int c = 0; c < d; ++c) {
        row[c] = q[c] + init.paraphrase_noise * emb_sigma * para_rng.normal();
      }
    }
  }
  return m;
}

std::vector<double> forward(const ModelState& model, int token) {
  if (token < 0 || token >= model.vocab()) {
    fail(errc::range, "token out of range: " + std::to_string(token));
  }
  detail::ForwardScratch s;
  detail::forward_into(model, token, s);
  return s.p;
}

int predict(const ModelState& model, int token) {
  std::vector<double> p = forward(model, token);
  int best = 0;
  for (int r = 1; r < static_cast<int>(p.size()); ++r) {
    if (p[r] > p[best]) best = r;  // strict: ties keep the lowest id
  }
  return best;
}

double mean_nll(const ModelState& model, const std::vector<Item>& batch) {
  if (batch.empty()) fail(errc::empty_input, "mean_nll needs a non-empty batch");
  detail::ForwardScratch s;
  double total = 0.0;
  for (const auto& [token, answer] : batch) {
    if (token < 0 || token >= model.vocab()) {
      fail(errc::range, "token out of range: " + std::to_string(token));
    }
    if (answer < 0 || answer >= model.answers()) {
      fail(errc::range, "answer out of range: " + std::to_string(answer));
    }
    detail::forward_into(model, token, s);
    total += detail::item_nll(s, answer);
  }
  return total / static_cast<double>(batch.size());
}

Gradient grad_nll(const ModelState& model, const std::vector<Item>& batch) {
  if (batch.empty()) {
    fail(errc::empty_input, "grad_nll needs a non-empty batch");
  }
  detail::ForwardScratch s;
  detail::GradAcc acc;
  acc.reset(model);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& [token, answer] : batch) {
    if (token < 0 || token >= model.vocab()) {
      fail(errc::range, "token out of range: " + std::to_string(token));
    }
    if (answer < 0 || answer >= model.answers()) {
      fail(errc::range, "answer out of range: " + std::to_string(answer));
    }
    detail::forward_into(model, token, s);
    detail::accumulate_nll_grad(model, token, answer, w, s, acc);
  }
  Gradient g = zero_gradient_like(model);
  g.w1 = acc.gw1;
  g.b1 = acc.gb1;
  g.w2 = acc.gw2;
  g.b2 = acc.gb2;
  for (const auto& [token, ge] : acc.gembed) {
    double* row = g.embedding.row(token);
    std::copy(ge.begin(), ge.end(), row);
  }
  return g;
}

double accuracy_on(const ModelState& model, const std::vector<Item>& items) {
  if (items.empty()) {
    fail(errc::empty_input, "accuracy_on needs a non-empty item set");
  }
  long hits = 0;
  for (const auto& [token, answer] : items) {
    if (predict(model, token) == answer) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

Matrix hidden_activations(const ModelState& model,
                          const std::vector<int>& tokens) {
  Matrix out(static_cast<int>(tokens.size()), model.hidden_dim());
  detail::ForwardScratch s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= model.vocab()) {
      fail(errc::range, "token out of range: " + std::to_string(tokens[i]));
    }
    detail::forward_into(model, tokens[i], s);
    std::copy(s.a1.begin(), s.a1.end(), out.row(static_cast<int>(i)));
  }
  return out;
}

ModelState sgd_nll(const ModelState& model, const std::vector<Item>& items,
                   int steps, double lr, const TrainMask* mask) {
  if (items.empty()) fail(errc::empty_input, "sgd_nll needs items");
  if (steps < 0) fail(errc::range, "steps must be non-negative");
  ModelState m = model;
  detail::ForwardScratch s;
  detail::GradAcc acc;
  const double w = 1.0 / static_cast<double>(items.size());
  for (int step = 0; step < steps; ++step) {
    acc.reset(m);
    double loss = 0.0;
    for (const auto& [token, answer] : items) {
      detail::forward_into(m, token, s);
      loss += w * detail::item_nll(s, answer);
      detail::accumulate_nll_grad(m, token, answer, w, s, acc);
    }
    if (!std::isfinite(loss)) {
      fail(errc::divergence,
           "loss became non-finite at step " + std::to_string(step));
    }
    detail::apply_update(m, acc, lr, mask);
  }
  m.validate();
  return m;
}

TrainResult init_and_train_base(const FactCorpus& corpus,
                                const TrainConfig& cfg, const NetInit& init) {
  if (cfg.learning_rate <= 0.0) fail(errc::range, "learning_rate must be > 0");
  if (cfg.steps < 0) fail(errc::range, "steps must be non-negative");
  if (cfg.batch_size < 1) fail(errc::range, "batch_size must be positive");

  TrainResult result;
  result.model = init_model(corpus, init);
  ModelState& m = result.model;

  const std::vector<Item> items = corpus.all_items();
  Rng rng(derive_seed(cfg.seed, "base-train"));
  detail::ForwardScratch s;
  detail::GradAcc acc;
  const double w = 1.0 / static_cast<double>(cfg.batch_size);
  for (int step = 0; step < cfg.steps; ++step) {
    acc.reset(m);
    double loss = 0.0;
    for (int k = 0; k < cfg.batch_size; ++k) {
      const auto& [token, answer] = items[rng.below(items.size())];
      detail::forward_into(m, token, s);
      loss += w * detail::item_nll(s, answer);
      detail::accumulate_nll_grad(m, token, answer, w, s, acc);
    }
    if (!std::isfinite(loss)) {
      fail(errc::divergence,
           "base training diverged at step " + std::to_string(step));
    }
    detail::apply_update(m, acc, cfg.learning_rate, nullptr);
  }
  m.validate();
  if (!corpus.split(Split::train).empty()) {
    result.train_accuracy =
        accuracy_on(m, corpus.split_all_items(Split::train));
  }
  return result;
}

namespace {

constexpr char kModelMagic[8] = {'I', 'L', 'M', 'D', 'L', '0', '0', '1'};

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, std::vector<double>& v) {
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

void save_model(const ModelState& model, const std::string& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io, "cannot open for writing: " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  const std::int32_t shape[4] = {model.vocab(), model.embed_dim(),
                                 model.hidden_dim(), model.answers()};
  out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
  write_doubles(out, model.embedding.a);
  write_doubles(out, model.w1.a);
  write_doubles(out, model.b1);
  write_doubles(out, model.w2.a);
  write_doubles(out, model.b2);
  if (!out.flush()) fail(errc::io, "model write failed: " + path);
}

ModelState load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io, "cannot open model file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    fail(errc::io, "not a model dump: " + path);
  }
  std::int32_t shape[4];
  in.read(reinterpret_cast<char*>(shape), sizeof(shape));
  if (!in || shape[0] < 1 || shape[1] < 1 || shape[2] < 1 || shape[3] < 1) {
    fail(errc::io, "model dump has invalid shape header");
  }
  ModelState m;
  m.embedding = Matrix(shape[0], shape[1]);
  m.w1 = Matrix(shape[2], shape[1]);
  m.b1.assign(shape[2], 0.0);
  m.w2 = Matrix(shape[3], shape[2]);
  m.b2.assign(shape[3], 0.0);
  read_doubles(in, m.embedding.a);
  read_doubles(in, m.w1.a);
  read_doubles(in, m.b1);
  read_doubles(in, m.w2.a);
  read_doubles(in, m.b2);
  if (!in) fail(errc::io, "model dump truncated: " + path);
  m.validate();
  return m;
}

}  // namespace interlab
