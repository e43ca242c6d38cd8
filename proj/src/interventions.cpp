#include "interlab/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include "backprop_detail.hpp"
#include "interlab/metrics.hpp"
#include "interlab/rng.hpp"

namespace interlab {

namespace {

// Maps fact-level edit requests to (query_token, new_answer) training items,
// validating them against the corpus.
std::vector<Item> edit_items(const std::vector<EditRequest>& edits,
                             const FactCorpus& corpus) {
  if (edits.empty()) fail(errc::empty_input, "edit list is empty");
  std::vector<Item> items;
  items.reserve(edits.size());
  for (const EditRequest& e : edits) {
    if (e.fact_id < 0 || e.fact_id >= static_cast<int>(corpus.facts.size())) {
      fail(errc::range, "edit references unknown fact " +
                            std::to_string(e.fact_id));
    }
    const Fact& f = corpus.facts[e.fact_id];
    if (e.new_answer_id < 0 || e.new_answer_id >= corpus.answer_count) {
      fail(errc::range, "edit answer out of range");
    }
    if (e.new_answer_id == f.answer_id) {
      fail(errc::range, "edit does not change the answer of fact " +
                            std::to_string(e.fact_id));
    }
    items.emplace_back(f.query_token, e.new_answer_id);
  }
  return items;
}

void check_disjoint(const std::vector<Item>& forget,
                    const std::vector<Item>& retain) {
  std::unordered_set<int> forget_tokens;
  for (const auto& [token, answer] : forget) forget_tokens.insert(token);
  for (const auto& [token, answer] : retain) {
    if (forget_tokens.count(token)) {
      fail(errc::overlap, "forget and retain sets share token " +
                              std::to_string(token));
    }
  }
}

void check_items(const ModelState& model, const std::vector<Item>& items,
                 const char* what) {
  if (items.empty()) {
    fail(errc::empty_input, std::string(what) + " set is empty");
  }
  for (const auto& [token, answer] : items) {
    if (token < 0 || token >= model.vocab()) {
      fail(errc::range, std::string(what) + " token out of range");
    }
    if (answer < 0 || answer >= model.answers()) {
      fail(errc::range, std::string(what) + " answer out of range");
    }
  }
}

}  // namespace

const char* kind_name(InterventionKind k) {
  switch (k) {
    case InterventionKind::edit: return "edit";
    case InterventionKind::unlearn: return "unlearn";
    case InterventionKind::compress: return "compress";
    case InterventionKind::identity: return "identity";
  }
  return "unknown";
}

std::optional<InterventionKind> kind_from_name(std::string_view name) {
  if (name == "edit") return InterventionKind::edit;
  if (name == "unlearn") return InterventionKind::unlearn;
  if (name == "compress") return InterventionKind::compress;
  if (name == "identity") return InterventionKind::identity;
  return std::nullopt;
}

double InterventionSpec::param(const std::string& key, double fallback) const {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

void InterventionSpec::validate() const {
  if (name.empty()) fail(errc::config, "intervention needs a name");
  static const std::map<std::string, InterventionKind> ops = {
      {"ft", InterventionKind::edit},      {"lora", InterventionKind::edit},
      {"ga", InterventionKind::unlearn},   {"gd", InterventionKind::unlearn},
      {"rmu", InterventionKind::unlearn},  {"prune", InterventionKind::compress},
      {"quantize", InterventionKind::compress},
      {"none", InterventionKind::identity}};
  auto it = ops.find(op);
  if (it == ops.end()) {
    fail(errc::config, "unknown operator '" + op + "' in intervention '" +
                           name + "'");
  }
  if (it->second != kind) {
    fail(errc::config, "operator '" + op + "' does not belong to kind '" +
                           std::string(kind_name(kind)) + "'");
  }
  if (gamma_grid.empty()) {
    fail(errc::config, "intervention '" + name + "' needs a gamma grid");
  }
  for (std::size_t i = 0; i < gamma_grid.size(); ++i) {
    if (!std::isfinite(gamma_grid[i])) {
      fail(errc::config, "gamma grid must be finite");
    }
    if (i > 0 && gamma_grid[i] <= gamma_grid[i - 1]) {
      fail(errc::config, "gamma grid must be strictly increasing in '" +
                             name + "'");
    }
  }
  if (std::find(gamma_grid.begin(), gamma_grid.end(), default_gamma) ==
      gamma_grid.end()) {
    fail(errc::config, "default gamma of '" + name +
                           "' must be a grid point");
  }
  if (op == "prune") {
    for (double g : gamma_grid) {
      if (g < 0.0 || g >= 1.0) {
        fail(errc::config, "sparsity grid values must lie in [0, 1)");
      }
    }
  }
  if (op == "quantize") {
    for (double g : gamma_grid) {
      if (g < 2.0 || g != std::floor(g)) {
        fail(errc::config, "bit grid values must be integers >= 2");
      }
    }
  }
  static const std::set<std::string> known_criteria = {
      "edit_success", "edit_generalization", "edit_locality", "unlearning",
      "utility"};
  for (const auto& c : criteria) {
    if (!known_criteria.count(c)) {
      fail(errc::config, "unknown criterion '" + c + "' in '" + name + "'");
    }
  }
  static const std::map<std::string, std::set<std::string>> known_params = {
      {"ft", {"steps"}},
      {"lora", {"steps", "rank", "scaling"}},
      {"ga", {"steps"}},
      {"gd", {"steps", "alpha"}},
      {"rmu", {"steps", "alpha", "c"}},
      {"prune", {"calibration"}},
      {"quantize", {"group"}},
      {"none", {}}};
  for (const auto& [key, value] : params) {
    if (!known_params.at(op).count(key)) {
      fail(errc::config, "unknown parameter '" + key + "' for operator '" +
                             op + "'");
    }
  }
}

// --- Editing ---------------------------------------------------------------

ModelState edit_ft(const ModelState& model,
                   const std::vector<EditRequest>& edits,
                   const FactCorpus& corpus, int steps, double lr,
                   const TrainMask* mask) {
  return sgd_nll(model, edit_items(edits, corpus), steps, lr, mask);
}

ModelState edit_lora(const ModelState& model,
                     const std::vector<EditRequest>& edits,
                     const FactCorpus& corpus, int rank, int steps, double lr,
                     double scaling, std::uint64_t factor_seed) {
  const int d = model.embed_dim();
  const int h = model.hidden_dim();
  const int a = model.answers();
  const int max_rank = std::min(std::min(h, d), std::min(a, h));
  if (rank < 1 || rank > max_rank) {
    fail(errc::rank, "rank " + std::to_string(rank) +
                         " exceeds the smallest adapted dimension " +
                         std::to_string(max_rank));
  }
  if (steps < 0) fail(errc::range, "steps must be non-negative");
  const std::vector<Item> items = edit_items(edits, corpus);

  // First factors seeded random, second factors zero: the adapter starts as
  // an exact no-op.
  Rng rng(derive_seed(factor_seed, "lora-factors"));
  const double sigma = 0.1 / std::sqrt(static_cast<double>(rank));
  Matrix p1(h, rank), q1(rank, d), p2(a, rank), q2(rank, h);
  for (double& x : p1.a) x = sigma * rng.normal();
  for (double& x : p2.a) x = sigma * rng.normal();

  const double merge_scale = scaling / static_cast<double>(rank);
  ModelState eff = model;
  detail::ForwardScratch s;
  detail::GradAcc acc;
  const double w = 1.0 / static_cast<double>(items.size());

  auto rebuild_eff = [&]() {
    for (int r = 0; r < h; ++r) {
      double* dst = eff.w1.row(r);
      const double* src = model.w1.row(r);
      const double* pr = p1.row(r);
      for (int c = 0; c < d; ++c) {
        double delta = 0.0;
        for (int k = 0; k < rank; ++k) delta += pr[k] * q1.at(k, c);
        dst[c] = src[c] + merge_scale * delta;
      }
    }
    for (int r = 0; r < a; ++r) {
      double* dst = eff.w2.row(r);
      const double* src = model.w2.row(r);
      const double* pr = p2.row(r);
      for (int c = 0; c < h; ++c) {
        double delta = 0.0;
        for (int k = 0; k < rank; ++k) delta += pr[k] * q2.at(k, c);
        dst[c] = src[c] + merge_scale * delta;
      }
    }
  };

  for (int step = 0; step < steps; ++step) {
    rebuild_eff();
    acc.reset(eff);
    double loss = 0.0;
    for (const auto& [token, answer] : items) {
      detail::forward_into(eff, token, s);
      loss += w * detail::item_nll(s, answer);
      detail::accumulate_nll_grad(eff, token, answer, w, s, acc);
    }
    if (!std::isfinite(loss)) {
      fail(errc::divergence,
           "adapter training diverged at step " + std::to_string(step));
    }
    // Chain rule through the merge: gP = merge_scale · gW · Qᵀ,
    // gQ = merge_scale · Pᵀ · gW. Factors updated simultaneously from the
    // same gW snapshot.
    Matrix gp1(h, rank), gq1(rank, d), gp2(a, rank), gq2(rank, h);
    for (int r = 0; r < h; ++r) {
      const double* gw = acc.gw1.row(r);
      for (int k = 0; k < rank; ++k) {
        double acc_p = 0.0;
        for (int c = 0; c < d; ++c) acc_p += gw[c] * q1.at(k, c);
        gp1.at(r, k) = merge_scale * acc_p;
      }
    }
    for (int k = 0; k < rank; ++k) {
      for (int c = 0; c < d; ++c) {
        double acc_q = 0.0;
        for (int r = 0; r < h; ++r) acc_q += p1.at(r, k) * acc.gw1.at(r, c);
        gq1.at(k, c) = merge_scale * acc_q;
      }
    }
    for (int r = 0; r < a; ++r) {
      const double* gw = acc.gw2.row(r);
      for (int k = 0; k < rank; ++k) {
        double acc_p = 0.0;
        for (int c = 0; c < h; ++c) acc_p += gw[c] * q2.at(k, c);
        gp2.at(r, k) = merge_scale * acc_p;
      }
    }
    for (int k = 0; k < rank; ++k) {
      for (int c = 0; c < h; ++c) {
        double acc_q = 0.0;
        for (int r = 0; r < a; ++r) acc_q += p2.at(r, k) * acc.gw2.at(r, c);
        gq2.at(k, c) = merge_scale * acc_q;
      }
    }
    for (std::size_t i = 0; i < p1.a.size(); ++i) p1.a[i] -= lr * gp1.a[i];
    for (std::size_t i = 0; i < q1.a.size(); ++i) q1.a[i] -= lr * gq1.a[i];
    for (std::size_t i = 0; i < p2.a.size(); ++i) p2.a[i] -= lr * gp2.a[i];
    for (std::size_t i = 0; i < q2.a.size(); ++i) q2.a[i] -= lr * gq2.a[i];
  }

  rebuild_eff();
  eff.validate();
  return eff;
}

// --- Unlearning ------------------------------------------------------------

namespace {

// Shared GA/GD loop: descends −NLL(forget) + alpha·NLL(retain). Forget items
// whose NLL has reached the ceiling contribute zero gradient (the capped
// loss's exact gradient). alpha == 0 skips the retain term entirely, so GA
// and GD(alpha=0) execute identical arithmetic.
ModelState ascent_descent_loop(const ModelState& model,
                               const std::vector<Item>& forget,
                               const std::vector<Item>& retain, double alpha,
                               int steps, double lr, const TrainMask* mask) {
  if (steps < 0) fail(errc::range, "steps must be non-negative");
  if (alpha < 0.0) fail(errc::range, "alpha must be non-negative");
  ModelState m = model;
  const double ceiling =
      std::log(static_cast<double>(model.answers())) + kGaCeilingMargin;
  detail::ForwardScratch s;
  detail::GradAcc acc;
  const double wf = 1.0 / static_cast<double>(forget.size());
  const double wr =
      retain.empty() ? 0.0 : alpha / static_cast<double>(retain.size());
  for (int step = 0; step < steps; ++step) {
    acc.reset(m);
    double loss = 0.0;
    for (const auto& [token, answer] : forget) {
      detail::forward_into(m, token, s);
      const double nll = detail::item_nll(s, answer);
      if (nll < ceiling) {
        detail::accumulate_nll_grad(m, token, answer, -wf, s, acc);
        loss -= wf * nll;
      } else {
        loss -= wf * ceiling;
      }
    }
    if (alpha != 0.0) {
      for (const auto& [token, answer] : retain) {
        detail::forward_into(m, token, s);
        loss += wr * detail::item_nll(s, answer);
        detail::accumulate_nll_grad(m, token, answer, wr, s, acc);
      }
    }
    if (!std::isfinite(loss)) {
      fail(errc::divergence,
           "unlearning loss became non-finite at step " + std::to_string(step));
    }
    detail::apply_update(m, acc, lr, mask);
  }
  m.validate();
  return m;
}

}  // namespace

ModelState unlearn_ga(const ModelState& model, const std::vector<Item>& forget,
                      int steps, double lr, const TrainMask* mask) {
  check_items(model, forget, "forget");
  return ascent_descent_loop(model, forget, {}, 0.0, steps, lr, mask);
}

ModelState unlearn_gd(const ModelState& model, const std::vector<Item>& forget,
                      const std::vector<Item>& retain, double alpha, int steps,
                      double lr, const TrainMask* mask) {
  check_items(model, forget, "forget");
  check_items(model, retain, "retain");
  check_disjoint(forget, retain);
  return ascent_descent_loop(model, forget, retain, alpha, steps, lr, mask);
}

std::vector<double> rmu_direction(int hidden_dim,
                                  std::uint64_t direction_seed) {
  if (hidden_dim < 1) fail(errc::shape, "hidden_dim must be positive");
  Rng rng(derive_seed(direction_seed, "rmu-direction"));
  std::vector<double> u(hidden_dim);
  double norm = 0.0;
  // Entries uniform in [0,1): relu activations live in the non-negative
  // orthant, so a signed direction would be unreachable.
  for (double& x : u) {
    x = rng.real01();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    u.assign(hidden_dim, 1.0 / std::sqrt(static_cast<double>(hidden_dim)));
    return u;
  }
  for (double& x : u) x /= norm;
  return u;
}

ModelState unlearn_rmu(const ModelState& model, const std::vector<Item>& forget,
                       const std::vector<Item>& retain, double c, double alpha,
                       int steps, double lr, std::uint64_t direction_seed,
                       const TrainMask* mask) {
  check_items(model, forget, "forget");
  check_items(model, retain, "retain");
  check_disjoint(forget, retain);
  if (steps < 0) fail(errc::range, "steps must be non-negative");
  if (alpha < 0.0) fail(errc::range, "alpha must be non-negative");

  const int h = model.hidden_dim();
  const std::vector<double> u = rmu_direction(h, direction_seed);
  std::vector<double> target_f(h);
  for (int r = 0; r < h; ++r) target_f[r] = c * u[r];

  // Retain anchor: the *input* model's activations, computed once.
  std::vector<int> retain_tokens;
  retain_tokens.reserve(retain.size());
  for (const auto& [token, answer] : retain) retain_tokens.push_back(token);
  const Matrix frozen = hidden_activations(model, retain_tokens);

  ModelState m = model;
  detail::ForwardScratch s;
  detail::GradAcc acc;
  const double wf = 1.0 / static_cast<double>(forget.size());
  const double wr = alpha / static_cast<double>(retain.size());
  for (int step = 0; step < steps; ++step) {
    acc.reset(m);
    double loss = 0.0;
    for (const auto& [token, answer] : forget) {
      detail::forward_into(m, token, s);
      double dist = 0.0;
      for (int r = 0; r < h; ++r) {
        const double diff = s.a1[r] - target_f[r];
        dist += diff * diff;
      }
      loss += wf * dist;
      detail::accumulate_activation_grad(m, token, target_f.data(), wf, s, acc);
    }
    if (alpha != 0.0) {
      for (std::size_t i = 0; i < retain.size(); ++i) {
        const int token = retain[i].first;
        const double* anchor = frozen.row(static_cast<int>(i));
        detail::forward_into(m, token, s);
        double dist = 0.0;
        for (int r = 0; r < h; ++r) {
          const double diff = s.a1[r] - anchor[r];
          dist += diff * diff;
        }
        loss += wr * dist;
        detail::accumulate_activation_grad(m, token, anchor, wr, s, acc);
      }
    }
    if (!std::isfinite(loss)) {
      fail(errc::divergence,
           "steering loss became non-finite at step " + std::to_string(step));
    }
    // Only w1/b1 train: the representation layer is perturbed in place.
    detail::apply_update(m, acc, lr, mask, /*train_embedding=*/false,
                         /*train_output_layer=*/false);
  }
  m.validate();
  return m;
}

// --- Compression -----------------------------------------------------------

namespace {

// ℓ2 norms, over the calibration tokens, of each input feature of the two
// linear layers: embeddings for w1, post-relu activations for w2.
void calibration_norms(const ModelState& model,
                       const std::vector<int>& calibration,
                       std::vector<double>& embed_norms,
                       std::vector<double>& hidden_norms) {
  embed_norms.assign(model.embed_dim(), 0.0);
  hidden_norms.assign(model.hidden_dim(), 0.0);
  detail::ForwardScratch s;
  for (int token : calibration) {
    if (token < 0 || token >= model.vocab()) {
      fail(errc::range, "calibration token out of range");
    }
    const double* e = model.embedding.row(token);
    for (int c = 0; c < model.embed_dim(); ++c) {
      embed_norms[c] += e[c] * e[c];
    }
    detail::forward_into(model, token, s);
    for (int r = 0; r < model.hidden_dim(); ++r) {
      hidden_norms[r] += s.a1[r] * s.a1[r];
    }
  }
  for (double& x : embed_norms) x = std::sqrt(x);
  for (double& x : hidden_norms) x = std::sqrt(x);
}

// Zeroes the lowest-scoring fraction s of each row, score = |w|·input_norm.
// Ties break to the lower column index, deterministically.
void prune_matrix(Matrix& w, const std::vector<double>& input_norms, double s,
                  Matrix& mask) {
  mask = Matrix(w.rows, w.cols, 1.0);
  const int k = static_cast<int>(std::llround(s * w.cols));
  if (k == 0) return;
  std::vector<int> order(w.cols);
  std::vector<double> scores(w.cols);
  for (int r = 0; r < w.rows; ++r) {
    double* row = w.row(r);
    for (int c = 0; c < w.cols; ++c) {
      scores[c] = std::abs(row[c]) * input_norms[c];
    }
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[a] != scores[b]) return scores[a] < scores[b];
      return a < b;
    });
    for (int i = 0; i < k; ++i) {
      row[order[i]] = 0.0;
      mask.at(r, order[i]) = 0.0;
    }
  }
}

// Symmetric RTN for one row: groups of g, levels (q/k_levels)·M. The
// (q/k)·M form makes requantization with the same (b, g) bit-exact.
void quantize_row(double* row, int cols, int b, int g,
                  std::vector<double>& scales) {
  const double k_levels = static_cast<double>((1 << (b - 1)) - 1);
  for (int start = 0; start < cols; start += g) {
    const int end = std::min(start + g, cols);
    double m = 0.0;
    for (int c = start; c < end; ++c) m = std::max(m, std::abs(row[c]));
    scales.push_back(m);
    if (m == 0.0) continue;  // all-zero group is already on the grid
    for (int c = start; c < end; ++c) {
      // std::round halves away from zero, the documented tie rule.
      const double q = std::round(row[c] * k_levels / m);
      row[c] = (q / k_levels) * m;
    }
  }
}

}  // namespace

std::pair<ModelState, CompressionState> compress_prune(
    const ModelState& model, double s, const std::vector<int>& calibration) {
  if (!(s >= 0.0 && s < 1.0)) {
    fail(errc::range, "sparsity must lie in [0, 1)");
  }
  if (calibration.empty()) {
    fail(errc::empty_input, "pruning needs a calibration set");
  }
  CompressionState cs;
  cs.method = CompressionMethod::prune;
  cs.sparsity = s;
  cs.calibration = calibration;
  cs.pre_compression_backup = std::make_shared<const ModelState>(model);

  std::vector<double> embed_norms, hidden_norms;
  calibration_norms(model, calibration, embed_norms, hidden_norms);

  ModelState out = model;
  prune_matrix(out.w1, embed_norms, s, cs.w1_mask);
  prune_matrix(out.w2, hidden_norms, s, cs.w2_mask);
  return {std::move(out), std::move(cs)};
}

std::pair<ModelState, CompressionState> compress_quantize(
    const ModelState& model, int b, int g) {
  if (b < 2 || b > 24) fail(errc::range, "bits must lie in [2, 24]");
  if (g < 1) fail(errc::range, "group size must be positive");
  CompressionState cs;
  cs.method = CompressionMethod::quantize;
  cs.bits = b;
  cs.group_size = g;
  cs.pre_compression_backup = std::make_shared<const ModelState>(model);

  ModelState out = model;
  for (int r = 0; r < out.w1.rows; ++r) {
    quantize_row(out.w1.row(r), out.w1.cols, b, g, cs.w1_scales);
  }
  for (int r = 0; r < out.w2.rows; ++r) {
    quantize_row(out.w2.row(r), out.w2.cols, b, g, cs.w2_scales);
  }
  return {std::move(out), std::move(cs)};
}

std::pair<ModelState, CompressionState> recompress(
    const ModelState& dense, const CompressionState& like) {
  if (like.method == CompressionMethod::prune) {
    return compress_prune(dense, like.sparsity, like.calibration);
  }
  return compress_quantize(dense, like.bits, like.group_size);
}

AppliedIntervention reenter_compressed(
    const AppliedIntervention& state,
    const std::function<ModelState(const ModelState&)>& inner,
    const std::string& inner_name) {
  if (!state.compression_state ||
      !state.compression_state->pre_compression_backup) {
    fail(errc::missing_backup,
         "re-entry requires a compression state with a dense backup");
  }
  const ModelState& dense = *state.compression_state->pre_compression_backup;
  ModelState edited = inner(dense);
  auto [recompressed, cs] = recompress(edited, *state.compression_state);

  AppliedIntervention result;
  result.spec = state.spec;
  result.gamma = state.gamma;
  result.resulting_model = std::move(recompressed);
  result.compression_state = std::move(cs);
  result.provenance = state.provenance;
  result.provenance.push_back(inner_name);
  return result;
}

}  // namespace interlab
