#include "interlab/composability.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "interlab/rng.hpp"

namespace interlab {

const char* order_name(Order o) {
  return o == Order::i_then_j ? "i_then_j" : "j_then_i";
}

std::optional<Order> order_from_name(std::string_view name) {
  if (name == "i_then_j") return Order::i_then_j;
  if (name == "j_then_i") return Order::j_then_i;
  return std::nullopt;
}

// --- Metric mathematics ------------------------------------------------------

namespace {

// Matched, integrable grids: equal length ≥ 2, identical strictly increasing
// gamma_normalized sequences.
void check_matched(const CriterionCurve& ij, const CriterionCurve& ji) {
  if (ij.points.size() != ji.points.size()) {
    fail(errc::grid_mismatch, "curve grids have different lengths");
  }
  if (ij.points.size() < 2) {
    fail(errc::grid_mismatch, "integral metrics need at least 2 grid points");
  }
  for (std::size_t i = 0; i < ij.points.size(); ++i) {
    if (ij.points[i].gamma_normalized != ji.points[i].gamma_normalized) {
      fail(errc::grid_mismatch, "curve grids are not aligned");
    }
    if (i > 0 && ij.points[i].gamma_normalized <=
                     ij.points[i - 1].gamma_normalized) {
      fail(errc::grid_mismatch, "gamma grid must be strictly increasing");
    }
  }
}

// Trapezoid over the curves' shared normalized span of f(κ_ij, κ_ji),
// divided by the span (the bounded-sweep renormalization; the span is 1 for
// full curves).
template <class F>
double trapezoid_mean(const CriterionCurve& ij, const CriterionCurve& ji,
                      F&& f) {
  check_matched(ij, ji);
  double integral = 0.0;
  for (std::size_t i = 1; i < ij.points.size(); ++i) {
    const double left = f(ij.points[i - 1].kappa, ji.points[i - 1].kappa);
    const double right = f(ij.points[i].kappa, ji.points[i].kappa);
    const double width =
        ij.points[i].gamma_normalized - ij.points[i - 1].gamma_normalized;
    integral += 0.5 * (left + right) * width;
  }
  const double span = ij.points.back().gamma_normalized -
                      ij.points.front().gamma_normalized;
  return integral / span;
}

}  // namespace

double order_free_error(const CriterionCurve& ij, const CriterionCurve& ji) {
  return 1.0 - trapezoid_mean(
                   ij, ji, [](double a, double b) { return std::min(a, b); });
}

double order_sensitivity(const CriterionCurve& ij, const CriterionCurve& ji) {
  return trapezoid_mean(ij, ji,
                        [](double a, double b) { return std::abs(a - b); });
}

std::pair<double, double> point_measures(double kappa_ij, double kappa_ji) {
  if (!(kappa_ij >= 0.0 && kappa_ij <= 1.0 && kappa_ji >= 0.0 &&
        kappa_ji <= 1.0)) {
    fail(errc::range, "criterion values must lie in [0, 1]");
  }
  return {1.0 - std::min(kappa_ij, kappa_ji), std::abs(kappa_ij - kappa_ji)};
}

CurvePair apply_decay_bound(const CurvePair& curves, const CurvePair& guard,
                            double floor_value) {
  const std::size_t n = curves.ij.points.size();
  if (curves.ji.points.size() != n || guard.ij.points.size() != n ||
      guard.ji.points.size() != n) {
    fail(errc::grid_mismatch, "guard curves must share the gamma grid");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (guard.ij.points[i].gamma_normalized !=
            curves.ij.points[i].gamma_normalized ||
        guard.ji.points[i].gamma_normalized !=
            curves.ji.points[i].gamma_normalized) {
      fail(errc::grid_mismatch, "guard curves must share the gamma grid");
    }
  }
  CurvePair out;
  out.ij.criterion_id = curves.ij.criterion_id;
  out.ij.order = curves.ij.order;
  out.ji.criterion_id = curves.ji.criterion_id;
  out.ji.order = curves.ji.order;
  for (std::size_t i = 0; i < n; ++i) {
    if (guard.ij.points[i].kappa >= floor_value &&
        guard.ji.points[i].kappa >= floor_value) {
      out.ij.points.push_back(curves.ij.points[i]);
      out.ji.points.push_back(curves.ji.points[i]);
    }
  }
  return out;
}

// --- Curve construction ------------------------------------------------------

InterventionSpec identity_spec() {
  InterventionSpec spec;
  spec.name = "none";
  spec.kind = InterventionKind::identity;
  spec.op = "none";
  spec.gamma_grid = {0.0};
  spec.default_gamma = 0.0;
  return spec;
}

int effective_repetitions(const InterventionSpec& phi_i,
                          const InterventionSpec& phi_j, int repetitions) {
  const bool has_edit = phi_i.kind == InterventionKind::edit ||
                        phi_j.kind == InterventionKind::edit;
  return has_edit ? repetitions : 1;
}

std::vector<std::string> pair_criteria(const InterventionSpec& phi_i,
                                       const InterventionSpec& phi_j) {
  std::vector<std::string> criteria = phi_i.criteria;
  for (const auto& c : phi_j.criteria) {
    if (std::find(criteria.begin(), criteria.end(), c) == criteria.end()) {
      criteria.push_back(c);
    }
  }
  return criteria;
}

namespace {

// A model moving through a composition chain, with its live compression
// state (if any) and the history of applied interventions.
struct ChainState {
  ModelState model;
  std::optional<CompressionState> comp;
  std::vector<std::string> provenance;
};

// Seeded calibration tokens for activation-aware pruning: `count` distinct
// train-split query tokens (all of them when the split is smaller). Shared
// by every cell of a run.
std::vector<int> calibration_tokens(const FactCorpus& corpus,
                                    std::uint64_t master_seed, int count) {
  std::vector<int> tokens;
  for (int idx : corpus.split(Split::train)) {
    tokens.push_back(corpus.facts[idx].query_token);
  }
  if (tokens.empty()) {
    fail(errc::empty_input, "pruning calibration needs a train split");
  }
  Rng rng(derive_seed(master_seed, "prune-calibration"));
  rng.shuffle(tokens);
  if (static_cast<int>(tokens.size()) > count) tokens.resize(count);
  return tokens;
}

// Applies one intervention at `gamma` to the chain. Operator seeds derive
// from (master seed, stream label, repetition) and never from the position
// in the chain, so composing with the identity is order-invariant bit for
// bit. An edit/unlearn step on a compressed model either retrains the dense
// weights and re-applies the same compression afterwards (default), or
// respects the prune mask when masked_compressed_training is set.
void apply_intervention(const SweepContext& ctx, ChainState& chain,
                        const InterventionSpec& spec, double gamma,
                        int repetition) {
  const FactCorpus& corpus = *ctx.corpus;
  chain.provenance.push_back(spec.name);

  if (spec.op == "none") return;

  if (spec.kind == InterventionKind::compress) {
    if (spec.op == "prune") {
      auto calibration = calibration_tokens(
          corpus, ctx.master_seed,
          static_cast<int>(spec.param("calibration", 128)));
      auto [model, cs] = compress_prune(chain.model, gamma, calibration);
      chain.model = std::move(model);
      chain.comp = std::move(cs);
    } else {
      auto [model, cs] = compress_quantize(
          chain.model, static_cast<int>(gamma),
          static_cast<int>(spec.param("group", 64)));
      chain.model = std::move(model);
      chain.comp = std::move(cs);
    }
    return;
  }

  // Training operators. gamma is the learning rate.
  const bool masked = ctx.masked_compressed_training && chain.comp &&
                      chain.comp->method == CompressionMethod::prune;
  TrainMask mask;
  if (masked) {
    mask.w1_mask = &chain.comp->w1_mask;
    mask.w2_mask = &chain.comp->w2_mask;
  }
  const TrainMask* mask_ptr = masked ? &mask : nullptr;

  ModelState trained;
  if (spec.kind == InterventionKind::edit) {
    const auto& edits = (*ctx.edit_batches)[repetition];
    if (spec.op == "ft") {
      trained = edit_ft(chain.model, edits, corpus,
                        static_cast<int>(spec.param("steps", 25)), gamma,
                        mask_ptr);
    } else {
      trained = edit_lora(chain.model, edits, corpus,
                          static_cast<int>(spec.param("rank", 8)),
                          static_cast<int>(spec.param("steps", 25)), gamma,
                          spec.param("scaling", 32.0),
                          derive_seed(ctx.master_seed, "lora-init",
                                      static_cast<std::uint64_t>(repetition)));
      // LoRA merges a dense delta; in masked mode the delta respects the
      // prune mask so stored zeros survive.
      if (masked) {
        for (std::size_t i = 0; i < trained.w1.a.size(); ++i) {
          if (chain.comp->w1_mask.a[i] == 0.0) trained.w1.a[i] = 0.0;
        }
        for (std::size_t i = 0; i < trained.w2.a.size(); ++i) {
          if (chain.comp->w2_mask.a[i] == 0.0) trained.w2.a[i] = 0.0;
        }
      }
    }
  } else {  // unlearn
    const auto forget = corpus.split_query_items(Split::forget);
    const auto retain = corpus.split_query_items(Split::retain);
    if (spec.op == "ga") {
      trained = unlearn_ga(chain.model, forget,
                           static_cast<int>(spec.param("steps", 200)), gamma,
                           mask_ptr);
    } else if (spec.op == "gd") {
      trained = unlearn_gd(chain.model, forget, retain,
                           spec.param("alpha", 40.0),
                           static_cast<int>(spec.param("steps", 200)), gamma,
                           mask_ptr);
    } else {
      trained = unlearn_rmu(chain.model, forget, retain,
                            spec.param("c", 10.0), spec.param("alpha", 1000.0),
                            static_cast<int>(spec.param("steps", 200)), gamma,
                            derive_seed(ctx.master_seed, "rmu-direction"),
                            mask_ptr);
    }
  }

  if (chain.comp && !masked) {
    // Decompress–recompress protocol: the dense retrain happened on the
    // compressed weights; re-apply the identical compression.
    auto [model, cs] = recompress(trained, *chain.comp);
    chain.model = std::move(model);
    chain.comp = std::move(cs);
  } else {
    chain.model = std::move(trained);
  }
}

}  // namespace

CellResult run_cell(const SweepContext& ctx, const InterventionSpec& phi_i,
                    const InterventionSpec& phi_j, Order order, double gamma,
                    int repetition) {
  if (!ctx.corpus || !ctx.base || !ctx.edit_batches) {
    fail(errc::config, "sweep context is incomplete");
  }
  const bool needs_edits = phi_i.kind == InterventionKind::edit ||
                           phi_j.kind == InterventionKind::edit;
  if (needs_edits &&
      repetition >= static_cast<int>(ctx.edit_batches->size())) {
    fail(errc::range, "repetition exceeds the sampled edit batches");
  }

  ChainState chain{*ctx.base, std::nullopt, {}};
  if (order == Order::i_then_j) {
    apply_intervention(ctx, chain, phi_i, gamma, repetition);
    apply_intervention(ctx, chain, phi_j, phi_j.default_gamma, repetition);
  } else {
    apply_intervention(ctx, chain, phi_j, phi_j.default_gamma, repetition);
    apply_intervention(ctx, chain, phi_i, gamma, repetition);
  }

  CellResult result;
  const auto criteria = pair_criteria(phi_i, phi_j);
  std::optional<EditEvaluation> edit_eval;
  for (const auto& criterion : criteria) {
    if (criterion == kEditSuccess || criterion == kEditGeneralization ||
        criterion == kEditLocality) {
      if (!edit_eval) {
        edit_eval = evaluate_editing(
            chain.model, (*ctx.edit_batches)[repetition], *ctx.corpus,
            ctx.locality_sample,
            derive_seed(ctx.master_seed, "locality",
                        static_cast<std::uint64_t>(repetition)));
      }
      if (criterion == kEditSuccess) {
        result.criteria[criterion] = edit_eval->success;
      } else if (criterion == kEditGeneralization) {
        result.criteria[criterion] = edit_eval->generalization;
      } else {
        result.criteria[criterion] = edit_eval->locality;
      }
    } else if (criterion == kUnlearning) {
      result.criteria[criterion] =
          unlearning_criterion(chain.model,
                               ctx.corpus->split_query_items(Split::forget),
                               ctx.corpus->answer_count)
              .value;
    } else if (criterion == kUtility) {
      result.criteria[criterion] =
          utility_criterion(
              chain.model,
              ctx.corpus->split_query_items(Split::utility_holdout))
              .value;
    } else {
      fail(errc::config, "unknown criterion '" + criterion + "'");
    }
  }
  result.sparsity = sparsity_ratio(chain.model);
  result.avg_bits = average_bits(chain.comp);
  return result;
}

std::map<std::string, CurvePair> build_curves(const SweepContext& ctx,
                                              const InterventionSpec& phi_i,
                                              const InterventionSpec& phi_j,
                                              int repetitions) {
  if (repetitions < 1) fail(errc::range, "repetitions must be >= 1");
  const auto& grid = phi_i.gamma_grid;
  if (grid.empty()) fail(errc::config, "swept intervention has no gamma grid");

  const int reps = effective_repetitions(phi_i, phi_j, repetitions);
  const auto criteria = pair_criteria(phi_i, phi_j);
  const double lo = grid.front();
  const double hi = grid.back();

  std::map<std::string, CurvePair> curves;
  for (const auto& c : criteria) {
    CurvePair pair;
    pair.ij.criterion_id = c;
    pair.ij.order = Order::i_then_j;
    pair.ji.criterion_id = c;
    pair.ji.order = Order::j_then_i;
    curves.emplace(c, std::move(pair));
  }

  for (double gamma : grid) {
    const double gn = hi > lo ? (gamma - lo) / (hi - lo) : 0.0;
    for (Order order : {Order::i_then_j, Order::j_then_i}) {
      std::map<std::string, double> sums;
      for (int rep = 0; rep < reps; ++rep) {
        CellResult cell = run_cell(ctx, phi_i, phi_j, order, gamma, rep);
        for (const auto& [criterion, value] : cell.criteria) {
          sums[criterion] += value;
        }
      }
      for (const auto& c : criteria) {
        CurvePoint point{gamma, gn, sums[c] / reps};
        auto& pair = curves.at(c);
        (order == Order::i_then_j ? pair.ij : pair.ji)
            .points.push_back(point);
      }
    }
  }
  return curves;
}

// --- Win counting ------------------------------------------------------------

WinTable win_table(const std::vector<ComposabilityReport>& reports,
                   const std::map<std::string, std::string>& grouping) {
  // Validate group sizes: comparisons need at least two contenders.
  std::map<std::string, std::set<std::string>> members;
  for (const auto& [method, category] : grouping) {
    members[category].insert(method);
  }
  for (const auto& [category, methods] : members) {
    if (methods.size() < 2) {
      fail(errc::empty_input, "category '" + category +
                                  "' needs at least 2 contenders");
    }
  }

  // Context: opponent × criterion × metric, within one category. Each
  // contender contributes its error value; the strict minimum wins.
  struct ContextKey {
    std::string category, opponent, criterion, metric;
    bool operator<(const ContextKey& o) const {
      return std::tie(category, opponent, criterion, metric) <
             std::tie(o.category, o.opponent, o.criterion, o.metric);
    }
  };
  std::map<ContextKey, std::vector<std::pair<std::string, double>>> contexts;

  auto add_entry = [&](const std::string& method, const std::string& opponent,
                       const CriterionComposability& crit) {
    auto it = grouping.find(method);
    if (it == grouping.end()) return;  // not a contender
    const std::string& category = it->second;
    contexts[{category, opponent, crit.criterion_id, "point_ofe"}]
        .emplace_back(method, crit.point_ofe);
    contexts[{category, opponent, crit.criterion_id, "point_os"}]
        .emplace_back(method, crit.point_os);
    if (crit.order_free_error) {
      contexts[{category, opponent, crit.criterion_id, "ofe"}]
          .emplace_back(method, *crit.order_free_error);
    }
    if (crit.order_sensitivity) {
      contexts[{category, opponent, crit.criterion_id, "os"}]
          .emplace_back(method, *crit.order_sensitivity);
    }
  };

  for (const auto& report : reports) {
    for (const auto& crit : report.criteria) {
      add_entry(report.intervention_i, report.intervention_j, crit);
      add_entry(report.intervention_j, report.intervention_i, crit);
    }
  }

  std::map<std::pair<std::string, std::string>, std::map<std::string, WinTable::Row>>
      rows;  // (category, method) → metric → row
  auto row_of = [&](const std::string& category, const std::string& method,
                    const std::string& metric) -> WinTable::Row& {
    auto& by_metric = rows[{category, method}];
    auto it = by_metric.find(metric);
    if (it == by_metric.end()) {
      it = by_metric.emplace(metric,
                             WinTable::Row{category, method, metric, 0, 0})
               .first;
    }
    return it->second;
  };

  for (const auto& [key, entries] : contexts) {
    if (entries.size() < 2) continue;  // nothing to compare against
    std::size_t best = 0;
    bool unique = true;
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (entries[i].second < entries[best].second) {
        best = i;
        unique = true;
      } else if (entries[i].second == entries[best].second) {
        unique = false;
      }
    }
    for (const auto& [method, error] : entries) {
      row_of(key.category, method, key.metric).contexts += 1;
    }
    if (unique) {
      row_of(key.category, entries[best].first, key.metric).wins += 1;
    }
  }

  WinTable table;
  for (const auto& [group_method, by_metric] : rows) {
    for (const auto& [metric, row] : by_metric) {
      table.rows.push_back(row);
    }
  }
  return table;
}

}  // namespace interlab
