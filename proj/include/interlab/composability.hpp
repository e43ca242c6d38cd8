#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "interlab/corpus.hpp"
#include "interlab/interventions.hpp"
#include "interlab/metrics.hpp"
#include "interlab/net.hpp"

namespace interlab {

enum class Order { i_then_j = 0, j_then_i = 1 };
const char* order_name(Order o);
std::optional<Order> order_from_name(std::string_view name);

struct CurvePoint {
  double gamma_raw = 0.0;
  double gamma_normalized = 0.0;  // min–max over the declared grid
  double kappa = 0.0;             // mean criterion value in [0,1]
};

struct CriterionCurve {
  std::string criterion_id;
  Order order = Order::i_then_j;
  std::vector<CurvePoint> points;  // strictly increasing gamma_normalized
};

struct CurvePair {
  CriterionCurve ij;  // order i_then_j
  CriterionCurve ji;  // order j_then_i
};

// --- Metric mathematics ----------------------------------------------------

// Order-free Error: 1 − trapezoidal ∫ min(κ_ij, κ_ji) over the
// normalized-γ span. Requires matched grids (same gamma_normalized
// sequence) and ≥ 2 points. When the curves cover [a, b] ⊂ [0,1] (after a
// decay bound), the integral renormalizes by (b − a).
double order_free_error(const CriterionCurve& ij, const CriterionCurve& ji);

// Order Sensitivity: trapezoidal ∫ |κ_ij − κ_ji| over the same span.
double order_sensitivity(const CriterionCurve& ij, const CriterionCurve& ji);

// Single-setting reductions: ofe = 1 − min(κ_ij, κ_ji), os = |κ_ij − κ_ji|.
std::pair<double, double> point_measures(double kappa_ij, double kappa_ji);

// Removes grid points where the guard criterion (in either order) falls
// below `floor`. Surviving integrals renormalize over the remaining span;
// fewer than 2 surviving points makes integral metrics undefined (a value,
// not an error — callers check survivor count).
CurvePair apply_decay_bound(const CurvePair& curves, const CurvePair& guard,
                            double floor_value);

// --- Curve construction ----------------------------------------------------

// Immutable context shared by every sweep cell.
struct SweepContext {
  const FactCorpus* corpus = nullptr;
  const ModelState* base = nullptr;
  // Edit batches, one per repetition; batch r is shared by every pair, both
  // orders, and every gamma, so curves are pointwise comparable.
  const std::vector<std::vector<EditRequest>>* edit_batches = nullptr;
  int locality_sample = 200;
  std::uint64_t master_seed = 0;
  // Editing a pruned model: retrain dense weights and re-apply the same
  // compression afterwards ("recompress"), or respect the mask ("masked").
  bool masked_compressed_training = false;
};

struct CellCoord {
  std::string pair_i, pair_j;
  Order order = Order::i_then_j;
  double gamma_raw = 0.0;
  int repetition = 0;
};

struct CellResult {
  std::map<std::string, double> criteria;  // criterion id → value
  double sparsity = 0.0;
  double avg_bits = 16.0;
};

// Executes one composition cell: applies the two interventions in the given
// order (phi_i's gamma set to the cell's gamma, phi_j at its default), then
// evaluates the union of the pair's criteria. Pure and deterministic.
CellResult run_cell(const SweepContext& ctx, const InterventionSpec& phi_i,
                    const InterventionSpec& phi_j, Order order, double gamma,
                    int repetition);

// The built-in identity intervention (name "none").
InterventionSpec identity_spec();

// How many repetitions a pair actually runs: `repetitions` when an edit
// intervention is involved (edits are resampled per repetition), 1 otherwise
// (no stochastic input varies).
int effective_repetitions(const InterventionSpec& phi_i,
                          const InterventionSpec& phi_j, int repetitions);

// Union of the two specs' criterion lists, first-seen order.
std::vector<std::string> pair_criteria(const InterventionSpec& phi_i,
                                       const InterventionSpec& phi_j);

// Sweeps phi_i's gamma grid for both orders, averaging each criterion over
// the effective repetitions; returns matched-length curve pairs keyed by
// criterion. phi_i must carry the grid being swept.
std::map<std::string, CurvePair> build_curves(const SweepContext& ctx,
                                              const InterventionSpec& phi_i,
                                              const InterventionSpec& phi_j,
                                              int repetitions);

// --- Reports and win counting ----------------------------------------------

struct CriterionComposability {
  std::string criterion_id;
  // Integral metrics; absent when the grid has < 2 points (single-setting
  // pairs) or when a decay bound leaves < 2 survivors.
  std::optional<double> order_free_error;
  std::optional<double> order_sensitivity;
  double point_gamma = 0.0;  // the pair's named γ (phi_i's default)
  double point_ofe = 0.0;
  double point_os = 0.0;
  double kappa_ij = 0.0;  // κ at point_gamma, order i_then_j
  double kappa_ji = 0.0;
};

struct ComposabilityReport {
  std::string intervention_i, intervention_j;
  std::string kind_i, kind_j;
  std::vector<CriterionComposability> criteria;
  std::string bounds_applied;  // empty when no decay bound was active
};

struct WinTable {
  struct Row {
    std::string category;  // contender group (intervention kind)
    std::string method;
    std::string metric;    // point_ofe | point_os | ofe | os
    int wins = 0;
    int contexts = 0;      // comparisons the method participated in
  };
  std::vector<Row> rows;  // sorted by (category, method, metric)
};

// Counts, within each category, how often each method is strictly best
// (lowest error) among its category's contenders in the same context
// (same opponent, criterion, metric). Exact ties award nothing.
WinTable win_table(const std::vector<ComposabilityReport>& reports,
                   const std::map<std::string, std::string>& grouping);

}  // namespace interlab
