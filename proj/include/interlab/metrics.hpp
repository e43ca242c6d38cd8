#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "interlab/corpus.hpp"
#include "interlab/interventions.hpp"
#include "interlab/net.hpp"

namespace interlab {

// Criterion identifiers used across records and reports.
inline constexpr const char* kEditSuccess = "edit_success";
inline constexpr const char* kEditGeneralization = "edit_generalization";
inline constexpr const char* kEditLocality = "edit_locality";
inline constexpr const char* kUnlearning = "unlearning";
inline constexpr const char* kUtility = "utility";

struct CriterionResult {
  std::string criterion_id;
  double value = 0.0;                // in [0,1], higher is better
  std::optional<double> raw;         // pre-normalization quantity, if any
  long sample_count = 0;
};

struct EditEvaluation {
  double success = 0.0;
  double generalization = 0.0;
  double locality = 0.0;
};

// Number of held-out paraphrases per edit used by the generalization
// criterion (the first kGeneralizationParaphrases of each fact).
inline constexpr int kGeneralizationParaphrases = 10;

// F1 between two token multisets: C = G ∩ T, precision |C|/|G|,
// recall |C|/|T|; empty intersection scores 0. Target must be non-empty.
double token_f1(const std::vector<int>& generated,
                const std::vector<int>& target);

// Edit criteria on a model that (presumably) had `edits` applied somewhere
// in its chain. success: F1 of the argmax answer vs the new answer on each
// edited query. generalization: the same over exactly the first 10
// paraphrases per edit. locality: F1 of argmax vs the *original* answers on
// `locality_sample` seeded unedited facts.
EditEvaluation evaluate_editing(const ModelState& model,
                                const std::vector<EditRequest>& edits,
                                const FactCorpus& corpus, int locality_sample,
                                std::uint64_t seed);

// raw = accuracy on the forget items; value = clamp((1−raw)/(1−1/A), 0, 1),
// so chance-level accuracy maps to 1 (optimal unlearning) and perfect recall
// maps to 0. The affine normalization is flagged in report metadata.
CriterionResult unlearning_criterion(const ModelState& model,
                                     const std::vector<Item>& forget,
                                     int answer_count);

// value = raw = accuracy on the holdout items.
CriterionResult utility_criterion(const ModelState& model,
                                  const std::vector<Item>& holdout);

// Fraction of prunable parameters (w1, w2) that are exactly zero.
double sparsity_ratio(const ModelState& model);

// Storage accounting in bits per prunable weight: uncompressed 16;
// pruned at s → 16 − 15·s (one mask bit per zeroed weight); quantized at
// (b, g) → b + 16/g (16-bit scale per group).
double average_bits(const std::optional<CompressionState>& state);

}  // namespace interlab
