#include "interlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

#include "interlab/rng.hpp"

namespace interlab {

double token_f1(const std::vector<int>& generated,
                const std::vector<int>& target) {
  if (target.empty()) fail(errc::empty_input, "F1 target multiset is empty");
  if (generated.empty()) return 0.0;
  std::map<int, long> want;
  for (int t : target) ++want[t];
  long common = 0;
  for (int t : generated) {
    auto it = want.find(t);
    if (it != want.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision =
      static_cast<double>(common) / static_cast<double>(generated.size());
  const double recall =
      static_cast<double>(common) / static_cast<double>(target.size());
  return 2.0 * precision * recall / (precision + recall);
}

EditEvaluation evaluate_editing(const ModelState& model,
                                const std::vector<EditRequest>& edits,
                                const FactCorpus& corpus, int locality_sample,
                                std::uint64_t seed) {
  if (edits.empty()) fail(errc::empty_input, "no edits to evaluate");
  if (corpus.paraphrases_per_fact < kGeneralizationParaphrases) {
    fail(errc::range, "generalization needs at least " +
                          std::to_string(kGeneralizationParaphrases) +
                          " paraphrases per fact");
  }
  if (locality_sample < 1) {
    fail(errc::range, "locality_sample must be positive");
  }

  EditEvaluation eval;
  std::unordered_set<int> edited_facts;
  for (const EditRequest& e : edits) {
    if (e.fact_id < 0 || e.fact_id >= static_cast<int>(corpus.facts.size())) {
      fail(errc::range, "edit references unknown fact");
    }
    edited_facts.insert(e.fact_id);
    const Fact& f = corpus.facts[e.fact_id];
    eval.success += token_f1({predict(model, f.query_token)},
                             {e.new_answer_id});
    double gen = 0.0;
    for (int k = 0; k < kGeneralizationParaphrases; ++k) {
      gen += token_f1({predict(model, f.paraphrase_tokens[k])},
                      {e.new_answer_id});
    }
    eval.generalization += gen / kGeneralizationParaphrases;
  }
  eval.success /= static_cast<double>(edits.size());
  eval.generalization /= static_cast<double>(edits.size());

  // Locality: seeded sample of unedited facts, argmax vs *original* answers.
  std::vector<int> candidates;
  candidates.reserve(corpus.facts.size());
  for (const Fact& f : corpus.facts) {
    if (!edited_facts.count(f.fact_id)) candidates.push_back(f.fact_id);
  }
  if (candidates.empty()) {
    fail(errc::empty_input, "no unedited facts left for the locality sample");
  }
  Rng rng(derive_seed(seed, "locality-sample"));
  rng.shuffle(candidates);
  const std::size_t n =
      std::min<std::size_t>(candidates.size(), locality_sample);
  double loc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Fact& f = corpus.facts[candidates[i]];
    loc += token_f1({predict(model, f.query_token)}, {f.answer_id});
  }
  eval.locality = loc / static_cast<double>(n);
  return eval;
}

CriterionResult unlearning_criterion(const ModelState& model,
                                     const std::vector<Item>& forget,
                                     int answer_count) {
  if (forget.empty()) fail(errc::empty_input, "forget set is empty");
  if (answer_count < 2) fail(errc::range, "answer_count must be >= 2");
  const double raw = accuracy_on(model, forget);
  const double chance = 1.0 / static_cast<double>(answer_count);
  double value = (1.0 - raw) / (1.0 - chance);
  value = std::clamp(value, 0.0, 1.0);
  return CriterionResult{kUnlearning, value, raw,
                         static_cast<long>(forget.size())};
}

CriterionResult utility_criterion(const ModelState& model,
                                  const std::vector<Item>& holdout) {
  if (holdout.empty()) fail(errc::empty_input, "holdout set is empty");
  const double acc = accuracy_on(model, holdout);
  return CriterionResult{kUtility, acc, acc,
                         static_cast<long>(holdout.size())};
}

double sparsity_ratio(const ModelState& model) {
  long zeros = 0;
  long total = 0;
  for (double v : model.w1.a) {
    zeros += (v == 0.0);
    ++total;
  }
  for (double v : model.w2.a) {
    zeros += (v == 0.0);
    ++total;
  }
  return static_cast<double>(zeros) / static_cast<double>(total);
}

double average_bits(const std::optional<CompressionState>& state) {
  if (!state) return 16.0;
  if (state->method == CompressionMethod::prune) {
    // 16-bit weights for survivors plus a 1-bit mask entry per zeroed
    // weight: 16·(1−s) + 1·s, computed in the FP-exact form.
    return 16.0 - 15.0 * state->sparsity;
  }
  // b bits per weight plus a 16-bit scale per group.
  return static_cast<double>(state->bits) +
         16.0 / static_cast<double>(state->group_size);
}

}  // namespace interlab
