#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "interlab/composability.hpp"
#include "interlab/corpus.hpp"
#include "interlab/interventions.hpp"
#include "interlab/net.hpp"

namespace interlab {

// Optional sweep filter: drop grid points where a guard criterion falls
// below a floor before integrating (acceptable-performance-decay bound).
struct DecayBound {
  std::string guard_criterion = "utility";
  double floor_value = 0.0;
};

// The entire experiment in one reviewable structure. Serialized as JSON
// (comments allowed in files); an annotated example ships in configs/.
struct ExperimentConfig {
  CorpusParams corpus;
  NetInit net;
  TrainConfig train;
  std::vector<InterventionSpec> roster;
  // Pairs by roster name. When all_pairs is set, every unordered roster
  // pair is run instead.
  std::vector<std::pair<std::string, std::string>> pairs;
  bool all_pairs = false;
  int repetitions = 10;   // edit batches per pair (batch resampled per rep)
  int batch_size = 50;    // edits per batch
  int locality_sample = 200;
  // "recompress": train dense weights and re-apply the compression after
  // an edit/unlearn step on a compressed model. "masked": respect the prune
  // mask during training (no recompression).
  std::string pruned_edit_mode = "recompress";
  std::optional<DecayBound> decay_bound;
  std::string output_dir = "out";
  // True when the config file itself named output_dir (lets the CLI decide
  // whether an environment default should apply). Not part of the hash.
  bool output_dir_from_config = false;
  std::uint64_t master_seed = 1234;

  const InterventionSpec* find(const std::string& name) const;
  // Resolved pair list (explicit pairs, or all unordered roster pairs),
  // each oriented so the swept side (multi-point grid) comes first.
  std::vector<std::pair<const InterventionSpec*, const InterventionSpec*>>
  resolved_pairs() const;
  // Throws config errors on unknown names, bad grids, or invalid counts.
  void validate() const;
};

// The full default experiment: FT/LoRA editing, GA/GD/RMU
// unlearning, activation-aware pruning and RTN quantization, paired as
// edit×compress, unlearn×compress, and edit×unlearn, 10 repetitions of
// 50-edit batches.
ExperimentConfig default_experiment_config();

// A miniature configuration for smoke tests (tiny corpus, one pair).
ExperimentConfig smoke_experiment_config();

// JSON I/O. Files may contain // and /* */ comments. Unknown keys are
// rejected (config typos must not silently alter an experiment).
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_json(const std::string& text);
std::string canonical_config_json(const ExperimentConfig& cfg);

// FNV-1a 64 over the canonical serialization (output_dir excluded — it
// cannot affect results). Rendered as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace interlab
