#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "interlab/composability.hpp"
#include "interlab/config.hpp"

namespace interlab {

// One executed cell. wall_time_s is measured but kept out of runs.csv
// (it would break byte-identical reruns); it lands in timings.csv.
struct RunRecord {
  CellCoord coord;
  std::map<std::string, double> criteria;  // values rounded to 6 decimals
  double sparsity = 0.0;
  double avg_bits = 16.0;
  std::string status = "ok";  // or the error kind of a failed cell
  double wall_time_s = 0.0;

  bool deterministic_equal(const RunRecord& o) const;
};

struct RunOptions {
  int jobs = 1;
  bool resume = false;
  // Stop after this many newly computed cells (< 0 = unlimited). Leaves the
  // write-ahead journal in place, exactly like an interrupt.
  long max_cells = -1;
};

struct ExperimentOutput {
  std::vector<RunRecord> records;
  std::vector<ComposabilityReport> reports;
  WinTable wins;
  long cells_computed = 0;  // freshly executed this call
  long cells_reused = 0;    // restored from journal/previous run
  bool complete = true;     // false when max_cells stopped the run early
  double base_train_accuracy = 0.0;
};

// The declared run matrix: baselines (each roster entry × identity) first,
// then the configured pairs; within a pair: orders × grid × repetitions.
std::vector<CellCoord> enumerate_cells(const ExperimentConfig& cfg);

// Trains (or loads the cached) base model, executes every cell not already
// journaled (optionally across `jobs` workers), aggregates curves, applies
// any decay bound, computes reports and the win table, and emits all report
// files into cfg.output_dir. Deterministic: identical (config, seed) ⇒
// byte-identical runs.csv regardless of jobs or interruption points.
ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                const RunOptions& opts = {});

// Recomputes curves/reports/wins from existing records (the `report` verb).
void compute_reports(const ExperimentConfig& cfg,
                     const std::vector<RunRecord>& records,
                     std::vector<ComposabilityReport>& reports,
                     WinTable& wins);

// Writes runs.csv, curves.csv, composability.json, and wins.csv into
// `directory`. Floats use 6 decimals; every file embeds the config hash and
// master seed; files end with a newline. Throws on empty records.
void emit_reports(const std::vector<RunRecord>& records,
                  const std::vector<ComposabilityReport>& reports,
                  const WinTable& wins, const ExperimentConfig& cfg,
                  const std::string& directory);

// runs.csv round-trip (deterministic fields only).
std::vector<RunRecord> parse_runs_csv(const std::string& path,
                                      std::string* header_hash = nullptr);

// Quantizes a value to 6 decimals (the resolution of every emitted float),
// so in-memory records equal their serialized form exactly.
double round6(double v);

}  // namespace interlab
