#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "interlab/corpus.hpp"
#include "interlab/net.hpp"

namespace interlab {

enum class InterventionKind { edit, unlearn, compress, identity };

const char* kind_name(InterventionKind k);
std::optional<InterventionKind> kind_from_name(std::string_view name);

// The four-tuple describing an intervention: an operator with fixed
// settings, a hyperparameter grid gamma, a loss configuration (folded into
// the operator settings), and the criteria it is evaluated on.
struct InterventionSpec {
  std::string name;                      // unique roster name
  InterventionKind kind = InterventionKind::identity;
  std::string op;                        // ft|lora|ga|gd|rmu|prune|quantize|none
  std::vector<double> gamma_grid;        // strictly increasing raw values
  double default_gamma = 0.0;            // the named single setting
  std::map<std::string, double> params;  // operator settings (steps, lr, ...)
  std::vector<std::string> criteria;     // criterion ids, each valued in [0,1]

  double param(const std::string& key, double fallback) const;
  bool multi_gamma() const { return gamma_grid.size() >= 2; }
  // Throws config/range errors on invalid grids or unknown operators.
  void validate() const;
};

enum class CompressionMethod { prune, quantize };

// Everything needed to undo or re-apply a compression: the method and its
// gamma, the prune masks or quantization grid scales, the calibration used
// for activation-aware scoring, and a backup of the dense model.
struct CompressionState {
  CompressionMethod method = CompressionMethod::prune;
  double sparsity = 0.0;               // prune
  int bits = 0;                        // quantize
  int group_size = 0;                  // quantize
  Matrix w1_mask, w2_mask;             // prune: 0/1 masks
  std::vector<double> w1_scales, w2_scales;  // quantize: per-group max |w|
  std::vector<int> calibration;        // prune: calibration tokens
  std::shared_ptr<const ModelState> pre_compression_backup;
};

// A model with its intervention history: the spec and gamma that produced
// it, optional live compression state, and the chain of prior interventions.
struct AppliedIntervention {
  InterventionSpec spec;
  double gamma = 0.0;
  ModelState resulting_model;
  std::optional<CompressionState> compression_state;
  std::vector<std::string> provenance;  // strictly grows along a chain
};

// --- Editing -------------------------------------------------------------

// Fine-tunes all parameters on the edited (query → new answer) pairs.
// steps=0 or lr=0 leaves the model bit-identical.
ModelState edit_ft(const ModelState& model,
                   const std::vector<EditRequest>& edits,
                   const FactCorpus& corpus, int steps, double lr,
                   const TrainMask* mask = nullptr);

// Trains additive low-rank factors on w1 and w2 only (zero-initialized
// second factor), then merges w += scaling·(first·second)/rank into a dense
// model. The factor initialization is seeded for determinism.
ModelState edit_lora(const ModelState& model,
                     const std::vector<EditRequest>& edits,
                     const FactCorpus& corpus, int rank, int steps, double lr,
                     double scaling, std::uint64_t factor_seed = 0x10ad);

// --- Unlearning ----------------------------------------------------------

// Per-item NLL ceiling for gradient ascent: items whose NLL has reached
// ln(A) + kGaCeilingMargin stop contributing, keeping the loss finite.
inline constexpr double kGaCeilingMargin = 10.0;

// Gradient ascent on the forget items' NLL.
ModelState unlearn_ga(const ModelState& model, const std::vector<Item>& forget,
                      int steps, double lr, const TrainMask* mask = nullptr);

// Gradient descent on  −NLL(forget) + alpha·NLL(retain).
// alpha=0 reduces bit-exactly to unlearn_ga.
ModelState unlearn_gd(const ModelState& model, const std::vector<Item>& forget,
                      const std::vector<Item>& retain, double alpha, int steps,
                      double lr, const TrainMask* mask = nullptr);

// Steers forget-item hidden activations toward c·u for a fixed seeded unit
// direction u (non-negative entries, since relu activations live in the
// non-negative orthant), while anchoring retain activations to the input
// model's. Only w1/b1 train.
ModelState unlearn_rmu(const ModelState& model, const std::vector<Item>& forget,
                       const std::vector<Item>& retain, double c, double alpha,
                       int steps, double lr, std::uint64_t direction_seed,
                       const TrainMask* mask = nullptr);

// The steering direction used by unlearn_rmu (unit norm, entries ≥ 0).
std::vector<double> rmu_direction(int hidden_dim, std::uint64_t direction_seed);

// --- Compression ---------------------------------------------------------

// Activation-aware pruning: weight score = |w| · ℓ2 norm over the
// calibration tokens of the weight's input feature; within each output row
// of w1 and w2, the lowest-scoring fraction s is zeroed. Embedding and
// biases are untouched.
std::pair<ModelState, CompressionState> compress_prune(
    const ModelState& model, double s, const std::vector<int>& calibration);

// Symmetric round-to-nearest quantization of w1 and w2: per contiguous group
// of g weights within a row, levels are (q/k)·max|w| for integer
// q ∈ [−k, k], k = 2^(b−1) − 1; ties round away from zero. Returns the
// dequantized dense model. Idempotent: re-quantizing with the same (b, g)
// is bit-identical.
std::pair<ModelState, CompressionState> compress_quantize(
    const ModelState& model, int b, int g);

// Re-applies a stored compression to an arbitrary dense model: same method,
// same gamma, same calibration. The prune mask is recomputed from the new
// weights (activation-aware scores move with the model).
std::pair<ModelState, CompressionState> recompress(
    const ModelState& dense, const CompressionState& like);

// Decompress–recompress protocol: restores the pre-compression dense model,
// applies `inner`, re-applies the identical compression, and appends to
// provenance.
AppliedIntervention reenter_compressed(
    const AppliedIntervention& state,
    const std::function<ModelState(const ModelState&)>& inner,
    const std::string& inner_name);

}  // namespace interlab
