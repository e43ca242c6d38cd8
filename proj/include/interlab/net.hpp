#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "interlab/corpus.hpp"
#include "interlab/tensor.hpp"

namespace interlab {

// Full parameter set of the tiny network:
//   embedding (V×d) → affine (d→h) → relu → affine (h→A) → softmax.
// Weight matrices are stored output-major: w1 row r holds the d weights
// feeding hidden unit r, w2 row r holds the h weights feeding answer r.
// This makes "per output" weight groups (pruning rows, quantization groups)
// contiguous.
struct ModelState {
  Matrix embedding;        // V × d
  Matrix w1;               // h × d
  std::vector<double> b1;  // h
  Matrix w2;               // A × h
  std::vector<double> b2;  // A

  int vocab() const { return embedding.rows; }
  int embed_dim() const { return embedding.cols; }
  int hidden_dim() const { return w1.rows; }
  int answers() const { return w2.rows; }

  // Throws shape error on inconsistent dimensions or non-finite entries.
  void validate() const;
  bool bit_equal(const ModelState& o) const;
};

// Gradient of a scalar loss with respect to every parameter; same layout as
// the model itself.
using Gradient = ModelState;

Gradient zero_gradient_like(const ModelState& model);

// Optional per-matrix 0/1 gradient masks, used by the mask-respecting
// compressed-editing mode: entries with mask 0 receive no updates.
struct TrainMask {
  const Matrix* w1_mask = nullptr;  // h × d or null
  const Matrix* w2_mask = nullptr;  // A × h or null
};

struct NetInit {
  std::uint64_t seed = 1;
  int embed_dim = 64;
  int hidden_dim = 128;
  double embed_scale = 1.0;
  // Paraphrase embeddings start as query embedding + this noise scale.
  double paraphrase_noise = 0.05;
  // Forget-split facts form an embedding cluster: their query embeddings are
  // offset by a shared seeded direction with this magnitude, mirroring the
  // semantic coherence of real forget corpora. Steering-style unlearning
  // needs a linearly separable forget region to have any fixed point.
  double forget_cluster_offset = 4.0;
};

struct TrainConfig {
  double learning_rate = 0.5;
  int steps = 4000;
  int batch_size = 128;
  std::uint64_t seed = 1;
};

struct TrainResult {
  ModelState model;
  double train_accuracy = 0.0;  // accuracy on train-split items post-training
};

// Seeded initialization (no training).
ModelState init_model(const FactCorpus& corpus, const NetInit& init);

// Initializes and trains on every fact's query and paraphrases with the
// original answers (the model must know facts before they are edited or
// forgotten). Deterministic: identical (corpus, cfg, init) ⇒ bit-identical
// model. Throws divergence error if the loss becomes non-finite.
TrainResult init_and_train_base(const FactCorpus& corpus,
                                const TrainConfig& cfg,
                                const NetInit& init = {});

// Softmax probabilities over the A answers for one query token.
std::vector<double> forward(const ModelState& model, int token);

// Argmax answer with deterministic tie-break to the lowest answer id.
int predict(const ModelState& model, int token);

// Mean negative log-likelihood over a batch of (token, answer) items.
double mean_nll(const ModelState& model, const std::vector<Item>& batch);

// Gradient of mean NLL over the batch; matches central finite differences.
Gradient grad_nll(const ModelState& model, const std::vector<Item>& batch);

// Fraction of items whose argmax equals the answer.
double accuracy_on(const ModelState& model, const std::vector<Item>& items);

// Post-relu hidden activations, one row per token.
Matrix hidden_activations(const ModelState& model,
                          const std::vector<int>& tokens);

// Plain SGD on mean NLL over `items` (full batch per step), all parameters
// trainable unless masked. Used by fine-tuning style operators. Throws
// divergence error on non-finite loss.
ModelState sgd_nll(const ModelState& model, const std::vector<Item>& items,
                   int steps, double lr, const TrainMask* mask = nullptr);

// Binary model dump, bit-exact round-trip (magic + shape header + row-major
// little-endian doubles).
void save_model(const ModelState& model, const std::string& path);
ModelState load_model(const std::string& path);

}  // namespace interlab
