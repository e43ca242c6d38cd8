#pragma once

// Shared backpropagation internals for net.cpp and interventions.cpp.
// Not part of the public API.

#include <cmath>
#include <map>
#include <vector>

#include "interlab/net.hpp"
#include "interlab/tensor.hpp"

namespace interlab::detail {

// Per-item forward pass scratch. Kept flat so a worker can reuse it.
struct ForwardScratch {
  std::vector<double> z1, a1, z2, p;
  void resize(int h, int a) {
    z1.resize(h);
    a1.resize(h);
    z2.resize(a);
    p.resize(a);
  }
};

// Gradient accumulator with a sparse embedding part (only touched rows are
// stored; std::map keeps iteration deterministic).
struct GradAcc {
  Matrix gw1, gw2;
  std::vector<double> gb1, gb2;
  std::map<int, std::vector<double>> gembed;

  void reset(const ModelState& m) {
    if (!gw1.same_shape(m.w1)) gw1 = Matrix(m.w1.rows, m.w1.cols);
    else std::fill(gw1.a.begin(), gw1.a.end(), 0.0);
    if (!gw2.same_shape(m.w2)) gw2 = Matrix(m.w2.rows, m.w2.cols);
    else std::fill(gw2.a.begin(), gw2.a.end(), 0.0);
    gb1.assign(m.b1.size(), 0.0);
    gb2.assign(m.b2.size(), 0.0);
    gembed.clear();
  }
};

// Forward pass for one token; fills scratch and returns softmax probs in
// scratch.p. Token must be validated by the caller.
void forward_into(const ModelState& m, int token, ForwardScratch& s);

// NLL of one (token, answer) item from an already-run forward pass.
double item_nll(const ForwardScratch& s, int answer);

// Backward pass of `weight` · NLL(token → answer) into the accumulator.
// Requires forward_into to have run for this token.
void accumulate_nll_grad(const ModelState& m, int token, int answer,
                         double weight, const ForwardScratch& s, GradAcc& acc);

// Backward pass of `weight` · ‖a1 − target‖² into the w1/b1 part of the
// accumulator (hidden-activation steering losses; w2/b2/embedding untouched).
void accumulate_activation_grad(const ModelState& m, int token,
                                const double* target, double weight,
                                const ForwardScratch& s, GradAcc& acc);

// θ ← θ − lr · acc, with optional w1/w2 gradient masks. Embedding updates
// touch only accumulated rows. When `train_output_layer` is false, w2/b2
// (and embedding) stay untouched — used by operators that train w1/b1 only.
void apply_update(ModelState& m, const GradAcc& acc, double lr,
                  const TrainMask* mask, bool train_embedding = true,
                  bool train_output_layer = true);

}  // namespace interlab::detail
