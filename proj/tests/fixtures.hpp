#pragma once

// Shared lazily-built fixtures for the unit suites. The tiny corpus and its
// trained model are built once per test binary and reused across suites, so
// the expensive part (training) happens a single time.

#include <vector>

#include "interlab/config.hpp"
#include "interlab/corpus.hpp"
#include "interlab/net.hpp"

namespace testfix {

struct TinyLab {
  interlab::ExperimentConfig cfg;  // the miniature smoke configuration
  interlab::FactCorpus corpus;
  interlab::ModelState base;
  double train_accuracy = 0.0;
  std::vector<interlab::Item> forget, retain, utility;
};

inline const TinyLab& tiny() {
  static const TinyLab lab = [] {
    TinyLab l;
    l.cfg = interlab::smoke_experiment_config();
    l.corpus = interlab::generate_corpus(l.cfg.corpus);
    interlab::TrainResult tr =
        interlab::init_and_train_base(l.corpus, l.cfg.train, l.cfg.net);
    l.base = std::move(tr.model);
    l.train_accuracy = tr.train_accuracy;
    l.forget = l.corpus.split_query_items(interlab::Split::forget);
    l.retain = l.corpus.split_query_items(interlab::Split::retain);
    l.utility =
        l.corpus.split_query_items(interlab::Split::utility_holdout);
    return l;
  }();
  return lab;
}

// A zeroed model with the same shapes as `like` (softmax output is uniform).
inline interlab::ModelState zero_model(const interlab::ModelState& like) {
  interlab::ModelState z = like;
  std::fill(z.embedding.a.begin(), z.embedding.a.end(), 0.0);
  std::fill(z.w1.a.begin(), z.w1.a.end(), 0.0);
  std::fill(z.b1.begin(), z.b1.end(), 0.0);
  std::fill(z.w2.a.begin(), z.w2.a.end(), 0.0);
  std::fill(z.b2.begin(), z.b2.end(), 0.0);
  return z;
}

}  // namespace testfix
