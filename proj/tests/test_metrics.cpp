#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "interlab/errors.hpp"
#include "interlab/interventions.hpp"
#include "interlab/metrics.hpp"
#include "interlab/rng.hpp"

using namespace interlab;
using testfix::tiny;
using testfix::zero_model;

TEST_SUITE("metrics") {
  TEST_CASE("token F1 endpoints and the mixed case") {
    CHECK(token_f1({1, 2}, {1, 2}) == 1.0);
    CHECK(token_f1({7, 8}, {1, 2}) == 0.0);  // empty intersection scores 0
    CHECK(token_f1({1, 2, 3}, {1, 2}) ==
          doctest::Approx(0.8).epsilon(1e-12));
    CHECK(token_f1({}, {1}) == 0.0);  // empty generation, zero precision
    try {
      token_f1({1}, {});
      FAIL("expected empty-target error");
    } catch (const error& e) {
      CHECK(e.kind() == errc::empty_input);
    }
  }

  TEST_CASE("token F1 is symmetric at equal sizes and bounded") {
    Rng rng(77);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 1 + rng.below(6);
      std::vector<int> g, w;
      for (std::size_t i = 0; i < n; ++i) {
        g.push_back(static_cast<int>(rng.below(5)));
        w.push_back(static_cast<int>(rng.below(5)));
      }
      const double f = token_f1(g, w);
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
      CHECK(f == token_f1(w, g));  // |G| = |T| makes P and R swap roles
      std::vector<int> gs = g, ws = w;
      std::sort(gs.begin(), gs.end());
      std::sort(ws.begin(), ws.end());
      if (f == 1.0) {
        CHECK(gs == ws);  // a perfect score forces multiset equality
      } else {
        CHECK(gs != ws);
      }
    }
  }

  TEST_CASE("unlearning normalization pins its endpoints") {
    const auto& l = tiny();
    const ModelState z = zero_model(l.base);  // argmax ties to answer 0
    const int A = 4;

    // Chance-level accuracy (1/A correct) maps to a full score.
    std::vector<Item> chance = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    const CriterionResult at_chance = unlearning_criterion(z, chance, A);
    CHECK(at_chance.value == 1.0);
    CHECK(at_chance.raw.has_value());
    CHECK(*at_chance.raw == 0.25);

    // Perfect recall maps to zero.
    std::vector<Item> recalled = {{0, 0}, {1, 0}};
    CHECK(unlearning_criterion(z, recalled, A).value == 0.0);

    // A=4, raw 5/8 lands exactly halfway.
    std::vector<Item> mixed;
    for (int i = 0; i < 5; ++i) mixed.push_back({i, 0});
    for (int i = 5; i < 8; ++i) mixed.push_back({i, 1});
    const CriterionResult half = unlearning_criterion(z, mixed, A);
    CHECK(*half.raw == 0.625);
    CHECK(half.value == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(half.sample_count == 8);

    CHECK_THROWS_AS(unlearning_criterion(z, {}, A), error);
  }

  TEST_CASE("unlearning value decreases as recall rises") {
    const auto& l = tiny();
    const ModelState z = zero_model(l.base);
    double prev = 2.0;
    for (int correct = 0; correct <= 8; ++correct) {
      std::vector<Item> items;
      for (int i = 0; i < correct; ++i) items.push_back({i, 0});
      for (int i = correct; i < 8; ++i) items.push_back({i, 1});
      const double v = unlearning_criterion(z, items, 4).value;
      CHECK(v <= prev);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      prev = v;
    }
  }

  TEST_CASE("utility is plain holdout accuracy") {
    const auto& l = tiny();
    const CriterionResult base_util = utility_criterion(l.base, l.utility);
    CHECK(base_util.value == accuracy_on(l.base, l.utility));
    CHECK(base_util.raw.has_value());
    CHECK(*base_util.raw == base_util.value);
    CHECK(base_util.sample_count == static_cast<long>(l.utility.size()));

    // A tied model on uniformly spread answers sits at chance exactly.
    std::vector<Item> spread;
    for (int i = 0; i < 1000; ++i) spread.push_back({i % 20, i % 4});
    CHECK(utility_criterion(zero_model(l.base), spread).value == 0.25);
    CHECK_THROWS_AS(utility_criterion(l.base, {}), error);
  }

  TEST_CASE("editing evaluation of the unedited base model") {
    const auto& l = tiny();
    REQUIRE(l.train_accuracy == 1.0);  // the gates below assume mastery
    const auto batch = sample_edit_batches(l.corpus, 1, 3, 5)[0];
    const EditEvaluation eval =
        evaluate_editing(l.base, batch, l.corpus, 10, 99);
    // New answers differ from originals by construction, and the base model
    // still answers originals everywhere.
    CHECK(eval.success == 0.0);
    CHECK(eval.generalization == 0.0);
    CHECK(eval.locality == 1.0);
  }

  TEST_CASE("editing evaluation follows a successful edit") {
    const auto& l = tiny();
    const auto batch = sample_edit_batches(l.corpus, 1, 3, 5)[0];
    const ModelState after = edit_ft(l.base, batch, l.corpus, 25, 0.5);
    const EditEvaluation eval =
        evaluate_editing(after, batch, l.corpus, 10, 99);
    CHECK(eval.success > 0.0);
    CHECK(eval.generalization >= 0.0);
    CHECK(eval.locality <= 1.0);
    // The same model and seed evaluate identically.
    const EditEvaluation again =
        evaluate_editing(after, batch, l.corpus, 10, 99);
    CHECK(eval.success == again.success);
    CHECK(eval.generalization == again.generalization);
    CHECK(eval.locality == again.locality);
  }

  TEST_CASE("generalization needs ten paraphrases per fact") {
    const auto& l = tiny();
    FactCorpus thin = l.corpus;
    thin.paraphrases_per_fact = 4;
    for (Fact& f : thin.facts) f.paraphrase_tokens.resize(4);
    try {
      evaluate_editing(l.base, sample_edit_batches(l.corpus, 1, 2, 5)[0],
                       thin, 5, 1);
      FAIL("expected a paraphrase-shortage error");
    } catch (const error& e) {
      CHECK(e.kind() == errc::range);
    }
  }

  TEST_CASE("sparsity counts exact zeros over the prunable matrices") {
    const auto& l = tiny();
    CHECK(sparsity_ratio(l.base) < 0.01);  // dense training leaves no zeros
    CHECK(sparsity_ratio(zero_model(l.base)) == 1.0);
  }

  TEST_CASE("storage accounting spot values") {
    CHECK(average_bits(std::nullopt) == 16.0);
    const auto& l = tiny();
    std::vector<int> cal = {l.corpus.facts[0].query_token};
    CHECK(average_bits(compress_prune(l.base, 0.25, cal).second) == 12.25);
    CHECK(average_bits(compress_quantize(l.base, 4, 64).second) == 4.25);
    CHECK(average_bits(compress_quantize(l.base, 2, 64).second) == 2.25);
  }
}
