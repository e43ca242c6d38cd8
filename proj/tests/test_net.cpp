#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include "fixtures.hpp"
#include "interlab/errors.hpp"
#include "interlab/net.hpp"
#include "interlab/rng.hpp"

using namespace interlab;
using testfix::tiny;
using testfix::zero_model;

TEST_SUITE("net") {
  TEST_CASE("zero training steps return the seeded initialization") {
    const auto& l = tiny();
    TrainConfig cfg = l.cfg.train;
    cfg.steps = 0;
    const TrainResult r = init_and_train_base(l.corpus, cfg, l.cfg.net);
    CHECK(r.model.bit_equal(init_model(l.corpus, l.cfg.net)));
  }

  TEST_CASE("the reference training run masters its corpus") {
    CHECK(tiny().train_accuracy >= 0.95);
    CHECK_NOTHROW(tiny().base.validate());
  }

  TEST_CASE("a runaway learning rate raises a divergence error") {
    const auto& l = tiny();
    TrainConfig cfg = l.cfg.train;
    cfg.learning_rate = 1e6;
    cfg.steps = 50;
    try {
      init_and_train_base(l.corpus, cfg, l.cfg.net);
      FAIL("expected divergence");
    } catch (const error& e) {
      CHECK(e.kind() == errc::divergence);
    }
  }

  TEST_CASE("forward outputs a normalized probability vector") {
    const auto& l = tiny();
    for (int token = 0; token < 20; ++token) {
      const auto p = forward(l.base, token);
      REQUIRE(p.size() == static_cast<std::size_t>(l.corpus.answer_count));
      double sum = 0.0;
      for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
    CHECK_THROWS_AS(forward(l.base, l.corpus.vocab_size), error);
    CHECK_THROWS_AS(forward(l.base, -1), error);
  }

  TEST_CASE("an all-zero model is uniform over answers") {
    const auto& l = tiny();
    const ModelState z = zero_model(l.base);
    const auto p = forward(z, 0);
    for (double v : p) {
      CHECK(v == doctest::Approx(1.0 / l.corpus.answer_count).epsilon(1e-12));
    }
  }

  TEST_CASE("analytic gradient matches central finite differences") {
    // Small models keep the parameter loop fast; the production-scale check
    // (20 draws) lives in the verification binary.
    const double eps = 1e-4;
    for (int draw = 0; draw < 3; ++draw) {
      CorpusParams cp;
      cp.seed = 50 + draw;
      cp.vocab_size = 220;
      cp.answer_count = 4;
      cp.num_facts = 12;
      cp.paraphrases_per_fact = 10;
      const FactCorpus corpus = generate_corpus(cp);
      NetInit ni;
      ni.seed = 9 + draw;
      ni.embed_dim = 5;
      ni.hidden_dim = 7;
      const ModelState model = init_model(corpus, ni);

      Rng rng(derive_seed(123, "fd", draw));
      const auto all = corpus.all_items();
      std::vector<Item> batch;
      for (int i = 0; i < 5; ++i) batch.push_back(all[rng.below(all.size())]);

      const Gradient g = grad_nll(model, batch);
      ModelState probe = model;
      Gradient ga = g;
      auto blocks = [](ModelState& m) {
        return std::vector<std::vector<double>*>{&m.embedding.a, &m.w1.a,
                                                 &m.b1, &m.w2.a, &m.b2};
      };
      auto pb = blocks(probe);
      auto gb = blocks(ga);
      double num = 0.0, den = 0.0;
      for (std::size_t b = 0; b < pb.size(); ++b) {
        for (std::size_t i = 0; i < pb[b]->size(); ++i) {
          const double saved = (*pb[b])[i];
          (*pb[b])[i] = saved + eps;
          const double up = mean_nll(probe, batch);
          (*pb[b])[i] = saved - eps;
          const double dn = mean_nll(probe, batch);
          (*pb[b])[i] = saved;
          const double fd = (up - dn) / (2.0 * eps);
          num += ((*gb[b])[i] - fd) * ((*gb[b])[i] - fd);
          den += fd * fd;
        }
      }
      CHECK(std::sqrt(num) <= 1e-4 * std::max(1e-12, std::sqrt(den)));
    }
  }

  TEST_CASE("gradient of a duplicated batch equals the single-item gradient") {
    const auto& l = tiny();
    const Item x = l.corpus.all_items().front();
    const Gradient once = grad_nll(l.base, {x});
    Gradient twice = grad_nll(l.base, {x, x});
    // The per-item weight halves exactly, but the embedding accumulator sums
    // the second item's terms onto the first item's rounded partials, so
    // agreement holds to rounding error rather than bitwise.
    auto blocks = [](Gradient& m) {
      return std::vector<const std::vector<double>*>{&m.embedding.a, &m.w1.a,
                                                     &m.b1, &m.w2.a, &m.b2};
    };
    Gradient a = once;
    const auto ab = blocks(a);
    const auto tb = blocks(twice);
    double worst = 0.0;
    for (std::size_t b = 0; b < ab.size(); ++b) {
      for (std::size_t i = 0; i < ab[b]->size(); ++i) {
        worst = std::max(worst, std::abs((*ab[b])[i] - (*tb[b])[i]));
      }
    }
    CHECK(worst <= 1e-14);
  }

  TEST_CASE("empty batches are rejected") {
    try {
      grad_nll(tiny().base, {});
      FAIL("expected empty-input error");
    } catch (const error& e) {
      CHECK(e.kind() == errc::empty_input);
    }
    CHECK_THROWS_AS(mean_nll(tiny().base, {}), error);
    CHECK_THROWS_AS(accuracy_on(tiny().base, {}), error);
  }

  TEST_CASE("accuracy ties break toward the lowest answer id") {
    const auto& l = tiny();
    const ModelState z = zero_model(l.base);  // all answers tied
    CHECK(accuracy_on(z, {{0, 0}, {1, 0}}) == 1.0);
    CHECK(accuracy_on(z, {{0, 1}, {1, 2}}) == 0.0);
  }

  TEST_CASE("a tied model scores chance-level on uniformly spread answers") {
    const auto& l = tiny();
    const ModelState z = zero_model(l.base);
    std::vector<Item> items;
    for (int i = 0; i < 1000; ++i) {
      items.push_back({i % l.corpus.vocab_size, i % l.corpus.answer_count});
    }
    const double acc = accuracy_on(z, items);
    CHECK(std::abs(acc - 1.0 / l.corpus.answer_count) <= 0.05);
  }

  TEST_CASE("hidden activations are deterministic and zero for a zero model") {
    const auto& l = tiny();
    const Matrix rows = hidden_activations(l.base, {3, 3});
    REQUIRE(rows.rows == 2);
    for (int c = 0; c < rows.cols; ++c) {
      CHECK(rows.at(0, c) == rows.at(1, c));
    }
    const Matrix zero_rows = hidden_activations(zero_model(l.base), {0, 1});
    for (double v : zero_rows.a) CHECK(v == 0.0);
    CHECK_THROWS_AS(hidden_activations(l.base, {l.corpus.vocab_size}), error);
  }

  TEST_CASE("sgd with zero steps is the identity") {
    const auto& l = tiny();
    const ModelState out = sgd_nll(l.base, l.corpus.all_items(), 0, 0.5);
    CHECK(out.bit_equal(l.base));
  }

  TEST_CASE("binary model files round-trip bit-exactly") {
    namespace fs = std::filesystem;
    const auto& l = tiny();
    const fs::path path =
        fs::temp_directory_path() / "interlab_test_model.bin";
    save_model(l.base, path.string());
    const ModelState back = load_model(path.string());
    CHECK(back.bit_equal(l.base));
    fs::remove(path);
  }
}
