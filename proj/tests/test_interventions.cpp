#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "fixtures.hpp"
#include "interlab/errors.hpp"
#include "interlab/interventions.hpp"
#include "interlab/metrics.hpp"
#include "interlab/rng.hpp"

using namespace interlab;
using testfix::tiny;

namespace {

errc thrown_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return errc::io;  // unreachable
}

InterventionSpec make_spec(const std::string& name, InterventionKind kind,
                           const std::string& op, std::vector<double> grid) {
  InterventionSpec s;
  s.name = name;
  s.kind = kind;
  s.op = op;
  s.gamma_grid = std::move(grid);
  s.default_gamma = s.gamma_grid.front();
  return s;
}

std::vector<EditRequest> tiny_batch() {
  return sample_edit_batches(tiny().corpus, 1, 3, 5)[0];
}

}  // namespace

TEST_SUITE("interventions") {
  TEST_CASE("spec validation rejects malformed four-tuples") {
    CHECK_NOTHROW(
        make_spec("p", InterventionKind::compress, "prune", {0.25, 0.5})
            .validate());

    CHECK(thrown_kind([] {
            make_spec("x", InterventionKind::edit, "distill", {0.5}).validate();
          }) == errc::config);
    CHECK(thrown_kind([] {  // operator under the wrong kind
            make_spec("x", InterventionKind::edit, "prune", {0.5}).validate();
          }) == errc::config);
    CHECK(thrown_kind([] {  // grid must strictly increase
            make_spec("x", InterventionKind::edit, "ft", {0.5, 0.5}).validate();
          }) == errc::config);
    CHECK(thrown_kind([] {  // named setting must be on the grid
            auto s = make_spec("x", InterventionKind::edit, "ft", {0.5});
            s.default_gamma = 0.3;
            s.validate();
          }) == errc::config);
    CHECK(thrown_kind([] {  // sparsity lives in [0, 1)
            make_spec("x", InterventionKind::compress, "prune", {0.5, 1.0})
                .validate();
          }) == errc::config);
    CHECK(thrown_kind([] {  // bit widths are integers >= 2
            make_spec("x", InterventionKind::compress, "quantize", {2.5})
                .validate();
          }) == errc::config);
    CHECK(thrown_kind([] {
            auto s = make_spec("x", InterventionKind::edit, "ft", {0.5});
            s.criteria = {"speed"};
            s.validate();
          }) == errc::config);
    CHECK(thrown_kind([] {
            auto s = make_spec("x", InterventionKind::edit, "ft", {0.5});
            s.params["momentum"] = 0.9;
            s.validate();
          }) == errc::config);
    CHECK(thrown_kind([] {
            make_spec("", InterventionKind::edit, "ft", {0.5}).validate();
          }) == errc::config);
  }

  TEST_CASE("fine-tuning with zero steps or zero rate is the identity") {
    const auto& l = tiny();
    const auto batch = tiny_batch();
    CHECK(edit_ft(l.base, batch, l.corpus, 0, 0.5).bit_equal(l.base));
    CHECK(edit_ft(l.base, batch, l.corpus, 25, 0.0).bit_equal(l.base));
  }

  TEST_CASE("fine-tuning moves the edited answers toward their targets") {
    const auto& l = tiny();
    const auto batch = tiny_batch();
    std::vector<Item> targets;
    for (const auto& e : batch) {
      targets.push_back({l.corpus.facts[e.fact_id].query_token,
                         e.new_answer_id});
    }
    const double before = mean_nll(l.base, targets);
    const ModelState after = edit_ft(l.base, batch, l.corpus, 25, 0.5);
    CHECK(mean_nll(after, targets) < before);
    const double succ_before = evaluate_editing(l.base, batch, l.corpus, 5, 1)
                                   .success;
    const double succ_after = evaluate_editing(after, batch, l.corpus, 5, 1)
                                  .success;
    CHECK(succ_after > succ_before);
  }

  TEST_CASE("edit requests are validated against the corpus") {
    const auto& l = tiny();
    CHECK(thrown_kind([&] {
            edit_ft(l.base, {}, l.corpus, 5, 0.1);
          }) == errc::empty_input);
    CHECK(thrown_kind([&] {  // unknown fact id
            edit_ft(l.base, {{9999, 1}}, l.corpus, 5, 0.1);
          }) == errc::range);
    CHECK(thrown_kind([&] {  // the "edit" must change the answer
            const int fact = l.corpus.split(Split::edit_pool).front();
            edit_ft(l.base, {{fact, l.corpus.facts[fact].answer_id}},
                    l.corpus, 5, 0.1);
          }) == errc::range);
  }

  TEST_CASE("low-rank editing honors the rank bound and the zero identity") {
    const auto& l = tiny();
    const auto batch = tiny_batch();
    // Second factor starts at zero, so no steps means a zero merged delta.
    // The answer head (32x4) caps the rank at 4 on this fixture.
    CHECK(edit_lora(l.base, batch, l.corpus, 4, 0, 0.05, 32.0, 7)
              .bit_equal(l.base));
    CHECK(thrown_kind([&] {  // rank above the smallest adapted dimension
            edit_lora(l.base, batch, l.corpus, 5, 5, 0.05, 32.0, 7);
          }) == errc::rank);
  }

  TEST_CASE("one small ascent step strictly raises the forget loss") {
    const auto& l = tiny();
    const double before = mean_nll(l.base, l.forget);
    const ModelState after = unlearn_ga(l.base, l.forget, 1, 0.01);
    CHECK(mean_nll(after, l.forget) > before);
  }

  TEST_CASE("the ascent loss ceiling keeps long runs finite") {
    const auto& l = tiny();
    const ModelState after = unlearn_ga(l.base, l.forget, 400, 1.0);
    CHECK_NOTHROW(after.validate());  // finite parameters throughout
  }

  TEST_CASE("descent with a zero retain weight reduces to pure ascent") {
    const auto& l = tiny();
    const ModelState gd = unlearn_gd(l.base, l.forget, l.retain, 0.0, 7, 0.3);
    const ModelState ga = unlearn_ga(l.base, l.forget, 7, 0.3);
    CHECK(gd.bit_equal(ga));
  }

  TEST_CASE("forget and retain sets must not overlap") {
    const auto& l = tiny();
    std::vector<Item> retain = l.retain;
    retain.push_back(l.forget.front());
    CHECK(thrown_kind([&] {
            unlearn_gd(l.base, l.forget, retain, 1.0, 3, 0.1);
          }) == errc::overlap);
    CHECK(thrown_kind([&] {
            unlearn_rmu(l.base, l.forget, retain, 10.0, 100.0, 3, 0.001, 1);
          }) == errc::overlap);
  }

  TEST_CASE("representation steering trains only the first layer") {
    const auto& l = tiny();
    CHECK(unlearn_rmu(l.base, l.forget, l.retain, 10.0, 100.0, 0, 0.001, 1)
              .bit_equal(l.base));
    const ModelState after =
        unlearn_rmu(l.base, l.forget, l.retain, 10.0, 100.0, 5, 0.001, 1);
    CHECK(after.embedding.a == l.base.embedding.a);
    CHECK(after.w2.a == l.base.w2.a);
    CHECK(after.b2 == l.base.b2);
    CHECK(after.w1.a != l.base.w1.a);
  }

  TEST_CASE("the steering direction is a deterministic non-negative unit") {
    const auto u = rmu_direction(64, 42);
    REQUIRE(u.size() == 64);
    double norm2 = 0.0;
    for (double v : u) {
      CHECK(v >= 0.0);
      norm2 += v * v;
    }
    CHECK(std::abs(std::sqrt(norm2) - 1.0) <= 1e-12);
    CHECK(rmu_direction(64, 42) == u);
    CHECK(rmu_direction(64, 43) != u);
    CHECK_THROWS_AS(rmu_direction(0, 1), error);
  }

  TEST_CASE("pruning at zero sparsity is the identity with a full mask") {
    const auto& l = tiny();
    const std::vector<int> cal = {l.corpus.facts[0].query_token,
                                  l.corpus.facts[1].query_token};
    const auto [model, cs] = compress_prune(l.base, 0.0, cal);
    CHECK(model.bit_equal(l.base));
    for (double v : cs.w1_mask.a) CHECK(v == 1.0);
    for (double v : cs.w2_mask.a) CHECK(v == 1.0);
    CHECK(sparsity_ratio(model) == 0.0);
  }

  TEST_CASE("pruning removes the lowest activation-weighted scores") {
    // Two weights, equal input norms: the smaller magnitude must go.
    ModelState m;
    m.embedding = Matrix(1, 2);
    m.embedding.a = {1.0, 1.0};
    m.w1 = Matrix(1, 2);
    m.w1.a = {1.0, -4.0};
    m.b1 = {0.0};
    m.w2 = Matrix(2, 1);
    m.w2.a = {0.5, -0.5};
    m.b2 = {0.0, 0.0};
    const auto [pruned, cs] = compress_prune(m, 0.5, {0});
    CHECK(pruned.w1.a[0] == 0.0);
    CHECK(pruned.w1.a[1] == -4.0);
    CHECK(cs.w1_mask.a[0] == 0.0);
    CHECK(cs.w1_mask.a[1] == 1.0);
  }

  TEST_CASE("pruned sparsity matches the requested level") {
    const auto& l = tiny();
    std::vector<int> cal;
    for (int idx : l.corpus.split(Split::train)) {
      cal.push_back(l.corpus.facts[idx].query_token);
    }
    // Row lengths 16 and 32 are multiples of 4, so 0.25 is exact.
    const auto [model, cs] = compress_prune(l.base, 0.25, cal);
    CHECK(sparsity_ratio(model) == 0.25);
    CHECK(thrown_kind([&] { compress_prune(l.base, 1.0, cal); }) ==
          errc::range);
    CHECK(thrown_kind([&] { compress_prune(l.base, 0.5, {}); }) ==
          errc::empty_input);
  }

  TEST_CASE("quantization matches a brute-force grid search") {
    const auto& l = tiny();
    Rng rng(314);
    ModelState m = l.base;
    for (double& w : m.w1.a) w = rng.normal();
    const int b = 3, g = m.w1.cols;
    const auto [q, cs] = compress_quantize(m, b, g);
    const double k_levels = static_cast<double>((1 << (b - 1)) - 1);
    std::size_t scale_idx = 0;
    for (int r = 0; r < m.w1.rows; ++r) {
      const double scale = cs.w1_scales[scale_idx++];
      for (int c = 0; c < m.w1.cols; ++c) {
        const double w = m.w1.at(r, c);
        double best = 0.0, best_dist = std::abs(w);
        for (int level = -static_cast<int>(k_levels);
             level <= static_cast<int>(k_levels); ++level) {
          const double v = (level / k_levels) * scale;
          const double dist = std::abs(w - v);
          if (dist < best_dist ||
              (dist == best_dist && std::abs(v) > std::abs(best))) {
            best = v;
            best_dist = dist;
          }
        }
        CHECK(q.w1.at(r, c) == best);
      }
    }
  }

  TEST_CASE("zeros are grid points and high precision changes little") {
    const auto& l = tiny();
    ModelState m = l.base;
    for (int c = 0; c < m.w1.cols; ++c) m.w1.at(0, c) = 0.0;  // zero group
    const auto [q16, cs16] = compress_quantize(m, 16, 8);
    for (int c = 0; c < m.w1.cols; ++c) CHECK(q16.w1.at(0, c) == 0.0);

    // Per group, the rounding error is at most half a grid step.
    const double k_levels = static_cast<double>((1 << 15) - 1);
    std::size_t scale_idx = 0;
    for (int r = 0; r < m.w1.rows; ++r) {
      for (int start = 0; start < m.w1.cols; start += 8) {
        const double scale = cs16.w1_scales[scale_idx++];
        const double half_step = scale / k_levels / 2.0 * (1.0 + 1e-12);
        for (int c = start; c < std::min(start + 8, m.w1.cols); ++c) {
          CHECK(std::abs(q16.w1.at(r, c) - m.w1.at(r, c)) <= half_step);
        }
      }
    }
    CHECK(thrown_kind([&] { compress_quantize(m, 1, 8); }) == errc::range);
    CHECK(thrown_kind([&] { compress_quantize(m, 4, 0); }) == errc::range);
  }

  TEST_CASE("requantization with the same grid is idempotent") {
    const auto& l = tiny();
    const auto [q1, cs1] = compress_quantize(l.base, 4, 8);
    const auto [q2, cs2] = compress_quantize(q1, 4, 8);
    CHECK(q2.bit_equal(q1));
    CHECK(cs2.w1_scales == cs1.w1_scales);
  }

  TEST_CASE("stored compressions re-apply identically to new models") {
    const auto& l = tiny();
    std::vector<int> cal;
    for (int idx : l.corpus.split(Split::train)) {
      cal.push_back(l.corpus.facts[idx].query_token);
    }
    const auto [pruned, cs] = compress_prune(l.base, 0.5, cal);
    const ModelState other = unlearn_ga(l.base, l.forget, 2, 0.05);
    const auto [ra, csa] = recompress(other, cs);
    const auto [rb, csb] = compress_prune(other, 0.5, cal);
    CHECK(ra.bit_equal(rb));
    CHECK(csa.w1_mask.a == csb.w1_mask.a);
    CHECK(csa.w2_mask.a == csb.w2_mask.a);
  }

  TEST_CASE("the decompress-recompress protocol restores clean state") {
    const auto& l = tiny();
    const auto [q, cs] = compress_quantize(l.base, 4, 8);
    AppliedIntervention applied;
    applied.spec = make_spec("q4", InterventionKind::compress, "quantize",
                             {4.0});
    applied.gamma = 4.0;
    applied.resulting_model = q;
    applied.compression_state = cs;
    applied.provenance = {"quantize@4"};

    // An identity inner operation must reproduce the compressed model.
    const AppliedIntervention same = reenter_compressed(
        applied, [](const ModelState& m) { return m; }, "noop");
    CHECK(same.resulting_model.bit_equal(q));
    CHECK(same.provenance.size() > applied.provenance.size());

    AppliedIntervention bare;
    bare.spec = applied.spec;
    bare.resulting_model = q;
    CHECK(thrown_kind([&] {
            reenter_compressed(bare, [](const ModelState& m) { return m; },
                               "noop");
          }) == errc::missing_backup);
  }
}
