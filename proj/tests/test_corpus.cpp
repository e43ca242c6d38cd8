#include <doctest.h>

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "interlab/corpus.hpp"
#include "interlab/errors.hpp"

using namespace interlab;

namespace {

std::string corpus_text(const FactCorpus& c) {
  std::ostringstream out;
  write_corpus(c, out);
  return out.str();
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("reference parameters give the documented split sizes") {
    CorpusParams p;
    p.seed = 7;
    p.vocab_size = 5000;
    p.answer_count = 4;
    p.num_facts = 300;
    p.paraphrases_per_fact = 12;
    p.split_fractions = {0.5, 0.2, 0.1, 0.1, 0.1};
    const FactCorpus c = generate_corpus(p);

    CHECK(c.facts.size() == 300);
    CHECK(c.split(Split::train).size() == 150);
    CHECK(c.split(Split::edit_pool).size() == 60);
    CHECK(c.split(Split::forget).size() == 30);
    CHECK(c.split(Split::retain).size() == 30);
    CHECK(c.split(Split::utility_holdout).size() == 30);
    CHECK_NOTHROW(c.validate());

    for (const Fact& f : c.facts) {
      CHECK(f.answer_id >= 0);
      CHECK(f.answer_id < 4);
      CHECK(f.paraphrase_tokens.size() == 12);
      CHECK(f.query_token < 5000);
    }
  }

  TEST_CASE("generation is a deterministic function of its parameters") {
    CorpusParams p;
    p.seed = 7;
    const std::string a = corpus_text(generate_corpus(p));
    const std::string b = corpus_text(generate_corpus(p));
    CHECK(a == b);
    p.seed = 8;
    CHECK(a != corpus_text(generate_corpus(p)));
  }

  TEST_CASE("vocabulary capacity is enforced") {
    CorpusParams p;
    p.vocab_size = 10;
    p.num_facts = 300;
    try {
      generate_corpus(p);
      FAIL("expected a capacity error");
    } catch (const error& e) {
      CHECK(e.kind() == errc::capacity);
    }
  }

  TEST_CASE("split fractions must form a distribution") {
    CorpusParams p;
    p.split_fractions = {0.5, 0.2, 0.1, 0.1, 0.3};  // sums to 1.2
    try {
      generate_corpus(p);
      FAIL("expected a fraction error");
    } catch (const error& e) {
      CHECK(e.kind() == errc::fraction);
    }
    p.split_fractions = {0.7, 0.2, 0.1, 0.1, -0.1};
    CHECK_THROWS_AS(generate_corpus(p), error);
  }

  TEST_CASE("edit batches are disjoint, in-pool, and answer-changing") {
    CorpusParams p;
    p.seed = 7;
    p.vocab_size = 20000;
    p.num_facts = 1500;
    p.answer_count = 8;
    p.split_fractions = {0.3, 0.4, 0.1, 0.1, 0.1};
    const FactCorpus c = generate_corpus(p);
    REQUIRE(c.split(Split::edit_pool).size() == 600);

    const auto batches = sample_edit_batches(c, 10, 50, 42);
    REQUIRE(batches.size() == 10);
    std::set<int> seen;
    for (const auto& batch : batches) {
      CHECK(batch.size() == 50);
      for (const EditRequest& e : batch) {
        CHECK(seen.insert(e.fact_id).second);  // no fact reused anywhere
        CHECK(c.split_of(e.fact_id) == Split::edit_pool);
        CHECK(e.new_answer_id != c.facts[e.fact_id].answer_id);
        CHECK(e.new_answer_id >= 0);
        CHECK(e.new_answer_id < c.answer_count);
      }
    }

    // Deterministic under the seed, different under another.
    const auto again = sample_edit_batches(c, 10, 50, 42);
    CHECK(batches.size() == again.size());
    bool identical = true;
    for (std::size_t i = 0; i < batches.size(); ++i) {
      for (std::size_t k = 0; k < batches[i].size(); ++k) {
        if (batches[i][k].fact_id != again[i][k].fact_id ||
            batches[i][k].new_answer_id != again[i][k].new_answer_id) {
          identical = false;
        }
      }
    }
    CHECK(identical);

    SUBCASE("zero-size batches are allowed") {
      const auto empty = sample_edit_batches(c, 1, 0, 1);
      REQUIRE(empty.size() == 1);
      CHECK(empty[0].empty());
    }

    SUBCASE("pool exhaustion is detected") {
      try {
        sample_edit_batches(c, 20, 50, 1);  // 1000 > 600
        FAIL("expected pool exhaustion");
      } catch (const error& e) {
        CHECK(e.kind() == errc::pool_exhausted);
      }
    }
  }

  TEST_CASE("plain-text serialization round-trips exactly") {
    CorpusParams p;
    p.seed = 11;
    p.vocab_size = 400;
    p.num_facts = 20;
    p.answer_count = 4;
    const FactCorpus c = generate_corpus(p);
    std::stringstream buf(corpus_text(c));
    const FactCorpus back = read_corpus(buf);
    CHECK(corpus_text(back) == corpus_text(c));
    CHECK_NOTHROW(back.validate());
  }

  TEST_CASE("split membership helpers agree") {
    CorpusParams p;
    p.seed = 11;
    p.vocab_size = 400;
    p.num_facts = 20;
    const FactCorpus c = generate_corpus(p);
    std::size_t total = 0;
    for (int s = 0; s < kSplitCount; ++s) {
      const Split split = static_cast<Split>(s);
      for (int idx : c.split(split)) {
        CHECK(c.split_of(idx) == split);
      }
      const auto items = c.split_query_items(split);
      CHECK(items.size() == c.split(split).size());
      for (const auto& [token, answer] : items) {
        CHECK(token < c.vocab_size);
        CHECK(answer < c.answer_count);
      }
      total += c.split(split).size();
    }
    CHECK(total == c.facts.size());
    // Query + paraphrase items cover every phrasing exactly once.
    CHECK(c.all_items().size() ==
          c.facts.size() * (1 + c.paraphrases_per_fact));
  }
}
