#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "interlab/errors.hpp"

namespace interlab {

// The five roles a fact can play in an experiment. A fact belongs to exactly
// one split: facts to keep knowing (train), facts that may be edited
// (edit_pool), facts to unlearn (forget), facts whose knowledge must survive
// unlearning (retain), and facts held out for the utility criterion.
enum class Split {
  train = 0,
  edit_pool,
  forget,
  retain,
  utility_holdout,
};
inline constexpr int kSplitCount = 5;

const char* split_name(Split s);
std::optional<Split> split_from_name(std::string_view name);

// One synthetic fact: a canonical query token, P alternate phrasings of the
// same query, and the answer class it maps to.
struct Fact {
  int fact_id = 0;
  int query_token = 0;
  std::vector<int> paraphrase_tokens;
  int answer_id = 0;
};

// A request to rebind one fact to a different answer class.
struct EditRequest {
  int fact_id = 0;
  int new_answer_id = 0;
};

// (token, answer) supervision item.
using Item = std::pair<int, int>;

struct FactCorpus {
  int vocab_size = 0;
  int answer_count = 0;
  int paraphrases_per_fact = 0;
  std::vector<Fact> facts;
  // Disjoint fact-index sets, each sorted ascending.
  std::array<std::vector<int>, kSplitCount> splits;

  const std::vector<int>& split(Split s) const {
    return splits[static_cast<int>(s)];
  }
  Split split_of(int fact_index) const;

  // Query items of one split.
  std::vector<Item> split_query_items(Split s) const;
  // Query + paraphrase items of one split.
  std::vector<Item> split_all_items(Split s) const;
  // Query + paraphrase items over the whole corpus (base-training set).
  std::vector<Item> all_items() const;

  // Throws on any invariant violation (disjointness, token collisions,
  // answer ranges, paraphrase counts).
  void validate() const;
};

struct CorpusParams {
  std::uint64_t seed = 7;
  int vocab_size = 5000;
  int answer_count = 8;
  int num_facts = 300;
  int paraphrases_per_fact = 12;
  // Fractions for train / edit_pool / forget / retain / utility_holdout.
  std::array<double, kSplitCount> split_fractions{0.5, 0.2, 0.1, 0.1, 0.1};
};

// Deterministic corpus generation: same params (seed included) ⇒
// bit-identical corpus. Split sizes follow largest-remainder apportionment
// of the fractions.
FactCorpus generate_corpus(const CorpusParams& params);

// Draws num_batches disjoint batches of batch_size facts from the edit pool,
// each with a new answer sampled uniformly from the answers that differ from
// the original. Batches are disjoint from each other (sampling without
// replacement across the whole draw).
std::vector<std::vector<EditRequest>> sample_edit_batches(
    const FactCorpus& corpus, int num_batches, int batch_size,
    std::uint64_t seed);

// Plain-text tabular export/import; round-trips bit-exactly. Format is
// documented in the README (one header block, then one fact per line).
void write_corpus(const FactCorpus& corpus, std::ostream& out);
void write_corpus_file(const FactCorpus& corpus, const std::string& path);
FactCorpus read_corpus(std::istream& in);
FactCorpus read_corpus_file(const std::string& path);

}  // namespace interlab
