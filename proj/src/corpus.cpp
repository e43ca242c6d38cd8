#include "interlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "interlab/rng.hpp"

namespace interlab {

namespace {

constexpr const char* kSplitNames[kSplitCount] = {
    "train", "edit_pool", "forget", "retain", "utility_holdout"};

// Largest-remainder apportionment of `total` across the fractions: exact
// when the products are integral, and always sums to `total`.
std::array<int, kSplitCount> split_sizes(
    const std::array<double, kSplitCount>& fractions, int total) {
  std::array<int, kSplitCount> sizes{};
  std::array<double, kSplitCount> remainders{};
  int assigned = 0;
  for (int s = 0; s < kSplitCount; ++s) {
    double target = fractions[s] * total;
    sizes[s] = static_cast<int>(std::floor(target + 1e-9));
    remainders[s] = target - sizes[s];
    assigned += sizes[s];
  }
  std::array<int, kSplitCount> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return remainders[a] > remainders[b];
  });
  for (int k = 0; assigned < total; ++k, ++assigned) {
    sizes[order[k % kSplitCount]] += 1;
  }
  return sizes;
}

}  // namespace

const char* split_name(Split s) { return kSplitNames[static_cast<int>(s)]; }

std::optional<Split> split_from_name(std::string_view name) {
  for (int s = 0; s < kSplitCount; ++s) {
    if (name == kSplitNames[s]) return static_cast<Split>(s);
  }
  return std::nullopt;
}

Split FactCorpus::split_of(int fact_index) const {
  for (int s = 0; s < kSplitCount; ++s) {
    const auto& idx = splits[s];
    if (std::binary_search(idx.begin(), idx.end(), fact_index)) {
      return static_cast<Split>(s);
    }
  }
  fail(errc::range, "fact index " + std::to_string(fact_index) +
                        " belongs to no split");
}

std::vector<Item> FactCorpus::split_query_items(Split s) const {
  std::vector<Item> items;
  items.reserve(split(s).size());
  for (int idx : split(s)) {
    items.emplace_back(facts[idx].query_token, facts[idx].answer_id);
  }
  return items;
}

std::vector<Item> FactCorpus::split_all_items(Split s) const {
  std::vector<Item> items;
  items.reserve(split(s).size() * (1 + paraphrases_per_fact));
  for (int idx : split(s)) {
    const Fact& f = facts[idx];
    items.emplace_back(f.query_token, f.answer_id);
    for (int t : f.paraphrase_tokens) items.emplace_back(t, f.answer_id);
  }
  return items;
}

std::vector<Item> FactCorpus::all_items() const {
  std::vector<Item> items;
  items.reserve(facts.size() * (1 + paraphrases_per_fact));
  for (const Fact& f : facts) {
    items.emplace_back(f.query_token, f.answer_id);
    for (int t : f.paraphrase_tokens) items.emplace_back(t, f.answer_id);
  }
  return items;
}

void FactCorpus::validate() const {
  if (answer_count < 4) {
    fail(errc::range, "answer_count must be >= 4 so chance <= 0.25, got " +
                          std::to_string(answer_count));
  }
  if (paraphrases_per_fact < 10) {
    fail(errc::range,
         "paraphrases_per_fact must be >= 10 for generalization holdout");
  }
  std::unordered_set<int> seen_tokens;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const Fact& f = facts[i];
    if (f.fact_id != static_cast<int>(i)) {
      fail(errc::range, "fact_id out of order at index " + std::to_string(i));
    }
    if (f.answer_id < 0 || f.answer_id >= answer_count) {
      fail(errc::range, "answer_id out of range for fact " +
                            std::to_string(f.fact_id));
    }
    if (static_cast<int>(f.paraphrase_tokens.size()) != paraphrases_per_fact) {
      fail(errc::range, "fact " + std::to_string(f.fact_id) +
                            " has wrong paraphrase count");
    }
    auto check_token = [&](int t) {
      if (t < 0 || t >= vocab_size) {
        fail(errc::range, "token out of vocabulary: " + std::to_string(t));
      }
      if (!seen_tokens.insert(t).second) {
        fail(errc::range, "token collision across facts: " + std::to_string(t));
      }
    };
    check_token(f.query_token);
    for (int t : f.paraphrase_tokens) check_token(t);
  }
  std::vector<char> covered(facts.size(), 0);
  std::size_t total = 0;
  for (const auto& idx : splits) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      int i = idx[k];
      if (i < 0 || i >= static_cast<int>(facts.size())) {
        fail(errc::range, "split references invalid fact index");
      }
      if (k > 0 && idx[k - 1] >= i) {
        fail(errc::range, "split indices not sorted ascending");
      }
      if (covered[i]++) fail(errc::range, "splits are not disjoint");
    }
    total += idx.size();
  }
  if (total != facts.size()) {
    fail(errc::range, "splits do not cover every fact");
  }
}

FactCorpus generate_corpus(const CorpusParams& p) {
  if (p.num_facts < 10) fail(errc::range, "num_facts must be >= 10");
  if (p.answer_count < 4) {
    fail(errc::range,
         "answer_count must be >= 4 (chance rate at most 0.25); got " +
             std::to_string(p.answer_count));
  }
  if (p.paraphrases_per_fact < 10) {
    fail(errc::range, "paraphrases_per_fact must be >= 10");
  }
  double frac_sum = 0.0;
  for (double f : p.split_fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      fail(errc::fraction, "split fractions must be non-negative and finite");
    }
    frac_sum += f;
  }
  if (std::abs(frac_sum - 1.0) > 1e-9) {
    fail(errc::fraction, "split fractions must sum to 1");
  }
  const long long needed =
      static_cast<long long>(p.num_facts) * (1 + p.paraphrases_per_fact) +
      p.answer_count;
  if (static_cast<long long>(p.vocab_size) < needed) {
    fail(errc::capacity, "vocab_size " + std::to_string(p.vocab_size) +
                             " cannot host " + std::to_string(needed) +
                             " distinct ids");
  }

  Rng rng(derive_seed(p.seed, "corpus"));

  // Distinct tokens for every query and paraphrase: a seeded permutation of
  // the vocabulary, consumed in fact order.
  std::vector<int> tokens(p.vocab_size);
  std::iota(tokens.begin(), tokens.end(), 0);
  rng.shuffle(tokens);

  FactCorpus corpus;
  corpus.vocab_size = p.vocab_size;
  corpus.answer_count = p.answer_count;
  corpus.paraphrases_per_fact = p.paraphrases_per_fact;
  corpus.facts.resize(p.num_facts);
  std::size_t next_token = 0;
  for (int i = 0; i < p.num_facts; ++i) {
    Fact& f = corpus.facts[i];
    f.fact_id = i;
    f.query_token = tokens[next_token++];
    f.paraphrase_tokens.resize(p.paraphrases_per_fact);
    for (int k = 0; k < p.paraphrases_per_fact; ++k) {
      f.paraphrase_tokens[k] = tokens[next_token++];
    }
  }

  // Assign facts to splits: shuffled fact order sliced by the apportioned
  // sizes, each slice then sorted (canonical form).
  auto sizes = split_sizes(p.split_fractions, p.num_facts);
  std::vector<int> fact_order(p.num_facts);
  std::iota(fact_order.begin(), fact_order.end(), 0);
  rng.shuffle(fact_order);
  std::size_t cursor = 0;
  for (int s = 0; s < kSplitCount; ++s) {
    auto& idx = corpus.splits[s];
    idx.assign(fact_order.begin() + cursor,
               fact_order.begin() + cursor + sizes[s]);
    std::sort(idx.begin(), idx.end());
    cursor += sizes[s];
  }

  // Answers: the utility holdout draws from a reserved band of answer ids
  // that no other split uses, making it a measure of unrelated capability
  // (the way a general benchmark's answers are unrelated to edited facts)
  // rather than of collateral damage inside the editable fact space.
  const int reserved = std::max(1, p.answer_count / 4);
  const int main_band = p.answer_count - reserved;
  std::vector<bool> is_utility(p.num_facts, false);
  for (int id : corpus.split(Split::utility_holdout)) is_utility[id] = true;
  for (int i = 0; i < p.num_facts; ++i) {
    corpus.facts[i].answer_id =
        is_utility[i]
            ? main_band + static_cast<int>(rng.below(reserved))
            : static_cast<int>(rng.below(main_band));
  }

  corpus.validate();
  return corpus;
}

std::vector<std::vector<EditRequest>> sample_edit_batches(
    const FactCorpus& corpus, int num_batches, int batch_size,
    std::uint64_t seed) {
  if (num_batches < 0 || batch_size < 0) {
    fail(errc::range, "batch counts must be non-negative");
  }
  const auto& pool = corpus.split(Split::edit_pool);
  const long long wanted =
      static_cast<long long>(num_batches) * batch_size;
  if (wanted > static_cast<long long>(pool.size())) {
    fail(errc::pool_exhausted,
         "requested " + std::to_string(wanted) + " edits from a pool of " +
             std::to_string(pool.size()));
  }

  Rng rng(derive_seed(seed, "edit-batches"));
  std::vector<int> order = pool;
  rng.shuffle(order);

  std::vector<std::vector<EditRequest>> batches(num_batches);
  std::size_t cursor = 0;
  for (int b = 0; b < num_batches; ++b) {
    batches[b].resize(batch_size);
    for (int k = 0; k < batch_size; ++k) {
      int fact_index = order[cursor++];
      const Fact& f = corpus.facts[fact_index];
      // Uniform over the answers that differ from the original.
      int draw = static_cast<int>(rng.below(corpus.answer_count - 1));
      if (draw >= f.answer_id) ++draw;
      batches[b][k] = EditRequest{f.fact_id, draw};
    }
  }
  return batches;
}

void write_corpus(const FactCorpus& corpus, std::ostream& out) {
  out << "# fact corpus v1\n";
  out << "vocab_size " << corpus.vocab_size << "\n";
  out << "answer_count " << corpus.answer_count << "\n";
  out << "paraphrases_per_fact " << corpus.paraphrases_per_fact << "\n";
  out << "num_facts " << corpus.facts.size() << "\n";
  out << "# columns: fact_id query_token paraphrase_tokens(comma-sep) "
         "answer_id split\n";
  for (std::size_t i = 0; i < corpus.facts.size(); ++i) {
    const Fact& f = corpus.facts[i];
    out << f.fact_id << ' ' << f.query_token << ' ';
    for (std::size_t k = 0; k < f.paraphrase_tokens.size(); ++k) {
      if (k) out << ',';
      out << f.paraphrase_tokens[k];
    }
    out << ' ' << f.answer_id << ' '
        << split_name(corpus.split_of(static_cast<int>(i))) << "\n";
  }
  if (!out) fail(errc::io, "corpus write failed");
}

void write_corpus_file(const FactCorpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(errc::io, "cannot open for writing: " + path);
  write_corpus(corpus, out);
  if (!out.flush()) fail(errc::io, "corpus write failed: " + path);
}

namespace {

std::string next_content_line(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') return line;
  }
  fail(errc::io, "unexpected end of corpus file");
}

long long parse_header_int(std::istream& in, const std::string& key) {
  std::istringstream ls(next_content_line(in));
  std::string name;
  long long value = 0;
  if (!(ls >> name >> value) || name != key) {
    fail(errc::io, "corpus header: expected '" + key + "'");
  }
  return value;
}

}  // namespace

FactCorpus read_corpus(std::istream& in) {
  FactCorpus corpus;
  corpus.vocab_size = static_cast<int>(parse_header_int(in, "vocab_size"));
  corpus.answer_count = static_cast<int>(parse_header_int(in, "answer_count"));
  corpus.paraphrases_per_fact =
      static_cast<int>(parse_header_int(in, "paraphrases_per_fact"));
  const long long num_facts = parse_header_int(in, "num_facts");
  corpus.facts.resize(num_facts);
  for (long long i = 0; i < num_facts; ++i) {
    std::istringstream ls(next_content_line(in));
    Fact& f = corpus.facts[i];
    std::string paraphrases, split;
    if (!(ls >> f.fact_id >> f.query_token >> paraphrases >> f.answer_id >>
          split)) {
      fail(errc::io, "corpus fact line " + std::to_string(i) + " malformed");
    }
    std::istringstream ps(paraphrases);
    std::string tok;
    while (std::getline(ps, tok, ',')) {
      f.paraphrase_tokens.push_back(std::stoi(tok));
    }
    auto s = split_from_name(split);
    if (!s) fail(errc::io, "unknown split name: " + split);
    corpus.splits[static_cast<int>(*s)].push_back(f.fact_id);
  }
  for (auto& idx : corpus.splits) std::sort(idx.begin(), idx.end());
  corpus.validate();
  return corpus;
}

FactCorpus read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open corpus file: " + path);
  return read_corpus(in);
}

}  // namespace interlab
