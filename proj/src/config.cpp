#include "interlab/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace interlab {

using nlohmann::json;

namespace {

std::vector<std::string> default_criteria(InterventionKind kind) {
  switch (kind) {
    case InterventionKind::edit:
      return {kEditSuccess, kEditGeneralization, kEditLocality, kUtility};
    case InterventionKind::unlearn:
      return {kUnlearning, kUtility};
    case InterventionKind::compress:
      return {kUtility};
    case InterventionKind::identity:
      return {};
  }
  return {};
}

InterventionSpec default_spec_for_op(const std::string& op) {
  InterventionSpec s;
  s.name = op;
  s.op = op;
  if (op == "ft") {
    s.kind = InterventionKind::edit;
    s.gamma_grid = {0.5};
    s.params = {{"steps", 25}};
  } else if (op == "lora") {
    s.kind = InterventionKind::edit;
    s.gamma_grid = {0.05};
    s.params = {{"steps", 50}, {"rank", 8}, {"scaling", 32}};
  } else if (op == "ga") {
    s.kind = InterventionKind::unlearn;
    s.gamma_grid = {1.0};
    s.params = {{"steps", 150}};
  } else if (op == "gd") {
    s.kind = InterventionKind::unlearn;
    s.gamma_grid = {0.1};
    s.params = {{"steps", 150}, {"alpha", 40}};
  } else if (op == "rmu") {
    // The retain anchor is a stiff quadratic: its curvature scales with
    // alpha times the clustered embedding Gram spectrum, so the step size
    // must stay well below the divergence threshold; the large steering
    // magnitude c restores progress along the forget directions.
    s.kind = InterventionKind::unlearn;
    s.gamma_grid = {0.0002};
    s.params = {{"steps", 2000}, {"alpha", 1000}, {"c", 50}};
  } else if (op == "prune") {
    s.kind = InterventionKind::compress;
    s.gamma_grid = {0.25, 0.35, 0.45, 0.55, 0.65, 0.75};
    s.params = {{"calibration", 128}};
  } else if (op == "quantize") {
    s.kind = InterventionKind::compress;
    s.gamma_grid = {2, 3, 4, 8};
    s.params = {{"group", 64}};
  } else if (op == "none") {
    s.kind = InterventionKind::identity;
    s.gamma_grid = {0.0};
  } else {
    fail(errc::config, "unknown operator '" + op + "'");
  }
  if (op == "quantize") {
    s.default_gamma = 4.0;
  } else if (op == "prune") {
    s.default_gamma = 0.55;
  } else {
    s.default_gamma = s.gamma_grid.front();
  }
  s.criteria = default_criteria(s.kind);
  return s;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      fail(errc::config, "unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace

const InterventionSpec* ExperimentConfig::find(const std::string& name) const {
  for (const auto& spec : roster) {
    if (spec.name == name) return &spec;
  }
  return nullptr;
}

std::vector<std::pair<const InterventionSpec*, const InterventionSpec*>>
ExperimentConfig::resolved_pairs() const {
  std::vector<std::pair<std::string, std::string>> named = pairs;
  if (all_pairs) {
    named.clear();
    for (std::size_t i = 0; i < roster.size(); ++i) {
      for (std::size_t j = i + 1; j < roster.size(); ++j) {
        named.emplace_back(roster[i].name, roster[j].name);
      }
    }
  }
  std::vector<std::pair<const InterventionSpec*, const InterventionSpec*>> out;
  for (const auto& [a, b] : named) {
    const InterventionSpec* sa = find(a);
    const InterventionSpec* sb = find(b);
    if (!sa || !sb) {
      fail(errc::config, "pair references unknown intervention '" +
                             (sa ? b : a) + "'");
    }
    if (sa == sb) fail(errc::config, "pair must name two distinct interventions");
    // The swept side (multi-point grid) goes first; ties keep config order.
    if (!sa->multi_gamma() && sb->multi_gamma()) std::swap(sa, sb);
    out.emplace_back(sa, sb);
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (repetitions < 1) fail(errc::config, "repetitions must be >= 1");
  if (batch_size < 0) fail(errc::config, "batch_size must be non-negative");
  if (locality_sample < 1) fail(errc::config, "locality_sample must be >= 1");
  if (pruned_edit_mode != "recompress" && pruned_edit_mode != "masked") {
    fail(errc::config,
         "pruned_edit_mode must be 'recompress' or 'masked', got '" +
             pruned_edit_mode + "'");
  }
  if (roster.empty()) fail(errc::config, "intervention roster is empty");
  std::set<std::string> names;
  for (const auto& spec : roster) {
    spec.validate();
    if (spec.name == "none") {
      fail(errc::config, "'none' is reserved for the identity intervention");
    }
    if (!names.insert(spec.name).second) {
      fail(errc::config, "duplicate intervention name '" + spec.name + "'");
    }
  }
  if (decay_bound) {
    if (decay_bound->floor_value < 0.0 || decay_bound->floor_value > 1.0) {
      fail(errc::config, "decay bound floor must lie in [0, 1]");
    }
    static const std::set<std::string> known = {
        kEditSuccess, kEditGeneralization, kEditLocality, kUnlearning,
        kUtility};
    if (!known.count(decay_bound->guard_criterion)) {
      fail(errc::config, "unknown guard criterion '" +
                             decay_bound->guard_criterion + "'");
    }
  }
  bool any_edit = false;
  for (const auto& [i, j] : resolved_pairs()) {
    any_edit = any_edit || i->kind == InterventionKind::edit ||
               j->kind == InterventionKind::edit;
  }
  for (const auto& spec : roster) {
    any_edit = any_edit || spec.kind == InterventionKind::edit;
  }
  if (any_edit && batch_size < 1) {
    fail(errc::config, "edit interventions need batch_size >= 1");
  }
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.corpus.seed = 7;
  cfg.corpus.vocab_size = 20000;
  cfg.corpus.answer_count = 8;
  cfg.corpus.num_facts = 1500;
  cfg.corpus.paraphrases_per_fact = 12;
  cfg.corpus.split_fractions = {0.3, 0.4, 0.1, 0.1, 0.1};
  cfg.train.learning_rate = 0.5;
  cfg.train.steps = 4000;
  cfg.train.batch_size = 128;
  cfg.train.seed = 1;
  cfg.roster = {default_spec_for_op("ft"),    default_spec_for_op("lora"),
                default_spec_for_op("ga"),    default_spec_for_op("gd"),
                default_spec_for_op("rmu"),   default_spec_for_op("prune"),
                default_spec_for_op("quantize")};
  cfg.pairs = {
      {"ft", "prune"},   {"ft", "quantize"},   {"lora", "prune"},
      {"lora", "quantize"}, {"ga", "prune"},   {"ga", "quantize"},
      {"gd", "prune"},   {"gd", "quantize"},   {"rmu", "prune"},
      {"rmu", "quantize"}, {"ft", "ga"},       {"ft", "gd"},
      {"ft", "rmu"},     {"lora", "ga"},       {"lora", "gd"},
      {"lora", "rmu"},
  };
  cfg.repetitions = 10;
  cfg.batch_size = 50;
  cfg.locality_sample = 200;
  cfg.master_seed = 1234;
  return cfg;
}

ExperimentConfig smoke_experiment_config() {
  ExperimentConfig cfg;
  cfg.corpus.seed = 11;
  cfg.corpus.vocab_size = 300;
  cfg.corpus.answer_count = 4;
  cfg.corpus.num_facts = 20;
  cfg.corpus.paraphrases_per_fact = 12;
  cfg.corpus.split_fractions = {0.3, 0.3, 0.1, 0.1, 0.2};
  cfg.net.embed_dim = 16;
  cfg.net.hidden_dim = 32;
  cfg.train.steps = 600;
  cfg.train.batch_size = 64;
  cfg.roster = {default_spec_for_op("ft"), default_spec_for_op("prune")};
  cfg.roster[1].gamma_grid = {0.25, 0.5};
  cfg.roster[1].default_gamma = 0.25;
  cfg.pairs = {{"ft", "prune"}};
  cfg.repetitions = 2;
  cfg.batch_size = 3;
  cfg.locality_sample = 10;
  cfg.master_seed = 99;
  return cfg;
}

namespace {

InterventionSpec parse_spec(const json& j) {
  reject_unknown_keys(j,
                      {"name", "kind", "op", "gamma_grid", "default_gamma",
                       "params", "criteria"},
                      "intervention");
  if (!j.contains("op")) fail(errc::config, "intervention needs an 'op'");
  InterventionSpec spec = default_spec_for_op(j.at("op").get<std::string>());
  if (j.contains("name")) spec.name = j.at("name").get<std::string>();
  if (j.contains("kind")) {
    auto kind = kind_from_name(j.at("kind").get<std::string>());
    if (!kind) fail(errc::config, "unknown intervention kind");
    spec.kind = *kind;
  }
  if (j.contains("gamma_grid")) {
    spec.gamma_grid = j.at("gamma_grid").get<std::vector<double>>();
    spec.default_gamma = spec.gamma_grid.empty() ? 0.0 : spec.gamma_grid.front();
  }
  if (j.contains("default_gamma")) {
    spec.default_gamma = j.at("default_gamma").get<double>();
  }
  if (j.contains("params")) {
    for (const auto& [key, value] : j.at("params").items()) {
      if (!value.is_number()) {
        fail(errc::config, "parameter '" + key + "' must be numeric");
      }
      spec.params[key] = value.get<double>();
    }
  }
  if (j.contains("criteria")) {
    spec.criteria = j.at("criteria").get<std::vector<std::string>>();
  }
  return spec;
}

json spec_to_json(const InterventionSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["kind"] = kind_name(spec.kind);
  j["op"] = spec.op;
  j["gamma_grid"] = spec.gamma_grid;
  j["default_gamma"] = spec.default_gamma;
  j["params"] = json::object();
  for (const auto& [key, value] : spec.params) j["params"][key] = value;
  j["criteria"] = spec.criteria;
  return j;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, /*allow_exceptions=*/true,
                    /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    fail(errc::io, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(errc::config, "config root must be an object");
  reject_unknown_keys(
      j,
      {"master_seed", "output_dir", "repetitions", "batch_size",
       "locality_sample", "pruned_edit_mode", "decay_bound", "corpus", "net",
       "train", "interventions", "pairs", "all_pairs"},
      "config");

  ExperimentConfig cfg = default_experiment_config();
  try {
    if (j.contains("master_seed")) {
      cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    }
    if (j.contains("output_dir")) {
      cfg.output_dir = j.at("output_dir").get<std::string>();
      cfg.output_dir_from_config = true;
    }
    if (j.contains("repetitions")) {
      cfg.repetitions = j.at("repetitions").get<int>();
    }
    if (j.contains("batch_size")) {
      cfg.batch_size = j.at("batch_size").get<int>();
    }
    if (j.contains("locality_sample")) {
      cfg.locality_sample = j.at("locality_sample").get<int>();
    }
    if (j.contains("pruned_edit_mode")) {
      cfg.pruned_edit_mode = j.at("pruned_edit_mode").get<std::string>();
    }
    if (j.contains("decay_bound")) {
      const json& b = j.at("decay_bound");
      reject_unknown_keys(b, {"guard_criterion", "floor"}, "decay_bound");
      DecayBound bound;
      if (b.contains("guard_criterion")) {
        bound.guard_criterion = b.at("guard_criterion").get<std::string>();
      }
      bound.floor_value = b.at("floor").get<double>();
      cfg.decay_bound = bound;
    }
    if (j.contains("corpus")) {
      const json& c = j.at("corpus");
      reject_unknown_keys(c,
                          {"seed", "vocab_size", "answer_count", "num_facts",
                           "paraphrases_per_fact", "split_fractions"},
                          "corpus");
      if (c.contains("seed")) cfg.corpus.seed = c.at("seed").get<std::uint64_t>();
      if (c.contains("vocab_size")) {
        cfg.corpus.vocab_size = c.at("vocab_size").get<int>();
      }
      if (c.contains("answer_count")) {
        cfg.corpus.answer_count = c.at("answer_count").get<int>();
      }
      if (c.contains("num_facts")) {
        cfg.corpus.num_facts = c.at("num_facts").get<int>();
      }
      if (c.contains("paraphrases_per_fact")) {
        cfg.corpus.paraphrases_per_fact =
            c.at("paraphrases_per_fact").get<int>();
      }
      if (c.contains("split_fractions")) {
        auto fr = c.at("split_fractions").get<std::vector<double>>();
        if (fr.size() != kSplitCount) {
          fail(errc::config, "split_fractions needs exactly 5 entries");
        }
        std::copy(fr.begin(), fr.end(), cfg.corpus.split_fractions.begin());
      }
    }
    if (j.contains("net")) {
      const json& n = j.at("net");
      reject_unknown_keys(n,
                          {"seed", "embed_dim", "hidden_dim", "embed_scale",
                           "paraphrase_noise", "forget_cluster_offset"},
                          "net");
      if (n.contains("seed")) cfg.net.seed = n.at("seed").get<std::uint64_t>();
      if (n.contains("embed_dim")) {
        cfg.net.embed_dim = n.at("embed_dim").get<int>();
      }
      if (n.contains("hidden_dim")) {
        cfg.net.hidden_dim = n.at("hidden_dim").get<int>();
      }
      if (n.contains("embed_scale")) {
        cfg.net.embed_scale = n.at("embed_scale").get<double>();
      }
      if (n.contains("paraphrase_noise")) {
        cfg.net.paraphrase_noise = n.at("paraphrase_noise").get<double>();
      }
      if (n.contains("forget_cluster_offset")) {
        cfg.net.forget_cluster_offset =
            n.at("forget_cluster_offset").get<double>();
      }
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown_keys(
          t, {"learning_rate", "steps", "batch_size", "seed"}, "train");
      if (t.contains("learning_rate")) {
        cfg.train.learning_rate = t.at("learning_rate").get<double>();
      }
      if (t.contains("steps")) cfg.train.steps = t.at("steps").get<int>();
      if (t.contains("batch_size")) {
        cfg.train.batch_size = t.at("batch_size").get<int>();
      }
      if (t.contains("seed")) cfg.train.seed = t.at("seed").get<std::uint64_t>();
    }
    if (j.contains("interventions")) {
      cfg.roster.clear();
      for (const json& spec : j.at("interventions")) {
        cfg.roster.push_back(parse_spec(spec));
      }
    }
    if (j.contains("pairs")) {
      cfg.pairs.clear();
      for (const json& p : j.at("pairs")) {
        auto names = p.get<std::vector<std::string>>();
        if (names.size() != 2) {
          fail(errc::config, "each pair needs exactly two names");
        }
        cfg.pairs.emplace_back(names[0], names[1]);
      }
    }
    if (j.contains("all_pairs")) {
      cfg.all_pairs = j.at("all_pairs").get<bool>();
    }
  } catch (const json::exception& e) {
    fail(errc::config, std::string("config field has the wrong type: ") +
                           e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_json(buffer.str());
}

std::string canonical_config_json(const ExperimentConfig& cfg) {
  json j;
  j["master_seed"] = cfg.master_seed;
  j["repetitions"] = cfg.repetitions;
  j["batch_size"] = cfg.batch_size;
  j["locality_sample"] = cfg.locality_sample;
  j["pruned_edit_mode"] = cfg.pruned_edit_mode;
  if (cfg.decay_bound) {
    j["decay_bound"] = {{"guard_criterion", cfg.decay_bound->guard_criterion},
                        {"floor", cfg.decay_bound->floor_value}};
  }
  j["corpus"] = {{"seed", cfg.corpus.seed},
                 {"vocab_size", cfg.corpus.vocab_size},
                 {"answer_count", cfg.corpus.answer_count},
                 {"num_facts", cfg.corpus.num_facts},
                 {"paraphrases_per_fact", cfg.corpus.paraphrases_per_fact},
                 {"split_fractions", cfg.corpus.split_fractions}};
  j["net"] = {{"seed", cfg.net.seed},
              {"embed_dim", cfg.net.embed_dim},
              {"hidden_dim", cfg.net.hidden_dim},
              {"embed_scale", cfg.net.embed_scale},
              {"paraphrase_noise", cfg.net.paraphrase_noise},
              {"forget_cluster_offset", cfg.net.forget_cluster_offset}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"steps", cfg.train.steps},
                {"batch_size", cfg.train.batch_size},
                {"seed", cfg.train.seed}};
  j["interventions"] = json::array();
  for (const auto& spec : cfg.roster) {
    j["interventions"].push_back(spec_to_json(spec));
  }
  j["pairs"] = json::array();
  for (const auto& [a, b] : cfg.pairs) {
    j["pairs"].push_back(std::vector<std::string>{a, b});
  }
  j["all_pairs"] = cfg.all_pairs;
  return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string canonical = canonical_config_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace interlab
