#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "interlab/config.hpp"
#include "interlab/errors.hpp"
#include "interlab/metrics.hpp"

using namespace interlab;
namespace fs = std::filesystem;

namespace {

errc parse_kind(const std::string& text) {
  try {
    parse_config_json(text);
  } catch (const error& e) {
    return e.kind();
  }
  FAIL("expected parse_config_json to throw");
  return errc::io;
}

fs::path repo_config(const std::string& name) {
  return fs::path(__FILE__).parent_path().parent_path() / "configs" / name;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("built-in default experiment") {
    const ExperimentConfig cfg = default_experiment_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.roster.size() == 7);
    CHECK(cfg.pairs.size() == 16);
    CHECK(cfg.repetitions == 10);
    CHECK(cfg.batch_size == 50);
    CHECK(cfg.locality_sample == 200);
    CHECK(cfg.master_seed == 1234);
    CHECK(cfg.pruned_edit_mode == "recompress");

    const InterventionSpec* ft = cfg.find("ft");
    REQUIRE(ft != nullptr);
    CHECK(ft->kind == InterventionKind::edit);
    CHECK(ft->criteria == std::vector<std::string>{kEditSuccess,
                                                   kEditGeneralization,
                                                   kEditLocality, kUtility});
    const InterventionSpec* rmu = cfg.find("rmu");
    REQUIRE(rmu != nullptr);
    CHECK(rmu->criteria == std::vector<std::string>{kUnlearning, kUtility});
    const InterventionSpec* prune = cfg.find("prune");
    REQUIRE(prune != nullptr);
    CHECK(prune->criteria == std::vector<std::string>{kUtility});
    CHECK(prune->multi_gamma());
    CHECK_FALSE(ft->multi_gamma());
    CHECK(cfg.find("does-not-exist") == nullptr);
  }

  TEST_CASE("smoke experiment") {
    const ExperimentConfig cfg = smoke_experiment_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.roster.size() == 2);
    const auto pairs = cfg.resolved_pairs();
    REQUIRE(pairs.size() == 1);
    // The swept (multi-gamma) side leads regardless of config order.
    CHECK(pairs[0].first->name == "prune");
    CHECK(pairs[0].second->name == "ft");
  }

  TEST_CASE("pair orientation and all_pairs expansion") {
    ExperimentConfig cfg = default_experiment_config();
    cfg.pairs = {{"ft", "prune"}, {"ft", "ga"}};
    const auto pairs = cfg.resolved_pairs();
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].first->name == "prune");  // multi-gamma side first
    CHECK(pairs[0].second->name == "ft");
    CHECK(pairs[1].first->name == "ft");  // both single-point: config order
    CHECK(pairs[1].second->name == "ga");

    cfg.all_pairs = true;
    CHECK(cfg.resolved_pairs().size() == 21);  // C(7, 2), pairs list ignored
  }

  TEST_CASE("parameter lookup falls back to the supplied default") {
    const ExperimentConfig cfg = default_experiment_config();
    const InterventionSpec& ft = *cfg.find("ft");
    CHECK(ft.param("steps", 999.0) == 25.0);
    CHECK(ft.param("not-a-param", 7.0) == 7.0);
  }

  TEST_CASE("canonical serialization round-trips") {
    const ExperimentConfig cfg = default_experiment_config();
    const std::string text = canonical_config_json(cfg);
    const ExperimentConfig back = parse_config_json(text);
    CHECK(config_hash(back) == config_hash(cfg));
    CHECK(canonical_config_json(back) == text);

    ExperimentConfig smoke = smoke_experiment_config();
    const ExperimentConfig smoke_back =
        parse_config_json(canonical_config_json(smoke));
    CHECK(config_hash(smoke_back) == config_hash(smoke));
  }

  TEST_CASE("hash ignores output_dir and tracks everything else") {
    ExperimentConfig a = default_experiment_config();
    ExperimentConfig b = default_experiment_config();
    b.output_dir = "elsewhere";
    CHECK(config_hash(a) == config_hash(b));

    b.master_seed = 4321;
    CHECK(config_hash(a) != config_hash(b));

    ExperimentConfig c = default_experiment_config();
    c.repetitions = 9;
    CHECK(config_hash(a) != config_hash(c));
  }

  TEST_CASE("json files may carry comments") {
    const ExperimentConfig cfg = parse_config_json(
        "{\n"
        "  // master seed controls everything stochastic\n"
        "  \"master_seed\": 5, /* inline */\n"
        "  \"repetitions\": 3\n"
        "}\n");
    CHECK(cfg.master_seed == 5);
    CHECK(cfg.repetitions == 3);
    // Unspecified fields keep the built-in defaults.
    CHECK(cfg.batch_size == 50);
  }

  TEST_CASE("malformed configs are rejected loudly") {
    CHECK(parse_kind("{ not json") == errc::io);
    CHECK(parse_kind("{\"master_sede\": 1}") == errc::config);
    CHECK(parse_kind("{\"repetitions\": \"ten\"}") == errc::config);
    CHECK(parse_kind("{\"pairs\": [[\"ft\", \"warp\"]]}") == errc::config);
    CHECK(parse_kind("{\"pairs\": [[\"ft\"]]}") == errc::config);
    CHECK(parse_kind("{\"pairs\": [[\"ft\", \"ft\"]]}") == errc::config);
    CHECK(parse_kind("{\"corpus\": {\"split_fractions\": [0.5, 0.5]}}") ==
          errc::config);
    CHECK(parse_kind("{\"pruned_edit_mode\": \"freestyle\"}") ==
          errc::config);
    CHECK(parse_kind("{\"repetitions\": 0}") == errc::config);
    CHECK(parse_kind("{\"locality_sample\": 0}") == errc::config);
    CHECK(parse_kind("{\"batch_size\": 0}") == errc::config);
    CHECK(parse_kind(
              "{\"decay_bound\": {\"guard_criterion\": \"vibes\","
              " \"floor\": 0.5}}") == errc::config);
    CHECK(parse_kind("{\"decay_bound\": {\"floor\": 1.5}}") == errc::config);
  }

  TEST_CASE("validate rejects reserved and duplicate names") {
    ExperimentConfig cfg = default_experiment_config();
    cfg.roster[0].name = "none";
    CHECK_THROWS_AS(cfg.validate(), error);

    ExperimentConfig dup = default_experiment_config();
    dup.roster[1].name = dup.roster[0].name;
    CHECK_THROWS_AS(dup.validate(), error);
  }

  TEST_CASE("shipped config files match the built-ins") {
    const fs::path def = repo_config("default.json");
    const fs::path smoke = repo_config("smoke.json");
    REQUIRE_MESSAGE(fs::exists(def), "expected " << def.string());
    REQUIRE_MESSAGE(fs::exists(smoke), "expected " << smoke.string());
    CHECK(config_hash(load_config(def.string())) ==
          config_hash(default_experiment_config()));
    CHECK(config_hash(load_config(smoke.string())) ==
          config_hash(smoke_experiment_config()));
  }
}
