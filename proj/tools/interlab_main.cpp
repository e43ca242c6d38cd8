// interlab — composing test-time interventions on a desk-scale network.
//
// Verbs:
//   generate  write the fact corpus for a config and print split sizes
//   train     train (and cache) the base model, print its train accuracy
//   run       execute the full experiment matrix and emit reports
//   report    recompute reports from an existing runs.csv (no cell runs)
//   verify    run the acceptance suite (exit code = number of failures)

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "interlab/acceptance.hpp"
#include "interlab/config.hpp"
#include "interlab/harness.hpp"

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_dir;
  bool seed_set = false;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool resume = false;
  long max_cells = -1;
};

interlab::ExperimentConfig resolve_config(const CliArgs& args) {
  interlab::ExperimentConfig cfg = args.config_path.empty()
                                       ? interlab::default_experiment_config()
                                       : interlab::load_config(args.config_path);
  if (args.seed_set) cfg.master_seed = args.seed;
  // Output directory precedence: --out, then the config file, then the
  // INTERLAB_OUT environment default, then the built-in "out".
  if (!args.out_dir.empty()) {
    cfg.output_dir = args.out_dir;
  } else if (!cfg.output_dir_from_config) {
    if (const char* env = std::getenv("INTERLAB_OUT"); env && *env) {
      cfg.output_dir = env;
    }
  }
  cfg.validate();
  return cfg;
}

void print_config_banner(const interlab::ExperimentConfig& cfg) {
  std::cout << "config_hash " << interlab::config_hash(cfg) << "  seed "
            << cfg.master_seed << "  out " << cfg.output_dir << "\n";
}

int cmd_generate(const CliArgs& args) {
  auto cfg = resolve_config(args);
  print_config_banner(cfg);
  auto corpus = interlab::generate_corpus(cfg.corpus);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string path = cfg.output_dir + "/corpus.txt";
  interlab::write_corpus_file(corpus, path);
  std::cout << "corpus: " << corpus.facts.size() << " facts, vocab "
            << corpus.vocab_size << ", answers " << corpus.answer_count
            << "\n";
  for (int s = 0; s < interlab::kSplitCount; ++s) {
    auto split = static_cast<interlab::Split>(s);
    std::cout << "  " << interlab::split_name(split) << ": "
              << corpus.split(split).size() << " facts\n";
  }
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_train(const CliArgs& args) {
  auto cfg = resolve_config(args);
  print_config_banner(cfg);
  auto corpus = interlab::generate_corpus(cfg.corpus);
  auto trained = interlab::init_and_train_base(corpus, cfg.train, cfg.net);
  std::filesystem::create_directories(cfg.output_dir);
  const std::string path = cfg.output_dir + "/base_model.bin";
  interlab::save_model(trained.model, path);
  std::cout << "train accuracy " << trained.train_accuracy << "\n";
  std::cout << "wrote " << path << "\n";
  std::cout << "note: 'run' re-trains unless its cache metadata matches\n";
  return 0;
}

int cmd_run(const CliArgs& args) {
  auto cfg = resolve_config(args);
  print_config_banner(cfg);
  interlab::RunOptions opts;
  opts.jobs = args.jobs;
  opts.resume = args.resume;
  opts.max_cells = args.max_cells;
  const auto cells = interlab::enumerate_cells(cfg);
  std::cout << "matrix: " << cells.size() << " cells, jobs " << opts.jobs
            << (opts.resume ? ", resuming" : "") << "\n";
  auto output = interlab::run_experiment(cfg, opts);
  std::cout << "base train accuracy " << output.base_train_accuracy << "\n";
  std::cout << "cells computed " << output.cells_computed << ", reused "
            << output.cells_reused << "\n";
  if (!output.complete) {
    std::cout << "stopped early (max-cells); rerun with --resume to finish\n";
    return 0;
  }
  std::cout << "reports written to " << cfg.output_dir
            << " (runs.csv, curves.csv, composability.json, wins.csv)\n";
  for (const auto& row : output.wins.rows) {
    std::cout << "  wins[" << row.category << "/" << row.metric << "] "
              << row.method << ": " << row.wins << "/" << row.contexts
              << "\n";
  }
  return 0;
}

int cmd_report(const CliArgs& args) {
  auto cfg = resolve_config(args);
  print_config_banner(cfg);
  const std::string runs_path = cfg.output_dir + "/runs.csv";
  std::string file_hash;
  auto records = interlab::parse_runs_csv(runs_path, &file_hash);
  if (file_hash != interlab::config_hash(cfg)) {
    interlab::fail(interlab::errc::config,
                   "runs.csv in '" + cfg.output_dir +
                       "' was produced by a different config");
  }
  std::vector<interlab::ComposabilityReport> reports;
  interlab::WinTable wins;
  interlab::compute_reports(cfg, records, reports, wins);
  interlab::emit_reports(records, reports, wins, cfg, cfg.output_dir);
  std::cout << "recomputed reports from " << records.size() << " records\n";
  for (const auto& report : reports) {
    for (const auto& c : report.criteria) {
      if (!c.order_free_error) continue;
      std::cout << "  " << report.intervention_i << "+"
                << report.intervention_j << " " << c.criterion_id << ": OFE "
                << *c.order_free_error << " OS " << *c.order_sensitivity
                << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interlab: order-sensitivity laboratory for composed "
               "test-time interventions"};
  app.require_subcommand(1);

  CliArgs args;
  app.add_option("--config", args.config_path,
                 "experiment config JSON (defaults to the built-in config)")
      ->check(CLI::ExistingFile);
  auto* seed_opt =
      app.add_option("--seed", args.seed, "override the master seed");
  app.add_option("--jobs", args.jobs, "worker threads for 'run'")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", args.out_dir, "output directory (overrides config "
                                        "and INTERLAB_OUT)");
  app.add_flag("--resume", args.resume,
               "reuse results already in the output directory");
  app.add_option("--max-cells", args.max_cells,
                 "stop after N newly computed cells (for staged runs)");

  auto* generate = app.add_subcommand("generate", "write the fact corpus");
  auto* train = app.add_subcommand("train", "train and save the base model");
  auto* run = app.add_subcommand("run", "execute the experiment matrix");
  auto* report =
      app.add_subcommand("report", "recompute reports from runs.csv");
  auto* verify = app.add_subcommand("verify", "run the acceptance suite");
  for (auto* sub : {generate, train, run, report, verify}) {
    sub->fallthrough();  // allow global flags after the verb
  }

  CLI11_PARSE(app, argc, argv);
  args.seed_set = seed_opt->count() > 0;

  try {
    if (generate->parsed()) return cmd_generate(args);
    if (train->parsed()) return cmd_train(args);
    if (run->parsed()) return cmd_run(args);
    if (report->parsed()) return cmd_report(args);
    if (verify->parsed()) return interlab::accept::run_acceptance(std::cout);
  } catch (const interlab::error& e) {
    std::cerr << "error [" << interlab::errc_name(e.kind()) << "] "
              << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
