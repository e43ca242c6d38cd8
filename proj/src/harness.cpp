#include "interlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "interlab/rng.hpp"

namespace interlab {

using nlohmann::json;
namespace fs = std::filesystem;

double round6(double v) { return std::round(v * 1e6) / 1e6; }

namespace {

constexpr const char* kCriterionColumns[] = {
    kEditSuccess, kEditGeneralization, kEditLocality, kUnlearning, kUtility};

std::string format6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string coord_key(const CellCoord& c) {
  std::ostringstream key;
  key << c.pair_i << '|' << c.pair_j << '|' << order_name(c.order) << '|'
      << format6(c.gamma_raw) << '|' << c.repetition;
  return key.str();
}

bool coord_less(const CellCoord& a, const CellCoord& b) {
  const int ao = static_cast<int>(a.order), bo = static_cast<int>(b.order);
  return std::tie(a.pair_i, a.pair_j, ao, a.gamma_raw, a.repetition) <
         std::tie(b.pair_i, b.pair_j, bo, b.gamma_raw, b.repetition);
}

std::string runs_header(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# interlab runs v1\n";
  out << "# config_hash=" << config_hash(cfg)
      << " master_seed=" << cfg.master_seed << "\n";
  out << "# gamma_normalization=minmax_over_declared_grid "
         "unlearning_normalization=clamp((1-raw)/(1-1/A))\n";
  out << "pair_i,pair_j,order,gamma_raw,repetition,status";
  for (const char* c : kCriterionColumns) out << ',' << c;
  out << ",sparsity_ratio,average_bits\n";
  return out.str();
}

std::string record_line(const RunRecord& r) {
  std::ostringstream out;
  out << r.coord.pair_i << ',' << r.coord.pair_j << ','
      << order_name(r.coord.order) << ',' << format6(r.coord.gamma_raw) << ','
      << r.coord.repetition << ',' << r.status;
  for (const char* c : kCriterionColumns) {
    out << ',';
    auto it = r.criteria.find(c);
    if (it != r.criteria.end()) out << format6(it->second);
  }
  out << ',';
  if (r.status == "ok") out << format6(r.sparsity);
  out << ',';
  if (r.status == "ok") out << format6(r.avg_bits);
  out << '\n';
  return out.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

// What run_cell needs for one task, resolved against the config roster.
struct CellTask {
  CellCoord coord;
  const InterventionSpec* phi_i = nullptr;
  const InterventionSpec* phi_j = nullptr;
  double gamma = 0.0;  // unrounded grid value
};

std::vector<CellTask> enumerate_tasks(const ExperimentConfig& cfg,
                                      const InterventionSpec& none) {
  std::vector<CellTask> tasks;
  auto add_pair = [&](const InterventionSpec* i, const InterventionSpec* j) {
    const int reps = effective_repetitions(*i, *j, cfg.repetitions);
    for (double gamma : i->gamma_grid) {
      for (Order order : {Order::i_then_j, Order::j_then_i}) {
        for (int rep = 0; rep < reps; ++rep) {
          CellTask task;
          task.coord = CellCoord{i->name, j->name, order, round6(gamma), rep};
          task.phi_i = i;
          task.phi_j = j;
          task.gamma = gamma;
          tasks.push_back(std::move(task));
        }
      }
    }
  };
  // Baselines first (composition with the identity), then configured pairs.
  for (const auto& spec : cfg.roster) add_pair(&spec, &none);
  for (const auto& [i, j] : cfg.resolved_pairs()) add_pair(i, j);
  return tasks;
}

void check_gamma_resolution(const ExperimentConfig& cfg) {
  for (const auto& spec : cfg.roster) {
    for (double g : spec.gamma_grid) {
      if (round6(g) != g) {
        fail(errc::config, "gamma value " + std::to_string(g) + " in '" +
                               spec.name +
                               "' is not representable at 6 decimals");
      }
    }
  }
}

// Base-model cache key: only the sections that determine the trained model.
std::string base_model_hash(const ExperimentConfig& cfg) {
  ExperimentConfig stripped = cfg;
  stripped.pairs.clear();
  stripped.all_pairs = false;
  stripped.roster = {identity_spec()};
  stripped.roster[0].name = "base";
  stripped.roster[0].op = "none";
  // Harness-level fields that cannot affect the base model.
  stripped.repetitions = 1;
  stripped.batch_size = 0;
  stripped.locality_sample = 1;
  stripped.pruned_edit_mode = "recompress";
  stripped.decay_bound.reset();
  stripped.master_seed = 0;
  return config_hash(stripped);
}

}  // namespace

bool RunRecord::deterministic_equal(const RunRecord& o) const {
  return coord.pair_i == o.coord.pair_i && coord.pair_j == o.coord.pair_j &&
         coord.order == o.coord.order &&
         coord.gamma_raw == o.coord.gamma_raw &&
         coord.repetition == o.coord.repetition && status == o.status &&
         criteria == o.criteria &&
         (status != "ok" || (sparsity == o.sparsity && avg_bits == o.avg_bits));
}

std::vector<CellCoord> enumerate_cells(const ExperimentConfig& cfg) {
  cfg.validate();
  const InterventionSpec none = identity_spec();
  std::vector<CellCoord> coords;
  for (const auto& task : enumerate_tasks(cfg, none)) {
    coords.push_back(task.coord);
  }
  return coords;
}

std::vector<RunRecord> parse_runs_csv(const std::string& path,
                                      std::string* header_hash) {
  std::ifstream in(path);
  if (!in) fail(errc::io, "cannot open runs file: " + path);
  std::vector<RunRecord> records;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "config_hash=";
      auto pos = line.find(key);
      if (pos != std::string::npos && header_hash) {
        *header_hash = line.substr(pos + key.size(), 16);
      }
      continue;
    }
    if (!saw_header) {  // column header line
      saw_header = true;
      continue;
    }
    auto fields = split_csv(line);
    constexpr std::size_t kExpected =
        6 + std::size(kCriterionColumns) + 2;
    if (fields.size() != kExpected) {
      fail(errc::io, "runs row has " + std::to_string(fields.size()) +
                         " fields, expected " + std::to_string(kExpected));
    }
    RunRecord r;
    r.coord.pair_i = fields[0];
    r.coord.pair_j = fields[1];
    auto order = order_from_name(fields[2]);
    if (!order) fail(errc::io, "bad order name: " + fields[2]);
    r.coord.order = *order;
    r.coord.gamma_raw = std::stod(fields[3]);
    r.coord.repetition = std::stoi(fields[4]);
    r.status = fields[5];
    for (std::size_t k = 0; k < std::size(kCriterionColumns); ++k) {
      const std::string& f = fields[6 + k];
      if (!f.empty()) r.criteria[kCriterionColumns[k]] = std::stod(f);
    }
    const std::string& sp = fields[6 + std::size(kCriterionColumns)];
    const std::string& ab = fields[7 + std::size(kCriterionColumns)];
    if (!sp.empty()) r.sparsity = std::stod(sp);
    if (!ab.empty()) r.avg_bits = std::stod(ab);
    records.push_back(std::move(r));
  }
  return records;
}

// --- Report computation ------------------------------------------------------

namespace {

// Rebuilds the per-criterion curve pairs of one pair from its records
// (mean over repetitions at each grid point and order).
std::map<std::string, CurvePair> curves_from_records(
    const ExperimentConfig& cfg, const InterventionSpec& phi_i,
    const InterventionSpec& phi_j,
    const std::map<std::string, const RunRecord*>& by_key) {
  const int reps = effective_repetitions(phi_i, phi_j, cfg.repetitions);
  const auto criteria = pair_criteria(phi_i, phi_j);
  const auto& grid = phi_i.gamma_grid;
  const double lo = grid.front(), hi = grid.back();

  std::map<std::string, CurvePair> curves;
  for (const auto& c : criteria) {
    CurvePair pair;
    pair.ij.criterion_id = c;
    pair.ij.order = Order::i_then_j;
    pair.ji.criterion_id = c;
    pair.ji.order = Order::j_then_i;
    curves.emplace(c, std::move(pair));
  }
  for (double gamma : grid) {
    const double gn = hi > lo ? (gamma - lo) / (hi - lo) : 0.0;
    for (Order order : {Order::i_then_j, Order::j_then_i}) {
      std::map<std::string, double> sums;
      std::map<std::string, int> counts;
      for (int rep = 0; rep < reps; ++rep) {
        CellCoord coord{phi_i.name, phi_j.name, order, round6(gamma), rep};
        auto it = by_key.find(coord_key(coord));
        if (it == by_key.end() || it->second->status != "ok") continue;
        for (const auto& [criterion, value] : it->second->criteria) {
          sums[criterion] += value;
          counts[criterion] += 1;
        }
      }
      for (const auto& c : criteria) {
        if (counts[c] == 0) continue;  // failed cells leave a gap
        CurvePoint point{gamma, gn, round6(sums[c] / counts[c])};
        auto& pair = curves.at(c);
        (order == Order::i_then_j ? pair.ij : pair.ji)
            .points.push_back(point);
      }
    }
  }
  return curves;
}

}  // namespace

void compute_reports(const ExperimentConfig& cfg,
                     const std::vector<RunRecord>& records,
                     std::vector<ComposabilityReport>& reports,
                     WinTable& wins) {
  std::map<std::string, const RunRecord*> by_key;
  for (const auto& r : records) by_key[coord_key(r.coord)] = &r;

  const InterventionSpec none = identity_spec();
  std::vector<std::pair<const InterventionSpec*, const InterventionSpec*>>
      all_pairs;
  for (const auto& spec : cfg.roster) all_pairs.emplace_back(&spec, &none);
  for (const auto& [i, j] : cfg.resolved_pairs()) all_pairs.emplace_back(i, j);

  reports.clear();
  for (const auto& [phi_i, phi_j] : all_pairs) {
    auto curves = curves_from_records(cfg, *phi_i, *phi_j, by_key);
    ComposabilityReport report;
    report.intervention_i = phi_i->name;
    report.intervention_j = phi_j->name;
    report.kind_i = kind_name(phi_i->kind);
    report.kind_j = kind_name(phi_j->kind);

    for (const auto& [criterion, pair] : curves) {
      CriterionComposability entry;
      entry.criterion_id = criterion;
      entry.point_gamma = round6(phi_i->default_gamma);

      // Point measures at the named gamma (pre-bound curves).
      bool found_point = false;
      for (std::size_t k = 0; k < pair.ij.points.size(); ++k) {
        if (pair.ij.points[k].gamma_raw == phi_i->default_gamma) {
          // Both orders share the grid, but a failed cell can leave one
          // order without this point.
          for (const auto& q : pair.ji.points) {
            if (q.gamma_raw == phi_i->default_gamma) {
              entry.kappa_ij = pair.ij.points[k].kappa;
              entry.kappa_ji = q.kappa;
              found_point = true;
              break;
            }
          }
          break;
        }
      }
      if (found_point) {
        auto [ofe, os] = point_measures(entry.kappa_ij, entry.kappa_ji);
        entry.point_ofe = round6(ofe);
        entry.point_os = round6(os);
      }

      // Integral metrics on matched multi-point grids, with the configured
      // decay bound applied first.
      CurvePair integrable = pair;
      if (cfg.decay_bound) {
        auto guard_it = curves.find(cfg.decay_bound->guard_criterion);
        if (guard_it != curves.end() &&
            guard_it->second.ij.points.size() == pair.ij.points.size() &&
            guard_it->second.ji.points.size() == pair.ji.points.size()) {
          integrable = apply_decay_bound(pair, guard_it->second,
                                         cfg.decay_bound->floor_value);
          std::ostringstream note;
          note << cfg.decay_bound->guard_criterion
               << ">=" << format6(cfg.decay_bound->floor_value) << " kept "
               << integrable.ij.points.size() << "/" << pair.ij.points.size()
               << " grid points";
          report.bounds_applied = note.str();
        }
      }
      if (integrable.ij.points.size() >= 2 &&
          integrable.ij.points.size() == integrable.ji.points.size()) {
        entry.order_free_error =
            round6(order_free_error(integrable.ij, integrable.ji));
        entry.order_sensitivity =
            round6(order_sensitivity(integrable.ij, integrable.ji));
      }
      report.criteria.push_back(std::move(entry));
    }
    reports.push_back(std::move(report));
  }

  // Win counting: within-kind contenders, composability pairs only (the
  // baselines measure single-intervention quality, not composition).
  std::map<std::string, int> kind_members;
  for (const auto& spec : cfg.roster) {
    kind_members[kind_name(spec.kind)] += 1;
  }
  std::map<std::string, std::string> grouping;
  for (const auto& spec : cfg.roster) {
    if (kind_members[kind_name(spec.kind)] >= 2) {
      grouping[spec.name] = kind_name(spec.kind);
    }
  }
  wins = WinTable{};
  if (!grouping.empty()) {
    std::vector<ComposabilityReport> composed;
    for (const auto& r : reports) {
      if (r.intervention_j != "none") composed.push_back(r);
    }
    wins = win_table(composed, grouping);
  }
}

// --- Emission ----------------------------------------------------------------

void emit_reports(const std::vector<RunRecord>& records,
                  const std::vector<ComposabilityReport>& reports,
                  const WinTable& wins, const ExperimentConfig& cfg,
                  const std::string& directory) {
  if (records.empty()) {
    fail(errc::empty_input, "refusing to write reports without records");
  }
  fs::create_directories(directory);
  const std::string hash = config_hash(cfg);

  {  // runs.csv, rows in canonical coordinate order
    std::vector<const RunRecord*> sorted;
    sorted.reserve(records.size());
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const RunRecord* a, const RunRecord* b) {
                return coord_less(a->coord, b->coord);
              });
    std::ofstream out(directory + "/runs.csv", std::ios::binary);
    if (!out) fail(errc::io, "cannot write runs.csv");
    out << runs_header(cfg);
    for (const RunRecord* r : sorted) out << record_line(*r);
    if (!out.flush()) fail(errc::io, "runs.csv write failed");
  }

  {  // curves.csv
    std::ofstream out(directory + "/curves.csv", std::ios::binary);
    if (!out) fail(errc::io, "cannot write curves.csv");
    out << "# interlab curves v1\n";
    out << "# config_hash=" << hash << " master_seed=" << cfg.master_seed
        << "\n";
    out << "# gamma_normalization=minmax_over_declared_grid\n";
    out << "pair_i,pair_j,criterion,order,gamma_raw,gamma_normalized,kappa,"
           "repetitions\n";
    std::map<std::string, const RunRecord*> by_key;
    for (const auto& r : records) by_key[coord_key(r.coord)] = &r;
    const InterventionSpec none = identity_spec();
    std::vector<std::pair<const InterventionSpec*, const InterventionSpec*>>
        all_pairs;
    for (const auto& spec : cfg.roster) all_pairs.emplace_back(&spec, &none);
    for (const auto& [i, j] : cfg.resolved_pairs()) {
      all_pairs.emplace_back(i, j);
    }
    for (const auto& [phi_i, phi_j] : all_pairs) {
      const int reps = effective_repetitions(*phi_i, *phi_j, cfg.repetitions);
      for (const auto& [criterion, pair] :
           curves_from_records(cfg, *phi_i, *phi_j, by_key)) {
        for (const CriterionCurve* curve : {&pair.ij, &pair.ji}) {
          for (const auto& p : curve->points) {
            out << phi_i->name << ',' << phi_j->name << ',' << criterion
                << ',' << order_name(curve->order) << ','
                << format6(p.gamma_raw) << ',' << format6(p.gamma_normalized)
                << ',' << format6(p.kappa) << ',' << reps << "\n";
          }
        }
      }
    }
    if (!out.flush()) fail(errc::io, "curves.csv write failed");
  }

  {  // composability.json
    json root;
    root["config_hash"] = hash;
    root["master_seed"] = cfg.master_seed;
    root["gamma_normalization"] = "minmax_over_declared_grid";
    root["unlearning_normalization"] = "clamp((1-raw)/(1-1/A))";
    if (cfg.decay_bound) {
      root["decay_bound"] = {
          {"guard_criterion", cfg.decay_bound->guard_criterion},
          {"floor", cfg.decay_bound->floor_value}};
    } else {
      root["decay_bound"] = nullptr;
    }
    root["pairs"] = json::array();
    for (const auto& report : reports) {
      json jr;
      jr["intervention_i"] = report.intervention_i;
      jr["intervention_j"] = report.intervention_j;
      jr["kind_i"] = report.kind_i;
      jr["kind_j"] = report.kind_j;
      jr["bounds_applied"] = report.bounds_applied;
      jr["criteria"] = json::array();
      for (const auto& c : report.criteria) {
        json jc;
        jc["criterion"] = c.criterion_id;
        jc["order_free_error"] =
            c.order_free_error ? json(*c.order_free_error) : json(nullptr);
        jc["order_sensitivity"] =
            c.order_sensitivity ? json(*c.order_sensitivity) : json(nullptr);
        jc["point_gamma"] = c.point_gamma;
        jc["point_ofe"] = c.point_ofe;
        jc["point_os"] = c.point_os;
        jc["kappa_ij"] = c.kappa_ij;
        jc["kappa_ji"] = c.kappa_ji;
        jr["criteria"].push_back(std::move(jc));
      }
      root["pairs"].push_back(std::move(jr));
    }
    std::ofstream out(directory + "/composability.json", std::ios::binary);
    if (!out) fail(errc::io, "cannot write composability.json");
    out << root.dump(2) << "\n";
    if (!out.flush()) fail(errc::io, "composability.json write failed");
  }

  {  // wins.csv
    std::ofstream out(directory + "/wins.csv", std::ios::binary);
    if (!out) fail(errc::io, "cannot write wins.csv");
    out << "# interlab wins v1\n";
    out << "# config_hash=" << hash << " master_seed=" << cfg.master_seed
        << "\n";
    out << "# rule=strict_lowest_error_wins_ties_award_nothing\n";
    out << "category,method,metric,wins,contexts\n";
    for (const auto& row : wins.rows) {
      out << row.category << ',' << row.method << ',' << row.metric << ','
          << row.wins << ',' << row.contexts << "\n";
    }
    if (!out.flush()) fail(errc::io, "wins.csv write failed");
  }
}

// --- Execution ----------------------------------------------------------------

ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                const RunOptions& opts) {
  cfg.validate();
  check_gamma_resolution(cfg);
  if (opts.jobs < 1) fail(errc::config, "jobs must be >= 1");

  const std::string hash = config_hash(cfg);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  const std::string runs_path = (dir / "runs.csv").string();
  const std::string journal_path = (dir / "runs.partial.csv").string();

  // Corpus and matrix are cheap and deterministic; build them up front so
  // config problems (including pool exhaustion) surface before training.
  const FactCorpus corpus = generate_corpus(cfg.corpus);
  const InterventionSpec none = identity_spec();
  std::vector<CellTask> tasks = enumerate_tasks(cfg, none);

  bool needs_edits = false;
  for (const auto& task : tasks) {
    needs_edits = needs_edits ||
                  task.phi_i->kind == InterventionKind::edit ||
                  task.phi_j->kind == InterventionKind::edit;
  }
  std::vector<std::vector<EditRequest>> batches;
  if (needs_edits) {
    batches =
        sample_edit_batches(corpus, cfg.repetitions, cfg.batch_size,
                            cfg.master_seed);
  }

  // Restore previously computed cells (completed run or journal).
  std::map<std::string, RunRecord> done;
  auto absorb = [&](const std::string& path) {
    std::string file_hash;
    auto previous = parse_runs_csv(path, &file_hash);
    if (previous.empty() && file_hash.empty()) return;  // header-less stub
    if (file_hash != hash) {
      fail(errc::config,
           "existing results in '" + cfg.output_dir +
               "' were produced by a different config (hash mismatch)");
    }
    for (auto& r : previous) done.emplace(coord_key(r.coord), std::move(r));
  };
  if (opts.resume) {
    if (fs::exists(runs_path)) absorb(runs_path);
    if (fs::exists(journal_path)) absorb(journal_path);
  }

  std::vector<std::size_t> todo;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (!done.count(coord_key(tasks[t].coord))) todo.push_back(t);
  }
  ExperimentOutput output;
  output.cells_reused = static_cast<long>(tasks.size() - todo.size());
  if (opts.max_cells >= 0 &&
      static_cast<long>(todo.size()) > opts.max_cells) {
    todo.resize(static_cast<std::size_t>(opts.max_cells));
    output.complete = false;
  }

  // Base model: cached on disk, keyed by the training-relevant sections.
  const std::string base_hash = base_model_hash(cfg);
  const std::string model_path = (dir / "base_model.bin").string();
  const std::string meta_path = (dir / "base_meta.json").string();
  ModelState base;
  bool cached = false;
  if (fs::exists(model_path) && fs::exists(meta_path)) {
    std::ifstream meta_in(meta_path);
    json meta;
    try {
      meta = json::parse(std::string(std::istreambuf_iterator<char>(meta_in),
                                     std::istreambuf_iterator<char>()));
      if (meta.value("base_hash", "") == base_hash) {
        base = load_model(model_path);
        output.base_train_accuracy = meta.value("train_accuracy", 0.0);
        cached = true;
      }
    } catch (...) {
      cached = false;  // unreadable cache: retrain
    }
  }
  if (!cached) {
    TrainResult trained = init_and_train_base(corpus, cfg.train, cfg.net);
    base = std::move(trained.model);
    output.base_train_accuracy = trained.train_accuracy;
    save_model(base, model_path);
    json meta;
    meta["base_hash"] = base_hash;
    meta["train_accuracy"] = trained.train_accuracy;
    std::ofstream meta_out(meta_path, std::ios::binary);
    meta_out << meta.dump(2) << "\n";
    if (!meta_out.flush()) fail(errc::io, "cannot write base_meta.json");
  }

  SweepContext ctx;
  ctx.corpus = &corpus;
  ctx.base = &base;
  ctx.edit_batches = &batches;
  ctx.locality_sample = cfg.locality_sample;
  ctx.master_seed = cfg.master_seed;
  ctx.masked_compressed_training = cfg.pruned_edit_mode == "masked";

  // Execute missing cells; every finished record is appended to the journal
  // immediately so an interrupted run resumes where it stopped.
  std::vector<RunRecord> fresh(todo.size());
  if (!todo.empty()) {
    std::ofstream journal;
    const bool journal_existed = fs::exists(journal_path);
    journal.open(journal_path, opts.resume ? std::ios::app : std::ios::trunc);
    if (!journal) fail(errc::io, "cannot open journal: " + journal_path);
    if (!opts.resume || !journal_existed) journal << runs_header(cfg);
    journal.flush();

    std::mutex sink;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t slot = next.fetch_add(1);
        if (slot >= todo.size()) break;
        const CellTask& task = tasks[todo[slot]];
        RunRecord record;
        record.coord = task.coord;
        const auto start = std::chrono::steady_clock::now();
        try {
          CellResult cell = run_cell(ctx, *task.phi_i, *task.phi_j,
                                     task.coord.order, task.gamma,
                                     task.coord.repetition);
          for (const auto& [criterion, value] : cell.criteria) {
            record.criteria[criterion] = round6(value);
          }
          record.sparsity = round6(cell.sparsity);
          record.avg_bits = round6(cell.avg_bits);
        } catch (const error& e) {
          record.status = errc_name(e.kind());
          record.criteria.clear();
        }
        record.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          start)
                .count();
        {
          std::lock_guard<std::mutex> lock(sink);
          journal << record_line(record);
          journal.flush();
        }
        fresh[slot] = std::move(record);
      }
    };
    if (opts.jobs == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < opts.jobs; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    output.cells_computed = static_cast<long>(todo.size());
  }

  // Assemble records in matrix order.
  for (auto& r : fresh) done.emplace(coord_key(r.coord), std::move(r));
  output.records.reserve(tasks.size());
  for (const auto& task : tasks) {
    auto it = done.find(coord_key(task.coord));
    if (it == done.end()) continue;  // only when max_cells stopped early
    output.records.push_back(it->second);
  }

  if (!output.complete) {
    return output;  // journal stays; a --resume run finishes the matrix
  }
  if (output.records.size() != tasks.size()) {
    fail(errc::config, "record count does not match the declared matrix");
  }

  // Timings (measured, non-deterministic by nature; kept out of runs.csv).
  {
    std::vector<const RunRecord*> sorted;
    for (const auto& r : output.records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const RunRecord* a, const RunRecord* b) {
                return coord_less(a->coord, b->coord);
              });
    std::ofstream out((dir / "timings.csv").string(), std::ios::binary);
    out << "# interlab timings v1 (wall-clock, informational only)\n";
    out << "pair_i,pair_j,order,gamma_raw,repetition,seconds\n";
    for (const RunRecord* r : sorted) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", r->wall_time_s);
      out << r->coord.pair_i << ',' << r->coord.pair_j << ','
          << order_name(r->coord.order) << ',' << format6(r->coord.gamma_raw)
          << ',' << r->coord.repetition << ',' << buf << "\n";
    }
  }

  compute_reports(cfg, output.records, output.reports, output.wins);
  emit_reports(output.records, output.reports, output.wins, cfg,
               cfg.output_dir);
  std::error_code ec;
  fs::remove(journal_path, ec);  // completed: the journal is now redundant
  return output;
}

}  // namespace interlab
