#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pcscheck/agent.hpp"
#include "pcscheck/checks.hpp"
#include "pcscheck/config.hpp"
#include "pcscheck/errors.hpp"
#include "pcscheck/ledger.hpp"
#include "pcscheck/perturb.hpp"
#include "pcscheck/rng.hpp"
#include "pcscheck/signal.hpp"
#include "pcscheck/stats.hpp"
#include "pcscheck/tabular.hpp"

// Command implementations behind the CLI: plan, run, analyze, simulate-pve,
// calibrate, converge, confidence.  Each takes a validated config plus its
// option bag, writes files under the output directory, and logs one line per
// notable artifact.  Errors surface as the typed exceptions in errors.hpp;
// the CLI maps them to exit codes.

namespace pcscheck::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using config::HarnessConfig;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return std::string(buf);
}

inline void write_json_file(const fs::path& path, const json& doc) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw HarnessError("cannot create " + path.parent_path().string());
  tabular::write_file(path, doc.dump(2) + "\n");
}

inline std::map<std::string, tabular::LoadedDataset> load_datasets(const HarnessConfig& cfg) {
  std::map<std::string, tabular::LoadedDataset> out;
  for (const config::DatasetSpec& spec : cfg.datasets) {
    tabular::LoadedDataset loaded = tabular::load_dataset(spec.csv, spec.metadata);
    if (loaded.metadata.dataset_name != spec.id)
      throw ValidationError("dataset id '" + spec.id + "' does not match dataset_name '" +
                            loaded.metadata.dataset_name + "' in " + spec.metadata.string());
    if (!loaded.dataset.column_index(spec.dependent))
      throw ValidationError("dataset '" + spec.id + "' has no dependent column '" +
                            spec.dependent + "'");
    for (const std::string& col : spec.independents)
      if (!loaded.dataset.column_index(col))
        throw ValidationError("dataset '" + spec.id + "' has no independent column '" + col + "'");
    out.emplace(spec.id, std::move(loaded));
  }
  return out;
}

inline const config::DatasetSpec& spec_for(const HarnessConfig& cfg, const std::string& id) {
  for (const config::DatasetSpec& spec : cfg.datasets)
    if (spec.id == id) return spec;
  throw ValidationError("plan references dataset '" + id + "' which is not in the config");
}

inline perturb::RunPlan build_full_plan(const HarnessConfig& cfg, bool include_null) {
  perturb::RunPlan plan;
  plan.master_seed = cfg.master_seed;
  plan.config_snapshot = config::config_to_json(cfg);
  for (const config::DatasetSpec& spec : cfg.datasets) {
    auto part = perturb::build_run_plan(spec.id, cfg.pcs_kinds, cfg.replicates, cfg.master_seed,
                                        include_null);
    plan.conditions.insert(plan.conditions.end(), part.begin(), part.end());
  }
  return plan;
}

inline fs::path require_ledger(const std::optional<fs::path>& override_path,
                               const fs::path& out_dir) {
  const fs::path path = override_path.value_or(out_dir / "ledger.jsonl");
  if (!fs::exists(path))
    throw ValidationError("ledger " + path.string() + " does not exist; run 'run' first");
  return path;
}

inline std::string relative_to(const fs::path& path, const fs::path& base) {
  std::error_code ec;
  fs::path rel = fs::relative(path, base, ec);
  if (ec || rel.empty()) return path.string();
  return rel.string();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

inline int cmd_plan(const HarnessConfig& cfg, std::ostream& out) {
  detail::load_datasets(cfg);  // surface dataset problems before writing anything
  perturb::RunPlan plan = detail::build_full_plan(cfg, /*include_null=*/true);
  const fs::path plan_path = cfg.out_dir / "plan.json";
  detail::write_json_file(plan_path, perturb::plan_to_json(plan));
  out << "plan: " << plan.conditions.size() << " conditions -> " << plan_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunOptions {
  std::optional<fs::path> plan_path;
  std::optional<int> jobs;
  bool resume = false;
};

namespace detail {

struct RunOutcomeCounts {
  std::atomic<int> ok{0}, agent_error{0}, parse_error{0}, timeout{0};

  void add(agent::RunStatus s) {
    switch (s) {
      case agent::RunStatus::ok: ++ok; break;
      case agent::RunStatus::agent_error: ++agent_error; break;
      case agent::RunStatus::parse_error: ++parse_error; break;
      case agent::RunStatus::timeout: ++timeout; break;
    }
  }
};

// Executes one condition end to end: perturb, stage workspace, run backend,
// parse, with up to cfg.retries re-executions on non-ok outcomes.  The
// workspace is rebuilt from scratch on every attempt so stale files from an
// interrupted session can never leak into a run.
inline agent::ResponseRecord execute_condition(const HarnessConfig& cfg,
                                               const tabular::LoadedDataset& source,
                                               const std::string& dependent,
                                               const perturb::RunCondition& cond,
                                               const fs::path& out_dir) {
  perturb::PerturbationContext ctx;
  ctx.noise_feature_count = cfg.noise_feature_count;
  ctx.statements = cfg.statements;

  agent::ResponseRecord rec;
  const int max_attempts = cfg.retries + 1;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    perturb::RunCondition attempt_cond = cond;
    if (attempt > 0) attempt_cond.seed = rng::derive(cond.seed, "retry", attempt);

    perturb::PerturbedInput input =
        perturb::apply_condition(source.dataset, source.metadata, dependent, attempt_cond, ctx);

    std::error_code ec;
    fs::remove_all(out_dir / "runs" / cond.run_id(), ec);
    agent::WorkspaceOptions ws_opts;
    ws_opts.packages = cfg.packages;
    ws_opts.analysis_template = cfg.analysis_template;
    const fs::path ws = agent::prepare_workspace(input.dataset, input.metadata, cond,
                                                 out_dir / "runs", ws_opts);

    agent::ExecOutcome outcome =
        agent::execute_agent(cfg.backend, ws, attempt_cond, agent::Phase::analysis,
                             input.dataset.name);
    if (outcome.spawn_failed)
      throw HarnessError("could not spawn agent for run '" + cond.run_id() +
                         "': " + outcome.message);

    if (outcome.timed_out) {
      rec = agent::ResponseRecord{};
      rec.run_id = cond.run_id();
      rec.condition = cond;
      rec.status = agent::RunStatus::timeout;
      rec.error = outcome.message;
      rec.workspace = relative_to(ws, out_dir);
    } else if (outcome.exit_status != 0) {
      rec = agent::ResponseRecord{};
      rec.run_id = cond.run_id();
      rec.condition = cond;
      rec.status = agent::RunStatus::agent_error;
      rec.error = outcome.message;
      rec.workspace = relative_to(ws, out_dir);
    } else {
      rec = agent::parse_conclusion(ws, cond);
      rec.workspace = relative_to(ws, out_dir);
    }
    rec.wall_time = outcome.duration;
    rec.attempts = attempt + 1;
    if (rec.status == agent::RunStatus::ok) break;
  }
  return rec;
}

}  // namespace detail

inline int cmd_run(const HarnessConfig& cfg, const RunOptions& opts, std::ostream& out) {
  const fs::path plan_path = opts.plan_path.value_or(cfg.out_dir / "plan.json");
  if (!fs::exists(plan_path))
    throw ValidationError("plan " + plan_path.string() + " does not exist; run 'plan' first");
  json plan_json;
  try {
    plan_json = json::parse(tabular::read_file(plan_path));
  } catch (const json::parse_error& e) {
    throw ValidationError("plan " + plan_path.string() + " is not valid JSON: " + e.what());
  }
  const perturb::RunPlan plan = perturb::plan_from_json(plan_json);
  const json canonical_plan = perturb::plan_to_json(plan);

  auto datasets = detail::load_datasets(cfg);
  for (const perturb::RunCondition& cond : plan.conditions)
    detail::spec_for(cfg, cond.dataset_id);  // every plan id must resolve

  const fs::path ledger_path = cfg.out_dir / "ledger.jsonl";
  std::set<std::string> done;
  if (fs::exists(ledger_path)) {
    if (!opts.resume)
      throw ValidationError("ledger " + ledger_path.string() +
                            " already exists; pass --resume to continue it");
    ledger::LedgerContents existing = ledger::read_ledger(ledger_path);
    if (!existing.header.is_null()) {
      const std::string have = existing.header.value("plan_fingerprint", std::string{});
      const std::string want = ledger::fingerprint_hex(canonical_plan);
      if (have != want)
        throw ValidationError("ledger was started from a different plan (fingerprint " + have +
                              ", expected " + want + ")");
    }
    for (const auto& r : existing.responses) done.insert(r.run_id);
  } else {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw HarnessError("cannot create " + cfg.out_dir.string());
    ledger::append_line(ledger_path, ledger::make_header(cfg.master_seed, canonical_plan,
                                                         config::config_to_json(cfg)));
  }

  std::vector<const perturb::RunCondition*> pending;
  for (const perturb::RunCondition& cond : plan.conditions)
    if (!done.count(cond.run_id())) pending.push_back(&cond);
  if (pending.empty()) {
    out << "run: nothing to do (" << done.size() << " runs already recorded)\n";
    return 0;
  }

  const int jobs = std::max(1, opts.jobs.value_or(cfg.jobs));
  detail::RunOutcomeCounts counts;
  std::mutex ledger_mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr fault;
  std::mutex fault_mu;

  auto worker = [&]() {
    while (true) {
      if (fault) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const perturb::RunCondition& cond = *pending[i];
      try {
        const config::DatasetSpec& spec = detail::spec_for(cfg, cond.dataset_id);
        agent::ResponseRecord rec = detail::execute_condition(
            cfg, datasets.at(cond.dataset_id), spec.dependent, cond, cfg.out_dir);
        counts.add(rec.status);
        std::lock_guard<std::mutex> lock(ledger_mu);
        ledger::append_line(ledger_path, ledger::response_to_json(rec));
      } catch (...) {
        std::lock_guard<std::mutex> lock(fault_mu);
        if (!fault) fault = std::current_exception();
        return;
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }
  if (fault) std::rethrow_exception(fault);

  out << "run: " << pending.size() << " runs (ok=" << counts.ok
      << ", agent_error=" << counts.agent_error << ", parse_error=" << counts.parse_error
      << ", timeout=" << counts.timeout << ") -> " << ledger_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  std::optional<double> alpha;
  std::optional<double> tau;
  std::string variant = "standard";  // "standard" or "precise-null"
  std::string null_dataset;          // precise-null donor dataset id (optional)
  std::string null_arm = "alt";      // donor arm
  std::optional<fs::path> ledger_path;
};

namespace detail {

inline json counts_to_json(const ledger::ArmCounts& c) {
  return json{{"ok", c.ok},
              {"agent_error", c.agent_error},
              {"parse_error", c.parse_error},
              {"timeout", c.timeout}};
}

inline json report_to_json(const checks::CheckReport& report, const checks::DistributionPair& pair,
                           const ledger::ArmCounts& alt_counts,
                           const ledger::ArmCounts& null_counts, const std::string& variant,
                           const json& null_source) {
  json doc{
      {"schema_version", 1},
      {"dataset_id", report.dataset_id},
      {"variant", variant},
      {"alpha", report.alpha},
      {"tau", report.tau},
      {"regime", std::string(checks::regime_tag(report.regime))},
      {"regime_display", std::string(checks::regime_display(report.regime))},
      {"checks_passed", std::string(checks::checks_passed_label(report.regime))},
      {"precise_null_override", report.precise_null_override},
      {"bootstrap",
       json{{"p_value", report.bootstrap.p_value},
            {"ci_low", report.bootstrap.ci_low},
            {"ci_high", report.bootstrap.ci_high},
            {"observed_mean", report.bootstrap.observed_mean},
            {"samples", report.bootstrap.samples},
            {"mu0", report.bootstrap.mu0},
            {"blocked", report.bootstrap.blocked}}},
      {"overlap",
       json{{"ovl", report.overlap.ovl},
            {"ovl_raw", report.overlap.ovl_raw},
            {"bandwidth_alt", report.overlap.bandwidth_alt},
            {"bandwidth_null", report.overlap.bandwidth_null},
            {"grid_points", report.overlap.grid_points}}},
      {"alt",
       json{{"n", report.alt_n},
            {"mean", report.alt_mean},
            {"sd", report.alt_sd},
            {"counts", counts_to_json(alt_counts)},
            {"run_ids", pair.alt_run_ids}}},
      {"null",
       json{{"n", report.null_n},
            {"mean", report.null_mean},
            {"sd", report.null_sd},
            {"counts", counts_to_json(null_counts)},
            {"run_ids", pair.null_run_ids}}},
      {"eta_squared_alt",
       report.eta_squared_alt ? json(*report.eta_squared_alt) : json(nullptr)},
      {"null_source", null_source},
  };
  return doc;
}

inline void write_kde_csv(const fs::path& path, const stats::OverlapResult& overlap) {
  std::string csv = "x,density_alt,density_null\n";
  for (std::size_t i = 0; i < overlap.grid.size(); ++i) {
    csv += tabular::format_double(overlap.grid[i]);
    csv += ',';
    csv += tabular::format_double(overlap.density_alt[i]);
    csv += ',';
    csv += tabular::format_double(overlap.density_null[i]);
    csv += '\n';
  }
  tabular::write_file(path, csv);
}

inline void require_arm(const checks::DistributionPair& pair) {
  if (pair.alt.scores.empty())
    throw InsufficientDataError("dataset '" + pair.dataset_id +
                                "': the alternative arm has no ok records in the ledger");
  if (pair.null_sample.scores.empty())
    throw InsufficientDataError("dataset '" + pair.dataset_id +
                                "': the null arm has no ok records in the ledger");
  if (pair.alt.scores.size() < 2 || pair.null_sample.scores.size() < 2)
    throw InsufficientDataError("dataset '" + pair.dataset_id + "': need >= 2 ok records per arm (alt " +
                                std::to_string(pair.alt.scores.size()) + ", null " +
                                std::to_string(pair.null_sample.scores.size()) + ")");
}

}  // namespace detail

inline int cmd_analyze(const HarnessConfig& cfg, const AnalyzeOptions& opts, std::ostream& out) {
  if (opts.variant != "standard" && opts.variant != "precise-null")
    throw ValidationError("variant must be 'standard' or 'precise-null'");
  const bool precise = opts.variant == "precise-null";
  auto donor_arm = perturb::arm_from_tag(opts.null_arm);
  if (!donor_arm) throw ValidationError("--null-arm must be 'alt' or 'null'");
  if (!opts.null_dataset.empty() && !precise)
    throw ValidationError("--null-dataset only applies to the precise-null variant");

  const fs::path ledger_path = detail::require_ledger(opts.ledger_path, cfg.out_dir);
  auto assembled = ledger::assemble(ledger::read_ledger(ledger_path));
  if (assembled.empty()) throw InsufficientDataError("ledger has no response records");

  const ledger::AssembledDataset* donor = nullptr;
  if (!opts.null_dataset.empty()) {
    auto it = assembled.find(opts.null_dataset);
    if (it == assembled.end())
      throw ValidationError("null dataset '" + opts.null_dataset + "' is not in the ledger");
    donor = &it->second;
  }

  checks::CheckOptions check_opts;
  check_opts.alpha = opts.alpha.value_or(cfg.alpha);
  check_opts.tau = opts.tau.value_or(cfg.tau);
  check_opts.bootstrap_samples = cfg.bootstrap_samples;
  check_opts.grid_points = cfg.grid_points;
  check_opts.blocked = cfg.blocked_bootstrap;

  std::string summary = "# Sanity check summary\n\n";
  summary += "variant: " + opts.variant + "; alpha = " + tabular::format_double(check_opts.alpha) +
             "; tau = " + tabular::format_double(check_opts.tau) +
             "; B = " + std::to_string(check_opts.bootstrap_samples) + "\n\n";
  summary += "| Dataset | Null Mean (SD) | Alt Mean (SD) | p-Value | OVL | Checks Passed |\n";
  summary += "|---|---|---|---|---|---|\n";

  std::string scatter = "dataset_id,alt_mean,ovl,regime\n";
  int analyzed = 0;
  for (const auto& [dataset_id, slot] : assembled) {
    if (donor && dataset_id == opts.null_dataset) continue;  // the donor only supplies the null

    checks::DistributionPair pair = slot.pair;
    ledger::ArmCounts null_counts = slot.null_counts;
    json null_source = nullptr;
    if (donor) {
      const bool donor_alt = *donor_arm == perturb::Arm::alt;
      pair.null_sample = donor_alt ? donor->pair.alt : donor->pair.null_sample;
      pair.null_run_ids = donor_alt ? donor->pair.alt_run_ids : donor->pair.null_run_ids;
      null_counts = donor_alt ? donor->alt_counts : donor->null_counts;
      null_source = json{{"dataset_id", opts.null_dataset}, {"arm", opts.null_arm}};
    }
    detail::require_arm(pair);

    checks::CheckOptions ds_opts = check_opts;
    ds_opts.seed = rng::derive(cfg.master_seed, "analyze", dataset_id);
    const checks::CheckReport report =
        precise ? checks::classify_precise_null(pair, ds_opts) : checks::classify(pair, ds_opts);

    detail::write_json_file(cfg.out_dir / "reports" / ("report_" + dataset_id + ".json"),
                            detail::report_to_json(report, pair, slot.alt_counts, null_counts,
                                                   opts.variant, null_source));
    std::error_code ec;
    fs::create_directories(cfg.out_dir / "plots", ec);
    if (ec) throw HarnessError("cannot create " + (cfg.out_dir / "plots").string());
    detail::write_kde_csv(cfg.out_dir / "plots" / ("kde_" + dataset_id + ".csv"), report.overlap);

    summary += "| " + dataset_id + " | " + detail::fmt("%.2f", report.null_mean) + " (" +
               detail::fmt("%.2f", report.null_sd) + ") | " + detail::fmt("%.2f", report.alt_mean) +
               " (" + detail::fmt("%.2f", report.alt_sd) + ") | " +
               detail::fmt("%.4f", report.bootstrap.p_value) + " | " +
               detail::fmt("%.3f", report.overlap.ovl) + " | " +
               std::string(checks::checks_passed_label(report.regime)) + " |\n";
    scatter += dataset_id + "," + tabular::format_double(report.alt_mean) + "," +
               tabular::format_double(report.overlap.ovl) + "," +
               std::string(checks::regime_tag(report.regime)) + "\n";
    out << dataset_id << ": " << checks::regime_display(report.regime)
        << " (p=" << detail::fmt("%.4f", report.bootstrap.p_value)
        << ", ovl=" << detail::fmt("%.3f", report.overlap.ovl) << ")"
        << (report.precise_null_override ? " [precise-null override]" : "") << "\n";
    ++analyzed;
  }
  if (analyzed == 0) throw InsufficientDataError("no dataset left to analyze");

  tabular::write_file(cfg.out_dir / "reports" / "summary.md", summary);
  tabular::write_file(cfg.out_dir / "plots" / "scatter.csv", scatter);
  out << "analyze: " << analyzed << " dataset(s) -> "
      << (cfg.out_dir / "reports" / "summary.md").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate-pve
// ---------------------------------------------------------------------------

struct PveOptions {
  std::optional<std::vector<double>> levels;
};

inline int cmd_simulate_pve(const HarnessConfig& cfg, const PveOptions& opts, std::ostream& out) {
  const std::vector<double> levels = opts.levels.value_or(cfg.pve_levels);
  if (levels.empty()) throw ValidationError("no PVE levels given");
  for (double level : levels)
    if (level < 0.0 || level > 1.0)
      throw ValidationError("PVE level " + tabular::format_double(level) + " outside [0, 1]");

  auto datasets = detail::load_datasets(cfg);
  const fs::path pve_dir = cfg.out_dir / "pve";

  HarnessConfig derived = cfg;
  derived.datasets.clear();
  derived.replicates = cfg.pve_replicates;
  derived.out_dir = pve_dir;

  std::map<std::string, perturb::RunPlan> plans;  // level tag -> plan
  for (const config::DatasetSpec& spec : cfg.datasets) {
    const tabular::LoadedDataset& loaded = datasets.at(spec.id);
    tabular::DesignMatrix dm =
        tabular::one_hot_encode(loaded.dataset, spec.dependent, spec.independents);
    signal::SignalFit fit = signal::fit_signal_model(dm);

    for (double level : levels) {
      const std::string level_tag = tabular::format_double(level);
      const std::string synth_id = spec.id + "@pve" + level_tag;
      const std::uint64_t seed = rng::derive(cfg.master_seed, "pve", spec.id, level_tag);
      Eigen::VectorXd z = signal::synthesize_outcome(fit, level, seed);
      tabular::LoadedDataset synth =
          signal::make_synthetic_dataset(loaded.dataset, loaded.metadata, fit, z, level, seed,
                                         synth_id);
      const fs::path dir = pve_dir / "datasets" / synth_id;
      tabular::write_dataset(synth.dataset, synth.metadata, dir);

      config::DatasetSpec synth_spec;
      synth_spec.id = synth_id;
      synth_spec.csv = fs::path("datasets") / synth_id / (synth_id + ".csv");
      synth_spec.metadata = fs::path("datasets") / synth_id / "info.json";
      synth_spec.dependent = spec.dependent;
      synth_spec.independents = spec.independents;
      derived.datasets.push_back(synth_spec);

      perturb::RunPlan& plan = plans[level_tag];
      plan.master_seed = cfg.master_seed;
      auto part = perturb::build_run_plan(synth_id, cfg.pcs_kinds, cfg.pve_replicates,
                                          cfg.master_seed, /*include_null=*/false);
      plan.conditions.insert(plan.conditions.end(), part.begin(), part.end());
      out << "simulate-pve: " << synth_id << " (" << fit.row_indices.size() << " rows) -> "
          << dir.string() << "\n";
    }
  }

  const json derived_json = config::config_to_json(derived);
  detail::write_json_file(pve_dir / "config_pve.json", derived_json);
  for (auto& [level_tag, plan] : plans) {
    plan.config_snapshot = derived_json;
    const fs::path plan_path = pve_dir / ("plan_pve" + level_tag + ".json");
    detail::write_json_file(plan_path, perturb::plan_to_json(plan));
    out << "simulate-pve: " << plan.conditions.size() << " alt conditions -> "
        << plan_path.string() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

struct CalibrateOptions {
  int replicates = 1000;
  std::optional<fs::path> ledger_path;
};

inline int cmd_calibrate(const HarnessConfig& cfg, const CalibrateOptions& opts,
                         std::ostream& out) {
  if (opts.replicates < 1) throw ValidationError("--replicates must be >= 1");
  const fs::path ledger_path = detail::require_ledger(opts.ledger_path, cfg.out_dir);
  auto assembled = ledger::assemble(ledger::read_ledger(ledger_path));
  if (assembled.empty()) throw InsufficientDataError("ledger has no response records");

  for (const auto& [dataset_id, slot] : assembled) {
    if (slot.pair.alt.scores.empty())
      throw InsufficientDataError("dataset '" + dataset_id + "' has no ok alternative-arm records");
    const checks::CalibrationResult result = checks::calibration_simulation(
        slot.pair.alt, opts.replicates, cfg.bootstrap_samples, cfg.alpha, 50.0,
        rng::derive(cfg.master_seed, "calibrate", dataset_id));

    json blocks = json::array();
    for (std::size_t i = 0; i < slot.pair.alt.blocks.size(); ++i)
      blocks.push_back(json{{"label", i < slot.pair.alt.block_labels.size()
                                          ? slot.pair.alt.block_labels[i]
                                          : std::to_string(i)},
                            {"size", slot.pair.alt.blocks[i].size()}});
    detail::write_json_file(
        cfg.out_dir / "calibrate" / ("calibration_" + dataset_id + ".json"),
        json{{"schema_version", 1},
             {"dataset_id", dataset_id},
             {"replicates", result.replications},
             {"alpha", result.alpha},
             {"bootstrap_samples", cfg.bootstrap_samples},
             {"rejection_rate_unblocked", result.rejection_rate_unblocked},
             {"rejection_rate_blocked", result.rejection_rate_blocked},
             {"blocks", blocks}});

    std::string qq = "uniform_quantile,p_unblocked,p_blocked\n";
    const std::vector<double> positions = checks::qq_positions(result.replications);
    for (std::size_t i = 0; i < positions.size(); ++i) {
      qq += tabular::format_double(positions[i]);
      qq += ',';
      qq += tabular::format_double(result.p_unblocked[i]);
      qq += ',';
      qq += tabular::format_double(result.p_blocked[i]);
      qq += '\n';
    }
    tabular::write_file(cfg.out_dir / "calibrate" / ("qq_" + dataset_id + ".csv"), qq);
    out << dataset_id << ": rejection rate unblocked=" << detail::fmt("%.4f", result.rejection_rate_unblocked)
        << ", blocked=" << detail::fmt("%.4f", result.rejection_rate_blocked) << " (alpha="
        << tabular::format_double(result.alpha) << ", R=" << result.replications << ")\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

struct ConvergeOptions {
  std::optional<std::vector<int>> sizes;
  std::string mode = "random";
  std::string component = "full";
  std::optional<fs::path> ledger_path;
};

inline int cmd_converge(const HarnessConfig& cfg, const ConvergeOptions& opts, std::ostream& out) {
  auto mode = checks::subsample_mode_from_tag(opts.mode);
  if (!mode) throw ValidationError("--mode must be 'random' or 'alt_only'");
  auto component = checks::component_from_tag(opts.component);
  if (!component)
    throw ValidationError("--component must be 'full', 'bootstrap_only' or 'overlap_only'");

  const fs::path ledger_path = detail::require_ledger(opts.ledger_path, cfg.out_dir);
  auto assembled = ledger::assemble(ledger::read_ledger(ledger_path));
  if (assembled.empty()) throw InsufficientDataError("ledger has no response records");

  for (const auto& [dataset_id, slot] : assembled) {
    detail::require_arm(slot.pair);
    checks::ConvergenceOptions conv;
    if (opts.sizes) conv.sizes = *opts.sizes;
    conv.mode = *mode;
    conv.component = *component;
    conv.alpha = cfg.alpha;
    conv.tau = cfg.tau;
    conv.bootstrap_samples = cfg.convergence_bootstrap_samples;
    conv.grid_points = cfg.grid_points;
    conv.seed = rng::derive(cfg.master_seed, "converge", dataset_id);
    const checks::ConvergenceResult result = checks::convergence_analysis(slot.pair, conv);

    json points = json::array();
    std::string csv = "mode,component,size,repetitions,agreement\n";
    for (const checks::ConvergencePoint& p : result.points) {
      points.push_back(
          json{{"size", p.size}, {"repetitions", p.repetitions}, {"agreement", p.agreement}});
      csv += std::string(checks::subsample_mode_tag(result.mode)) + "," +
             std::string(checks::component_tag(result.component)) + "," + std::to_string(p.size) +
             "," + std::to_string(p.repetitions) + "," + tabular::format_double(p.agreement) +
             "\n";
    }
    detail::write_json_file(cfg.out_dir / "converge" / ("convergence_" + dataset_id + ".json"),
                            json{{"schema_version", 1},
                                 {"dataset_id", dataset_id},
                                 {"mode", std::string(checks::subsample_mode_tag(result.mode))},
                                 {"component", std::string(checks::component_tag(result.component))},
                                 {"reference_regime",
                                  std::string(checks::regime_tag(result.reference_regime))},
                                 {"reference_p", result.reference_p},
                                 {"reference_ovl", result.reference_ovl},
                                 {"bootstrap_samples", cfg.convergence_bootstrap_samples},
                                 {"points", points},
                                 {"skipped_sizes", result.skipped_sizes}});
    tabular::write_file(cfg.out_dir / "converge" / ("convergence_" + dataset_id + ".csv"), csv);
    out << dataset_id << ": " << result.points.size() << " size points (reference "
        << checks::regime_display(result.reference_regime) << ")\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// confidence
// ---------------------------------------------------------------------------

struct ConfidenceOptions {
  std::optional<fs::path> ledger_path;
};

inline int cmd_confidence(const HarnessConfig& cfg, const ConfidenceOptions& opts,
                          std::ostream& out) {
  const fs::path ledger_path = detail::require_ledger(opts.ledger_path, cfg.out_dir);
  ledger::LedgerContents contents = ledger::read_ledger(ledger_path);
  if (contents.responses.empty()) throw InsufficientDataError("ledger has no response records");

  std::set<std::string> have_confidence;
  for (const auto& c : contents.confidences) have_confidence.insert(c.run_id);

  std::vector<const agent::ResponseRecord*> todo;
  for (const auto& r : contents.responses)
    if (r.status == agent::RunStatus::ok && !have_confidence.count(r.run_id))
      todo.push_back(&r);
  std::sort(todo.begin(), todo.end(),
            [](const auto* a, const auto* b) { return a->run_id < b->run_id; });

  int executed = 0;
  for (const agent::ResponseRecord* r : todo) {
    const fs::path ws = cfg.out_dir / r->workspace;
    if (!fs::exists(ws / "conclusion.txt")) {
      out << r->run_id << ": workspace has no conclusion.txt, skipping\n";
      continue;
    }
    // The supervisor sees the same (perturbed) metadata the analyst saw.
    tabular::DatasetMetadata meta =
        tabular::metadata_from_json(json::parse(tabular::read_file(ws / "info.json")));

    agent::ConfidenceRecord rec;
    const int max_attempts = cfg.retries + 1;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      perturb::RunCondition attempt_cond = r->condition;
      if (attempt > 0) attempt_cond.seed = rng::derive(r->condition.seed, "retry", attempt);
      agent::stage_confidence_prompt(ws, meta, meta.dataset_name, cfg.confidence_template);
      agent::ExecOutcome outcome = agent::execute_agent(cfg.backend, ws, attempt_cond,
                                                        agent::Phase::confidence,
                                                        meta.dataset_name);
      if (outcome.spawn_failed)
        throw HarnessError("could not spawn agent for confidence pass of '" + r->run_id + "'");
      if (outcome.timed_out) {
        rec = agent::ConfidenceRecord{};
        rec.run_id = r->run_id;
        rec.status = agent::RunStatus::timeout;
        rec.error = outcome.message;
      } else if (outcome.exit_status != 0) {
        rec = agent::ConfidenceRecord{};
        rec.run_id = r->run_id;
        rec.status = agent::RunStatus::agent_error;
        rec.error = outcome.message;
      } else {
        rec = agent::parse_confidence(ws, r->condition);
      }
      rec.wall_time = outcome.duration;
      rec.attempts = attempt + 1;
      if (rec.status == agent::RunStatus::ok) break;
    }
    ledger::append_line(ledger_path, ledger::confidence_to_json(rec));
    contents.confidences.push_back(rec);
    ++executed;
  }

  // Join and correlate per dataset.
  std::map<std::string, std::vector<checks::ScoredRun>> scored_by_dataset;
  for (const auto& r : contents.responses)
    if (r.status == agent::RunStatus::ok)
      scored_by_dataset[r.condition.dataset_id].push_back(
          {r.run_id, std::string(perturb::arm_tag(r.condition.arm)),
           static_cast<double>(r.score)});
  std::map<std::string, agent::ConfidenceRecord> conf_by_id;
  for (const auto& c : contents.confidences)
    if (c.status == agent::RunStatus::ok) conf_by_id[c.run_id] = c;

  for (auto& [dataset_id, scored] : scored_by_dataset) {
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.run_id < b.run_id; });
    std::vector<checks::ConfidenceRun> confs;
    for (const auto& run : scored) {
      auto it = conf_by_id.find(run.run_id);
      if (it != conf_by_id.end())
        confs.push_back({run.run_id, static_cast<double>(it->second.confidence)});
    }
    const checks::ConfidenceCalibration calib = checks::confidence_calibration(scored, confs);

    std::string csv = "run_id,arm,confidence_fraction,exceedance\n";
    for (const checks::ConfidencePair& p : calib.pairs)
      csv += p.run_id + "," + p.arm + "," + tabular::format_double(p.confidence_fraction) + "," +
             tabular::format_double(p.exceedance) + "\n";
    std::error_code ec;
    fs::create_directories(cfg.out_dir / "confidence", ec);
    if (ec) throw HarnessError("cannot create " + (cfg.out_dir / "confidence").string());
    tabular::write_file(cfg.out_dir / "confidence" / ("pairs_" + dataset_id + ".csv"), csv);
    detail::write_json_file(
        cfg.out_dir / "confidence" / ("confidence_" + dataset_id + ".json"),
        json{{"schema_version", 1},
             {"dataset_id", dataset_id},
             {"pairs", calib.pairs.size()},
             {"rho_alt", calib.rho_alt ? json(*calib.rho_alt) : json(nullptr)},
             {"rho_null", calib.rho_null ? json(*calib.rho_null) : json(nullptr)},
             {"unmatched", calib.unmatched}});
    out << dataset_id << ": " << calib.pairs.size() << " confidence pairs, rho_alt="
        << (calib.rho_alt ? detail::fmt("%.3f", *calib.rho_alt) : std::string("n/a"))
        << ", rho_null="
        << (calib.rho_null ? detail::fmt("%.3f", *calib.rho_null) : std::string("n/a")) << "\n";
  }
  out << "confidence: " << executed << " new confidence runs -> " << ledger_path.string() << "\n";
  return 0;
}

}  // namespace pcscheck::pipeline
