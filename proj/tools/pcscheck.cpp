// pcscheck: perturbation harness for agentic analysis conclusions.
//
// Subcommands:
//   plan          write the run plan (dataset x perturbation x arm x replicate)
//   run           execute the plan against the configured backend, appending a ledger
//   analyze       score the ledger: bootstrap Yes check + KDE Overlap check + regime
//   simulate-pve  synthesize outcomes at fixed PVE levels and emit derived plans
//   calibrate     null-calibration simulation for the bootstrap test
//   converge      subsample-size agreement curves against the full-sample verdict
//   confidence    second-pass confidence elicitation + rank correlation
//
// Exit codes: 0 ok, 2 validation error, 3 insufficient data, 4 harness/agent failure.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcscheck/config.hpp"
#include "pcscheck/errors.hpp"
#include "pcscheck/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Path to the harness config JSON")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "Override the master seed from the config");
  cmd->add_option("--out", args.out_dir, "Override the output directory from the config");
}

pcscheck::config::HarnessConfig load(const CommonArgs& args) {
  pcscheck::config::HarnessConfig cfg = pcscheck::config::load_config(args.config_path);
  if (args.seed) cfg.master_seed = *args.seed;
  if (args.out_dir) cfg.out_dir = *args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcscheck: stress-test harness for data-driven verdicts"};
  app.require_subcommand(1);

  CommonArgs plan_args;
  CLI::App* plan = app.add_subcommand("plan", "Write the run plan");
  add_common(plan, plan_args);

  CommonArgs run_args;
  pcscheck::pipeline::RunOptions run_opts;
  std::optional<std::string> run_plan_path;
  std::optional<int> run_jobs;
  CLI::App* run = app.add_subcommand("run", "Execute the plan and append the ledger");
  add_common(run, run_args);
  run->add_option("--plan", run_plan_path, "Plan file (default: <out>/plan.json)");
  run->add_option("--jobs", run_jobs, "Worker threads (default: config jobs)")
      ->check(CLI::PositiveNumber);
  run->add_flag("--resume", run_opts.resume, "Continue an existing ledger");

  CommonArgs analyze_args;
  pcscheck::pipeline::AnalyzeOptions analyze_opts;
  std::optional<double> analyze_alpha, analyze_tau;
  std::optional<std::string> analyze_ledger;
  CLI::App* analyze = app.add_subcommand("analyze", "Run both sanity checks over the ledger");
  add_common(analyze, analyze_args);
  analyze->add_option("--alpha", analyze_alpha, "Yes-check significance level (default 0.05)");
  analyze->add_option("--tau", analyze_tau, "Overlap-check threshold (default 0.2)");
  analyze->add_option("--variant", analyze_opts.variant, "standard | precise-null")
      ->check(CLI::IsMember({"standard", "precise-null"}));
  analyze->add_option("--null-dataset", analyze_opts.null_dataset,
                      "Precise-null donor dataset id");
  analyze->add_option("--null-arm", analyze_opts.null_arm, "Donor arm: alt | null")
      ->check(CLI::IsMember({"alt", "null"}));
  analyze->add_option("--ledger", analyze_ledger, "Ledger file (default: <out>/ledger.jsonl)");

  CommonArgs pve_args;
  std::vector<double> pve_levels;
  CLI::App* pve = app.add_subcommand("simulate-pve", "Synthesize outcomes at fixed PVE levels");
  add_common(pve, pve_args);
  pve->add_option("--pve", pve_levels, "PVE levels in [0,1] (default: config pve_levels)");

  CommonArgs calibrate_args;
  pcscheck::pipeline::CalibrateOptions calibrate_opts;
  std::optional<std::string> calibrate_ledger;
  CLI::App* calibrate = app.add_subcommand("calibrate", "Null-calibration simulation");
  add_common(calibrate, calibrate_args);
  calibrate->add_option("--replicates", calibrate_opts.replicates,
                        "Simulation replicates (default 1000)")
      ->check(CLI::PositiveNumber);
  calibrate->add_option("--ledger", calibrate_ledger, "Ledger file (default: <out>/ledger.jsonl)");

  CommonArgs converge_args;
  pcscheck::pipeline::ConvergeOptions converge_opts;
  std::vector<int> converge_sizes;
  std::optional<std::string> converge_ledger;
  CLI::App* converge = app.add_subcommand("converge", "Subsample agreement curves");
  add_common(converge, converge_args);
  converge->add_option("--sizes", converge_sizes, "Subsample sizes (default: built-in ladder)");
  converge->add_option("--mode", converge_opts.mode, "random | alt_only")
      ->check(CLI::IsMember({"random", "alt_only"}));
  converge->add_option("--component", converge_opts.component,
                       "full | bootstrap_only | overlap_only")
      ->check(CLI::IsMember({"full", "bootstrap_only", "overlap_only"}));
  converge->add_option("--ledger", converge_ledger, "Ledger file (default: <out>/ledger.jsonl)");

  CommonArgs confidence_args;
  std::optional<std::string> confidence_ledger;
  CLI::App* confidence = app.add_subcommand("confidence", "Confidence elicitation pass");
  add_common(confidence, confidence_args);
  confidence->add_option("--ledger", confidence_ledger,
                         "Ledger file (default: <out>/ledger.jsonl)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (plan->parsed()) return pcscheck::pipeline::cmd_plan(load(plan_args), std::cout);
    if (run->parsed()) {
      if (run_plan_path) run_opts.plan_path = *run_plan_path;
      run_opts.jobs = run_jobs;
      return pcscheck::pipeline::cmd_run(load(run_args), run_opts, std::cout);
    }
    if (analyze->parsed()) {
      analyze_opts.alpha = analyze_alpha;
      analyze_opts.tau = analyze_tau;
      if (analyze_ledger) analyze_opts.ledger_path = *analyze_ledger;
      return pcscheck::pipeline::cmd_analyze(load(analyze_args), analyze_opts, std::cout);
    }
    if (pve->parsed()) {
      pcscheck::pipeline::PveOptions opts;
      if (!pve_levels.empty()) opts.levels = pve_levels;
      return pcscheck::pipeline::cmd_simulate_pve(load(pve_args), opts, std::cout);
    }
    if (calibrate->parsed()) {
      if (calibrate_ledger) calibrate_opts.ledger_path = *calibrate_ledger;
      return pcscheck::pipeline::cmd_calibrate(load(calibrate_args), calibrate_opts, std::cout);
    }
    if (converge->parsed()) {
      if (!converge_sizes.empty()) converge_opts.sizes = converge_sizes;
      if (converge_ledger) converge_opts.ledger_path = *converge_ledger;
      return pcscheck::pipeline::cmd_converge(load(converge_args), converge_opts, std::cout);
    }
    if (confidence->parsed()) {
      pcscheck::pipeline::ConfidenceOptions opts;
      if (confidence_ledger) opts.ledger_path = *confidence_ledger;
      return pcscheck::pipeline::cmd_confidence(load(confidence_args), opts, std::cout);
    }
  } catch (const pcscheck::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const pcscheck::InsufficientDataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const pcscheck::HarnessError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
