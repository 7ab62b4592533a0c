#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pcscheck/errors.hpp"
#include "pcscheck/rng.hpp"
#include "pcscheck/stats.hpp"

// The two sanity checks and everything layered on them: regime
// classification, the precise-null variant, subsample convergence curves,
// calibration simulation, and confidence calibration.

namespace pcscheck::checks {

// The Yes check asks whether the alternative scores sit above the midpoint
// (bootstrap p < alpha); the Overlap check asks whether the alternative and
// null score distributions are separated (OVL < tau).  Strict inequalities
// on both.
enum class Regime { passed_both, yes_only, overlap_only, neither };

inline Regime regime_for(double p_value, double ovl, double alpha = 0.05, double tau = 0.2) {
  const bool yes = p_value < alpha;
  const bool separated = ovl < tau;
  if (yes && separated) return Regime::passed_both;
  if (yes) return Regime::yes_only;
  if (separated) return Regime::overlap_only;
  return Regime::neither;
}

inline std::string_view regime_tag(Regime r) {
  switch (r) {
    case Regime::passed_both: return "passed_both";
    case Regime::yes_only: return "yes_only";
    case Regime::overlap_only: return "overlap_only";
    case Regime::neither: return "neither";
  }
  return "neither";
}

inline std::optional<Regime> regime_from_tag(std::string_view tag) {
  for (Regime r : {Regime::passed_both, Regime::yes_only, Regime::overlap_only, Regime::neither})
    if (regime_tag(r) == tag) return r;
  return std::nullopt;
}

// Long-form verdict on the conclusion.
inline std::string_view regime_display(Regime r) {
  switch (r) {
    case Regime::passed_both: return "Passed both checks";
    case Regime::yes_only: return "Failed the Overlap check";
    case Regime::overlap_only: return "Failed the Yes check";
    case Regime::neither: return "Failed both checks";
  }
  return "Failed both checks";
}

// Compact table form: which checks the dataset passed.
inline std::string_view checks_passed_label(Regime r) {
  switch (r) {
    case Regime::passed_both: return "Both";
    case Regime::yes_only: return "Yes Check";
    case Regime::overlap_only: return "Overlap Check";
    case Regime::neither: return "Neither";
  }
  return "Neither";
}

// A dataset's paired score distributions with run provenance.
struct DistributionPair {
  std::string dataset_id;
  stats::ScoreSample alt;
  stats::ScoreSample null_sample;
  std::vector<std::string> alt_run_ids;
  std::vector<std::string> null_run_ids;
};

struct CheckOptions {
  double alpha = 0.05;
  double tau = 0.2;
  double mu0 = 50.0;
  int bootstrap_samples = 10000;
  int grid_points = 2048;
  double ci_level = 0.95;
  bool blocked = false;  // blocked bootstrap instead of the plain one
  std::uint64_t seed = 0;
};

struct CheckReport {
  std::string dataset_id;
  Regime regime = Regime::neither;
  bool precise_null_override = false;
  stats::BootstrapResult bootstrap;
  stats::OverlapResult overlap;
  double alpha = 0.05;
  double tau = 0.2;
  double alt_mean = 0.0, alt_sd = 0.0;
  double null_mean = 0.0, null_sd = 0.0;
  std::size_t alt_n = 0, null_n = 0;
  std::optional<double> eta_squared_alt;  // across perturbation blocks, when >= 2
};

inline CheckReport classify(const DistributionPair& pair, const CheckOptions& opts = {}) {
  if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw ValidationError("alpha outside (0, 1)");
  if (!(opts.tau > 0.0 && opts.tau < 1.0)) throw ValidationError("tau outside (0, 1)");
  pair.alt.validate();
  pair.null_sample.validate();
  if (pair.alt.scores.empty() || pair.null_sample.scores.empty())
    throw InsufficientDataError("dataset '" + pair.dataset_id + "' is missing an arm");

  CheckReport report;
  report.dataset_id = pair.dataset_id;
  report.alpha = opts.alpha;
  report.tau = opts.tau;
  const std::uint64_t boot_seed = rng::derive(opts.seed, "bootstrap");
  report.bootstrap =
      opts.blocked
          ? stats::blocked_bootstrap_mean_test(pair.alt, opts.mu0, opts.bootstrap_samples,
                                               boot_seed, opts.ci_level)
          : stats::bootstrap_mean_test(pair.alt, opts.mu0, opts.bootstrap_samples, boot_seed,
                                       opts.ci_level);
  report.overlap = stats::overlap_coefficient(pair.alt, pair.null_sample, opts.grid_points);
  report.regime = regime_for(report.bootstrap.p_value, report.overlap.ovl, opts.alpha, opts.tau);
  report.alt_mean = stats::mean(pair.alt.scores);
  report.alt_sd = stats::sample_sd(pair.alt.scores);
  report.null_mean = stats::mean(pair.null_sample.scores);
  report.null_sd = stats::sample_sd(pair.null_sample.scores);
  report.alt_n = pair.alt.size();
  report.null_n = pair.null_sample.size();
  if (pair.alt.blocks.size() >= 2) {
    std::vector<std::vector<double>> groups;
    for (const auto& block : pair.alt.blocks) {
      std::vector<double> g;
      g.reserve(block.size());
      for (std::size_t i : block) g.push_back(pair.alt.scores[i]);
      groups.push_back(std::move(g));
    }
    report.eta_squared_alt = stats::eta_squared(groups).eta_squared;
  }
  return report;
}

// Precise-null variant: the null arm is a weak-but-real signal rather than
// no signal.  If the alternative still overlaps such a null and that null
// itself leans "yes" (mean above the midpoint), a small bootstrap p-value is
// no evidence the agent detected anything beyond the weak signal, so the
// verdict is forced to "Failed the Yes check".
inline CheckReport classify_precise_null(const DistributionPair& pair,
                                         const CheckOptions& opts = {}) {
  CheckReport report = classify(pair, opts);
  if (report.overlap.ovl >= opts.tau && report.null_mean > opts.mu0) {
    report.regime = Regime::overlap_only;
    report.precise_null_override = true;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Subsample convergence
// ---------------------------------------------------------------------------

enum class SubsampleMode { random, alt_only };
enum class Component { full, bootstrap_only, overlap_only };

inline std::string_view subsample_mode_tag(SubsampleMode m) {
  return m == SubsampleMode::random ? "random" : "alt_only";
}

inline std::string_view component_tag(Component c) {
  switch (c) {
    case Component::full: return "full";
    case Component::bootstrap_only: return "bootstrap_only";
    case Component::overlap_only: return "overlap_only";
  }
  return "full";
}

inline std::optional<SubsampleMode> subsample_mode_from_tag(std::string_view tag) {
  if (tag == "random") return SubsampleMode::random;
  if (tag == "alt_only") return SubsampleMode::alt_only;
  return std::nullopt;
}

inline std::optional<Component> component_from_tag(std::string_view tag) {
  for (Component c : {Component::full, Component::bootstrap_only, Component::overlap_only})
    if (component_tag(c) == tag) return c;
  return std::nullopt;
}

inline const std::vector<int>& default_convergence_sizes() {
  static const std::vector<int> sizes = {2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25, 50, 75, 100};
  return sizes;
}

// More repetitions where subsamples are small and noisy, fewer where they
// are large and slow.
inline int convergence_repetitions(int size) {
  if (size <= 10) return 1000;
  if (size <= 25) return 500;
  return 200;
}

struct ConvergenceOptions {
  std::vector<int> sizes = default_convergence_sizes();
  SubsampleMode mode = SubsampleMode::random;
  Component component = Component::full;
  double alpha = 0.05;
  double tau = 0.2;
  double mu0 = 50.0;
  int bootstrap_samples = 2000;  // smaller B keeps the repetition loop tractable
  int grid_points = 2048;
  std::uint64_t seed = 0;
};

struct ConvergencePoint {
  int size = 0;
  int repetitions = 0;  // 0 when the reference classification was reused
  double agreement = 0.0;
};

struct ConvergenceResult {
  std::string dataset_id;
  SubsampleMode mode = SubsampleMode::random;
  Component component = Component::full;
  Regime reference_regime = Regime::neither;
  double reference_p = 1.0;
  double reference_ovl = 1.0;
  std::vector<ConvergencePoint> points;
  std::vector<int> skipped_sizes;  // larger than the available data
};

namespace detail {

struct ComponentVerdict {
  bool yes = false;
  bool separated = false;
  Regime regime = Regime::neither;
};

inline bool component_agrees(Component c, const ComponentVerdict& a, const ComponentVerdict& b) {
  switch (c) {
    case Component::full: return a.regime == b.regime;
    case Component::bootstrap_only: return a.yes == b.yes;
    case Component::overlap_only: return a.separated == b.separated;
  }
  return false;
}

}  // namespace detail

// How often does a size-n subsample reproduce the full-data verdict?
// Subsampling is without replacement: the question is what a smaller study
// would have concluded, not a bootstrap.  At n equal to the full arm size a
// subsample is the full data, so the reference verdict is reused and the
// agreement is exactly 1.
inline ConvergenceResult convergence_analysis(const DistributionPair& pair,
                                              const ConvergenceOptions& opts = {}) {
  pair.alt.validate();
  pair.null_sample.validate();
  if (pair.alt.scores.empty() || pair.null_sample.scores.empty())
    throw InsufficientDataError("convergence needs both arms");

  ConvergenceResult out;
  out.dataset_id = pair.dataset_id;
  out.mode = opts.mode;
  out.component = opts.component;

  CheckOptions ref_opts;
  ref_opts.alpha = opts.alpha;
  ref_opts.tau = opts.tau;
  ref_opts.mu0 = opts.mu0;
  ref_opts.bootstrap_samples = opts.bootstrap_samples;
  ref_opts.grid_points = opts.grid_points;
  ref_opts.seed = rng::derive(opts.seed, "reference");

  DistributionPair plain = pair;       // strip blocks: subsamples are unblocked
  plain.alt.blocks.clear();
  plain.alt.block_labels.clear();
  plain.null_sample.blocks.clear();
  plain.null_sample.block_labels.clear();

  const CheckReport reference = classify(plain, ref_opts);
  out.reference_regime = reference.regime;
  out.reference_p = reference.bootstrap.p_value;
  out.reference_ovl = reference.overlap.ovl;
  const detail::ComponentVerdict ref_verdict{reference.bootstrap.p_value < opts.alpha,
                                             reference.overlap.ovl < opts.tau, reference.regime};

  const std::size_t alt_n = plain.alt.size();
  const std::size_t null_n = plain.null_sample.size();

  for (int size : opts.sizes) {
    if (size < 2) throw ValidationError("subsample sizes must be >= 2");
    const auto sz = static_cast<std::size_t>(size);
    const bool need_null = opts.mode == SubsampleMode::random;
    if (sz > alt_n || (need_null && sz > null_n)) {
      out.skipped_sizes.push_back(size);
      continue;
    }
    const bool full_alt = sz == alt_n;
    const bool full_null = !need_null || sz == null_n;
    if (full_alt && full_null) {
      out.points.push_back({size, 0, 1.0});
      continue;
    }
    const int reps = convergence_repetitions(size);
    int agree = 0;
    for (int r = 0; r < reps; ++r) {
      rng::Stream draw(rng::derive(opts.seed, "subsample", size, r));
      DistributionPair sub;
      sub.dataset_id = pair.dataset_id;
      for (std::size_t i : draw.sample_without_replacement(alt_n, sz))
        sub.alt.scores.push_back(plain.alt.scores[i]);
      if (need_null) {
        for (std::size_t i : draw.sample_without_replacement(null_n, sz))
          sub.null_sample.scores.push_back(plain.null_sample.scores[i]);
      } else {
        sub.null_sample.scores = plain.null_sample.scores;
      }
      CheckOptions sub_opts = ref_opts;
      sub_opts.seed = rng::derive(opts.seed, "classify", size, r);
      const CheckReport rep = classify(sub, sub_opts);
      const detail::ComponentVerdict verdict{rep.bootstrap.p_value < opts.alpha,
                                             rep.overlap.ovl < opts.tau, rep.regime};
      if (detail::component_agrees(opts.component, ref_verdict, verdict)) ++agree;
    }
    out.points.push_back({size, reps, static_cast<double>(agree) / static_cast<double>(reps)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration simulation
// ---------------------------------------------------------------------------

struct CalibrationResult {
  int replications = 0;
  double alpha = 0.05;
  double rejection_rate_unblocked = 0.0;
  double rejection_rate_blocked = 0.0;
  std::vector<double> p_unblocked;  // sorted ascending
  std::vector<double> p_blocked;
};

// Level check under a no-effect world built from real scores: the sample is
// recentred so its pooled mean is exactly the null midpoint, R pseudo-samples
// are drawn from it by within-block resampling, and both bootstrap tests run
// on each.  A calibrated level-alpha test should reject close to alpha of
// the time.
inline CalibrationResult calibration_simulation(const stats::ScoreSample& sample, int R = 1000,
                                                int B = 10000, double alpha = 0.05,
                                                double mu0 = 50.0, std::uint64_t seed = 0) {
  if (sample.scores.empty()) throw InsufficientDataError("calibration on empty sample");
  if (R < 1) throw ValidationError("calibration replications must be >= 1");
  stats::ScoreSample centered = sample;
  if (!centered.has_blocks()) {
    centered.blocks.push_back(std::vector<std::size_t>(centered.scores.size()));
    for (std::size_t i = 0; i < centered.scores.size(); ++i) centered.blocks[0][i] = i;
  }
  centered.validate();
  const double shift = mu0 - stats::mean(centered.scores);
  for (double& s : centered.scores) s += shift;

  CalibrationResult out;
  out.replications = R;
  out.alpha = alpha;
  out.p_unblocked.reserve(static_cast<std::size_t>(R));
  out.p_blocked.reserve(static_cast<std::size_t>(R));

  for (int r = 0; r < R; ++r) {
    // One pseudo-dataset: each block resampled within itself.
    rng::Stream draw(rng::derive(seed, "replicate", r));
    stats::ScoreSample pseudo;
    pseudo.blocks.resize(centered.blocks.size());
    for (std::size_t bi = 0; bi < centered.blocks.size(); ++bi) {
      const auto& block = centered.blocks[bi];
      for (std::size_t k = 0; k < block.size(); ++k) {
        pseudo.blocks[bi].push_back(pseudo.scores.size());
        pseudo.scores.push_back(centered.scores[block[draw.next_below(block.size())]]);
      }
    }
    const double pu = stats::bootstrap_mean_test(pseudo, mu0, B,
                                                 rng::derive(seed, "unblocked", r))
                          .p_value;
    const double pb = stats::blocked_bootstrap_mean_test(pseudo, mu0, B,
                                                         rng::derive(seed, "blocked", r))
                          .p_value;
    out.p_unblocked.push_back(pu);
    out.p_blocked.push_back(pb);
  }
  const auto rate = [&](const std::vector<double>& ps) {
    std::size_t rej = 0;
    for (double p : ps)
      if (p < alpha) ++rej;
    return static_cast<double>(rej) / static_cast<double>(ps.size());
  };
  out.rejection_rate_unblocked = rate(out.p_unblocked);
  out.rejection_rate_blocked = rate(out.p_blocked);
  std::sort(out.p_unblocked.begin(), out.p_unblocked.end());
  std::sort(out.p_blocked.begin(), out.p_blocked.end());
  return out;
}

// Uniform plotting positions (i - 0.5) / R for a QQ plot against the sorted
// p-values.
inline std::vector<double> qq_positions(int R) {
  std::vector<double> out(static_cast<std::size_t>(R));
  for (int i = 1; i <= R; ++i)
    out[static_cast<std::size_t>(i - 1)] = (static_cast<double>(i) - 0.5) / static_cast<double>(R);
  return out;
}

// ---------------------------------------------------------------------------
// Confidence calibration
// ---------------------------------------------------------------------------

struct ScoredRun {
  std::string run_id;
  std::string arm;  // "alt" or "null"
  double score = 0.0;
};

struct ConfidenceRun {
  std::string run_id;
  double confidence = 0.0;  // 0..100
};

struct ConfidencePair {
  std::string run_id;
  std::string arm;
  double confidence_fraction = 0.0;  // confidence / 100
  double exceedance = 0.0;           // share of peers strictly above this run's score
};

struct ConfidenceCalibration {
  std::vector<ConfidencePair> pairs;
  std::optional<double> rho_alt;   // Spearman, confidence vs exceedance
  std::optional<double> rho_null;
  std::vector<std::string> unmatched;  // confidence runs with no scored partner
};

// Joins confidence reports onto scored runs by run id and asks, per arm,
// whether stated confidence tracks the run's standing among its peers.  A
// well-calibrated supervisor should assign higher confidence to runs few
// peers exceed, i.e. rho should be negative.
inline ConfidenceCalibration confidence_calibration(const std::vector<ScoredRun>& scored,
                                                    const std::vector<ConfidenceRun>& confidences) {
  std::map<std::string, const ScoredRun*> by_id;
  std::map<std::string, std::vector<double>> arm_scores;
  std::map<std::string, std::size_t> index_in_arm;
  for (const ScoredRun& run : scored) {
    if (!by_id.emplace(run.run_id, &run).second)
      throw ValidationError("scored run id '" + run.run_id + "' repeats");
    index_in_arm[run.run_id] = arm_scores[run.arm].size();
    arm_scores[run.arm].push_back(run.score);
  }

  ConfidenceCalibration out;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_arm;
  for (const ConfidenceRun& conf : confidences) {
    auto it = by_id.find(conf.run_id);
    if (it == by_id.end()) {
      out.unmatched.push_back(conf.run_id);
      continue;
    }
    const ScoredRun& run = *it->second;
    const std::vector<double>& peers = arm_scores[run.arm];
    if (peers.size() < 2) continue;  // exceedance undefined with no peers
    ConfidencePair pair;
    pair.run_id = run.run_id;
    pair.arm = run.arm;
    pair.confidence_fraction = conf.confidence / 100.0;
    pair.exceedance = stats::empirical_exceedance(index_in_arm[run.run_id], peers);
    per_arm[run.arm].first.push_back(pair.confidence_fraction);
    per_arm[run.arm].second.push_back(pair.exceedance);
    out.pairs.push_back(std::move(pair));
  }
  if (auto it = per_arm.find("alt"); it != per_arm.end())
    out.rho_alt = stats::spearman_rho(it->second.first, it->second.second);
  if (auto it = per_arm.find("null"); it != per_arm.end())
    out.rho_null = stats::spearman_rho(it->second.first, it->second.second);
  return out;
}

}  // namespace pcscheck::checks
