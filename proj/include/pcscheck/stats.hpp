#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pcscheck/errors.hpp"
#include "pcscheck/rng.hpp"

// Statistical kernel: bootstrap mean tests, kernel density overlap,
// eta-squared, Spearman correlation, and the sample descriptives shared by
// the checks layer.  Everything here is deterministic given a seed.

namespace pcscheck::stats {

// Likert scores on [0, 100], optionally partitioned into labelled blocks
// (one block per perturbation kind in harness use).
struct ScoreSample {
  std::vector<double> scores;
  std::vector<std::vector<std::size_t>> blocks;
  std::vector<std::string> block_labels;

  bool has_blocks() const { return !blocks.empty(); }
  std::size_t size() const { return scores.size(); }

  void validate() const {
    for (double s : scores)
      if (!(s >= 0.0 && s <= 100.0))
        throw ValidationError("score " + std::to_string(s) + " outside [0, 100]");
    if (blocks.empty()) return;
    if (!block_labels.empty() && block_labels.size() != blocks.size())
      throw ValidationError("block labels do not match block count");
    std::vector<bool> seen(scores.size(), false);
    for (const auto& block : blocks) {
      if (block.empty()) throw ValidationError("empty score block");
      for (std::size_t i : block) {
        if (i >= scores.size()) throw ValidationError("block index out of range");
        if (seen[i]) throw ValidationError("block index repeated");
        seen[i] = true;
      }
    }
    for (bool b : seen)
      if (!b) throw ValidationError("blocks do not cover the sample");
  }
};

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw InsufficientDataError("mean of empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation, n-1 denominator.  Zero for n = 1.
inline double sample_sd(const std::vector<double>& v) {
  if (v.empty()) throw InsufficientDataError("sd of empty sample");
  if (v.size() == 1) return 0.0;
  double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double population_sd(const std::vector<double>& v) {
  if (v.empty()) throw InsufficientDataError("sd of empty sample");
  double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Linear-interpolation quantile (the "type 7" rule): h = (n-1)q.
// `sorted` must be ascending.
inline double quantile_linear(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw InsufficientDataError("quantile of empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// Bootstrap mean test
// ---------------------------------------------------------------------------

struct BootstrapResult {
  double p_value = 1.0;
  double ci_low = 0.0;    // percentile interval for the mean
  double ci_high = 0.0;
  double observed_mean = 0.0;
  int samples = 0;        // B
  double mu0 = 50.0;
  bool blocked = false;
};

namespace detail {

// Shares the p-value / CI assembly between the blocked and unblocked tests.
// One-sided upper test of H0: mu = mu0 against H1: mu > mu0.  b counts
// resample means <= mu0; the +1/(B+1) correction keeps p off zero, since a
// Monte Carlo p-value of exactly zero is never justified.
inline BootstrapResult summarize_bootstrap(std::vector<double>&& means, double observed_mean,
                                           double mu0, double ci_level, bool blocked) {
  BootstrapResult out;
  out.samples = static_cast<int>(means.size());
  out.mu0 = mu0;
  out.blocked = blocked;
  out.observed_mean = observed_mean;
  std::size_t b = 0;
  for (double m : means)
    if (m <= mu0) ++b;
  out.p_value = (static_cast<double>(b) + 1.0) / (static_cast<double>(means.size()) + 1.0);
  std::sort(means.begin(), means.end());
  const double lo_q = (1.0 - ci_level) / 2.0;
  out.ci_low = quantile_linear(means, lo_q);
  out.ci_high = quantile_linear(means, 1.0 - lo_q);
  return out;
}

}  // namespace detail

inline BootstrapResult bootstrap_mean_test(const ScoreSample& sample, double mu0 = 50.0,
                                           int B = 10000, std::uint64_t seed = 0,
                                           double ci_level = 0.95) {
  if (sample.scores.empty()) throw InsufficientDataError("bootstrap on empty sample");
  if (B < 1) throw ValidationError("bootstrap sample count must be >= 1");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ValidationError("ci level outside (0, 1)");
  const std::vector<double>& s = sample.scores;
  const std::size_t n = s.size();
  rng::Stream stream(seed);
  std::vector<double> means(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += s[stream.next_below(n)];
    means[static_cast<std::size_t>(b)] = sum / static_cast<double>(n);
  }
  return detail::summarize_bootstrap(std::move(means), mean(s), mu0, ci_level, false);
}

// As above but each block is resampled within itself, preserving the
// per-block sample sizes.  The mean is still pooled over all scores.
inline BootstrapResult blocked_bootstrap_mean_test(const ScoreSample& sample, double mu0 = 50.0,
                                                   int B = 10000, std::uint64_t seed = 0,
                                                   double ci_level = 0.95) {
  if (sample.scores.empty()) throw InsufficientDataError("bootstrap on empty sample");
  if (!sample.has_blocks())
    throw ValidationError("blocked bootstrap requires a blocked sample");
  sample.validate();
  if (B < 1) throw ValidationError("bootstrap sample count must be >= 1");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ValidationError("ci level outside (0, 1)");
  const std::vector<double>& s = sample.scores;
  const double n = static_cast<double>(s.size());
  rng::Stream stream(seed);
  std::vector<double> means(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    double sum = 0.0;
    for (const auto& block : sample.blocks) {
      const std::size_t m = block.size();
      for (std::size_t i = 0; i < m; ++i) sum += s[block[stream.next_below(m)]];
    }
    means[static_cast<std::size_t>(b)] = sum / n;
  }
  return detail::summarize_bootstrap(std::move(means), mean(s), mu0, ci_level, true);
}

// ---------------------------------------------------------------------------
// Kernel density and overlap
// ---------------------------------------------------------------------------

//! Scott's rule, sample sd with the n-1 denominator.  A zero-spread sample
//! gets the floor bandwidth 0.5 so the density stays proper.
inline double kde_bandwidth(const std::vector<double>& scores) {
  if (scores.empty()) throw InsufficientDataError("bandwidth of empty sample");
  const double sd = sample_sd(scores);
  if (sd == 0.0) return 0.5;
  return sd * std::pow(static_cast<double>(scores.size()), -0.2);
}

struct KdeResult {
  std::vector<double> density;
  double bandwidth = 0.0;
};

//! Gaussian KDE evaluated at the given abscissae.  Contributions beyond
//! eight bandwidths are dropped; they are below 1e-14 of a kernel's mass.
inline KdeResult kde_density(const std::vector<double>& scores,
                             const std::vector<double>& grid) {
  KdeResult out;
  out.bandwidth = kde_bandwidth(scores);
  const double h = out.bandwidth;
  const double norm =
      1.0 / (static_cast<double>(scores.size()) * h * std::sqrt(2.0 * 3.14159265358979323846));
  const double cutoff = 8.0 * h;
  out.density.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double x = grid[g];
    double acc = 0.0;
    for (double xi : scores) {
      const double d = x - xi;
      if (d > cutoff || d < -cutoff) continue;
      const double z = d / h;
      acc += std::exp(-0.5 * z * z);
    }
    out.density[g] = acc * norm;
  }
  return out;
}

inline std::vector<double> uniform_grid(double lo, double hi, std::size_t points) {
  if (points < 2) throw ValidationError("grid needs at least 2 points");
  std::vector<double> grid(points);
  const double step = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) grid[i] = lo + step * static_cast<double>(i);
  grid.back() = hi;
  return grid;
}

inline double trapezoid(const std::vector<double>& grid, const std::vector<double>& values) {
  if (grid.size() != values.size() || grid.size() < 2)
    throw ValidationError("trapezoid needs matching grids of >= 2 points");
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    acc += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
  return acc;
}

struct OverlapResult {
  double ovl = 0.0;       // clamped to [0, 1]
  double ovl_raw = 0.0;   // the integral as computed
  double bandwidth_alt = 0.0;
  double bandwidth_null = 0.0;
  int grid_points = 0;
  std::vector<double> grid;
  std::vector<double> density_alt;
  std::vector<double> density_null;
};

// Overlap coefficient: integral of min(f_alt, f_null) over [0, 100] by the
// trapezoid rule on a uniform grid.  Mass the kernels put outside [0, 100]
// is simply not counted, which can only shrink the overlap.
inline OverlapResult overlap_coefficient(const ScoreSample& alt, const ScoreSample& null_sample,
                                         int grid_points = 2048) {
  if (alt.scores.empty() || null_sample.scores.empty())
    throw InsufficientDataError("overlap needs scores in both arms");
  if (grid_points < 2) throw ValidationError("grid points must be >= 2");
  OverlapResult out;
  out.grid_points = grid_points;
  out.grid = uniform_grid(0.0, 100.0, static_cast<std::size_t>(grid_points));
  KdeResult fa = kde_density(alt.scores, out.grid);
  KdeResult fn = kde_density(null_sample.scores, out.grid);
  out.bandwidth_alt = fa.bandwidth;
  out.bandwidth_null = fn.bandwidth;
  std::vector<double> lower(out.grid.size());
  for (std::size_t i = 0; i < out.grid.size(); ++i)
    lower[i] = std::min(fa.density[i], fn.density[i]);
  out.ovl_raw = trapezoid(out.grid, lower);
  out.ovl = std::clamp(out.ovl_raw, 0.0, 1.0);
  out.density_alt = std::move(fa.density);
  out.density_null = std::move(fn.density);
  return out;
}

// ---------------------------------------------------------------------------
// Heterogeneity and rank statistics
// ---------------------------------------------------------------------------

struct EtaSquaredResult {
  double eta_squared = 0.0;
  double ss_between = 0.0;
  double ss_total = 0.0;
  std::vector<double> group_means;
  std::vector<std::size_t> group_sizes;
};

// Between-group share of total variation.  A totally flat pooled sample has
// no variation to attribute, so eta-squared is defined as 0 there.
inline EtaSquaredResult eta_squared(const std::vector<std::vector<double>>& groups) {
  EtaSquaredResult out;
  double grand_sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    if (g.empty()) throw InsufficientDataError("eta-squared with an empty group");
    out.group_means.push_back(mean(g));
    out.group_sizes.push_back(g.size());
    grand_sum += std::accumulate(g.begin(), g.end(), 0.0);
    n += g.size();
  }
  if (groups.size() < 2) throw InsufficientDataError("eta-squared needs >= 2 groups");
  const double grand = grand_sum / static_cast<double>(n);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const double d = out.group_means[gi] - grand;
    out.ss_between += static_cast<double>(out.group_sizes[gi]) * d * d;
    for (double x : groups[gi]) out.ss_total += (x - grand) * (x - grand);
  }
  out.eta_squared = out.ss_total == 0.0 ? 0.0 : out.ss_between / out.ss_total;
  return out;
}

namespace detail {

// Average ranks (1-based), ties get the mean of the ranks they span.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

// Spearman correlation with average ranks; empty when undefined (fewer than
// two points, or either variable has no rank variation).
inline std::optional<double> spearman_rho(const std::vector<double>& x,
                                          const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("spearman inputs differ in length");
  if (x.size() < 2) return std::nullopt;
  std::vector<double> rx = detail::average_ranks(x);
  std::vector<double> ry = detail::average_ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// Share of the other scores strictly above scores[index].
inline double empirical_exceedance(std::size_t index, const std::vector<double>& scores) {
  if (scores.size() < 2)
    throw InsufficientDataError("exceedance needs at least 2 scores");
  if (index >= scores.size()) throw ValidationError("exceedance index out of range");
  std::size_t above = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (j != index && scores[j] > scores[index]) ++above;
  return static_cast<double>(above) / static_cast<double>(scores.size() - 1);
}

}  // namespace pcscheck::stats
