#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pcscheck/errors.hpp"
#include "pcscheck/rng.hpp"
#include "pcscheck/tabular.hpp"

// Ordinary-least-squares signal model and variance-tuned outcome synthesis.
//
// Given a fit Y-hat = X beta, a synthetic outcome at a chosen proportion of
// variance explained (PVE) is Z = Y-hat + eps with
//
//     sigma_eps = sqrt( Var(Y-hat) * (1 - PVE) / PVE ),
//
// so that Var(Y-hat) / Var(Z) = PVE in expectation.  PVE = 1 returns the
// fitted values exactly; PVE = 0 discards the signal and draws iid
// Normal(mean(Y), sd(Y)).  Variances here use the population (1/n)
// convention.

namespace pcscheck::signal {

struct SignalFit {
  Eigen::VectorXd beta;                     // one entry per design column; dropped -> 0
  Eigen::VectorXd fitted;                   // over the design's kept rows
  std::vector<std::string> column_names;
  std::vector<std::string> dropped_columns; // collinear columns excluded from the solve
  std::vector<std::size_t> row_indices;     // original rows behind `fitted`
  std::string dependent_name;
  double y_bar = 0.0;
  double sigma_y = 0.0;    // population sd of the outcome
  double var_yhat = 0.0;   // population variance of the fitted values
};

namespace detail {

inline double population_variance(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size());
}

}  // namespace detail

// Fits by QR on a maximal linearly independent subset of the columns, chosen
// greedily in column order (the intercept comes first, so it always
// survives).  Dropped columns get coefficient zero, which leaves the fitted
// values unchanged versus any other minimum-norm resolution of the
// collinearity.
inline SignalFit fit_signal_model(const tabular::DesignMatrix& dm) {
  const Eigen::Index n = dm.X.rows();
  const Eigen::Index p = dm.X.cols();
  if (n == 0 || p == 0) throw InsufficientDataError("empty design matrix");
  if (dm.y.size() != n) throw HarnessError("design/outcome row mismatch");

  // Greedy Gram-Schmidt: keep a column iff it has material residual norm
  // after projecting out the columns already kept.
  std::vector<Eigen::Index> kept;
  std::vector<Eigen::VectorXd> basis;
  const double tol = 1e-10;
  for (Eigen::Index c = 0; c < p; ++c) {
    Eigen::VectorXd v = dm.X.col(c);
    const double original = v.norm();
    for (const Eigen::VectorXd& b : basis) v -= b.dot(v) * b;
    if (original > 0.0 && v.norm() > tol * std::max(1.0, original)) {
      basis.push_back(v / v.norm());
      kept.push_back(c);
    }
  }
  if (kept.empty()) throw InsufficientDataError("design matrix has no usable columns");

  Eigen::MatrixXd Xk(n, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) Xk.col(static_cast<Eigen::Index>(i)) = dm.X.col(kept[i]);
  Eigen::VectorXd beta_k = Xk.colPivHouseholderQr().solve(dm.y);

  SignalFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < kept.size(); ++i) fit.beta(kept[i]) = beta_k(static_cast<Eigen::Index>(i));
  fit.fitted = Xk * beta_k;
  fit.column_names = dm.column_names;
  fit.row_indices = dm.row_indices;
  fit.dependent_name = dm.dependent_name;
  {
    std::vector<bool> is_kept(static_cast<std::size_t>(p), false);
    for (Eigen::Index c : kept) is_kept[static_cast<std::size_t>(c)] = true;
    for (Eigen::Index c = 0; c < p; ++c)
      if (!is_kept[static_cast<std::size_t>(c)])
        fit.dropped_columns.push_back(dm.column_names[static_cast<std::size_t>(c)]);
  }
  fit.y_bar = dm.y.mean();
  fit.sigma_y = std::sqrt(detail::population_variance(dm.y));
  fit.var_yhat = detail::population_variance(fit.fitted);
  return fit;
}

inline double noise_scale_for_pve(double var_yhat, double pve) {
  if (!(pve > 0.0) || pve > 1.0)
    throw ValidationError("pve must be in (0, 1] for a noise scale; got " +
                          tabular::format_double(pve));
  if (var_yhat < 0.0) throw HarnessError("negative fitted variance");
  return std::sqrt(var_yhat * (1.0 - pve) / pve);
}

inline Eigen::VectorXd synthesize_outcome(const SignalFit& fit, double pve, std::uint64_t seed) {
  if (pve < 0.0 || pve > 1.0)
    throw ValidationError("pve must be in [0, 1]; got " + tabular::format_double(pve));
  const Eigen::Index n = fit.fitted.size();
  if (pve == 1.0) return fit.fitted;
  rng::Stream stream(rng::derive(seed, "synthesize"));
  Eigen::VectorXd z(n);
  if (pve == 0.0) {
    for (Eigen::Index i = 0; i < n; ++i) z(i) = stream.next_normal(fit.y_bar, fit.sigma_y);
    return z;
  }
  const double sigma_eps = noise_scale_for_pve(fit.var_yhat, pve);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = fit.fitted(i) + stream.next_normal(0.0, sigma_eps);
  return z;
}

// A copy of the source dataset restricted to the fit's rows, with the
// dependent column replaced by the synthetic outcome.  Provenance lands in
// metadata.extra["synthetic"].
inline tabular::LoadedDataset make_synthetic_dataset(const tabular::TabularDataset& ds,
                                                     const tabular::DatasetMetadata& meta,
                                                     const SignalFit& fit,
                                                     const Eigen::VectorXd& z, double pve,
                                                     std::uint64_t seed,
                                                     const std::string& new_name) {
  if (z.size() != static_cast<Eigen::Index>(fit.row_indices.size()))
    throw HarnessError("synthetic outcome length does not match the fit's rows");
  auto dep_idx = ds.column_index(fit.dependent_name);
  if (!dep_idx) throw HarnessError("dependent column vanished from source dataset");

  tabular::TabularDataset out;
  out.name = new_name;
  out.columns.resize(ds.columns.size());
  for (std::size_t c = 0; c < ds.columns.size(); ++c) {
    out.columns[c].name = ds.columns[c].name;
    out.columns[c].cells.reserve(fit.row_indices.size());
    for (std::size_t i = 0; i < fit.row_indices.size(); ++i) {
      if (c == *dep_idx)
        out.columns[c].cells.push_back(
            tabular::Cell::make_number(z(static_cast<Eigen::Index>(i))));
      else
        out.columns[c].cells.push_back(ds.columns[c].cells[fit.row_indices[i]]);
    }
  }

  tabular::DatasetMetadata out_meta = meta;
  out_meta.dataset_name = new_name;
  out_meta.extra["synthetic"] = nlohmann::json{{"source_dataset", meta.dataset_name},
                                               {"dependent", fit.dependent_name},
                                               {"pve", pve},
                                               {"seed", seed},
                                               {"rows_used", fit.row_indices.size()}};
  return {std::move(out), std::move(out_meta)};
}

}  // namespace pcscheck::signal
