#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pedmr/sampler.hpp"

namespace pedmr::diagnostics {

/// Rank-normalized split-R-hat: the larger of the bulk and folded-tail values.
/// NaN when any chain is constant.
double split_rhat(const std::vector<Eigen::VectorXd>& chains);
/// Split-R-hat on raw (not rank-normalized) values.
double split_rhat_raw(const std::vector<Eigen::VectorXd>& chains);
double ess_bulk(const std::vector<Eigen::VectorXd>& chains);
double ess_tail(const std::vector<Eigen::VectorXd>& chains);
/// ESS of the chains as given (no splitting or normalization).
double ess(const std::vector<Eigen::VectorXd>& chains);
/// Monte Carlo standard error of the mean.
double mcse_mean(const std::vector<Eigen::VectorXd>& chains);

struct ParamDiagnostic {
  std::string name;
  double rhat = 0.0;
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
  bool flagged = false;  // constant parameter, diagnostics undefined
};

struct Summary {
  std::vector<ParamDiagnostic> params;
  std::size_t divergences = 0;
  std::size_t n_chains = 0;
  std::size_t n_draws = 0;

  /// Largest R-hat among non-flagged parameters.
  double max_rhat() const;
  const ParamDiagnostic& at(const std::string& name) const;
  std::string to_json() const;
};

/// Diagnostics for the named values, or for every stored value when empty
/// (derived quantities when present, otherwise unconstrained coordinates).
Summary summarize(const sampler::PosteriorDraws& draws, const std::vector<std::string>& names = {});

}  // namespace pedmr::diagnostics
