#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pedmr/bayes_model.hpp"
#include "pedmr/sampler.hpp"

namespace pedmr::posterior {

inline const std::vector<double> kTableProbs{0.05, 0.25, 0.50, 0.75, 0.95};

/// Linear-interpolation quantiles: position h = (n-1)p + 1 among the order
/// statistics (1-based). probs must be sorted and lie in [0, 1].
Eigen::VectorXd percentiles(const Eigen::VectorXd& samples, const std::vector<double>& probs = kTableProbs);

/// Element-wise exp, mapping log odds ratios to odds ratios.
Eigen::VectorXd odds_ratio_transform(const Eigen::VectorXd& log_or);

struct PercentileRow {
  std::string quantity;
  Eigen::VectorXd values;
};

struct PercentileTable {
  std::vector<double> probs = kTableProbs;
  std::vector<PercentileRow> rows;

  const PercentileRow& row(std::string_view quantity) const;
  /// `quantity,p5,p25,p50,p75,p95`
  std::string to_csv() const;
  std::string to_json() const;
  static PercentileTable parse_csv(std::string_view text);
};

PercentileTable percentile_table(const sampler::PosteriorDraws& draws, const std::vector<std::string>& names,
                                 const std::vector<double>& probs = kTableProbs);

/// The causal effect on log-odds and odds-ratio scales.
PercentileTable causal_effect_table(const sampler::PosteriorDraws& draws);

struct FamilyEffects {
  PercentileTable direct;    // exp(gamma_y[f])
  PercentileTable indirect;  // exp(gamma_x[f] * theta)
};

/// Per-draw family effects summarized by percentiles. Throws ValidationError
/// when the draws have no family blocks.
FamilyEffects family_effects(const sampler::PosteriorDraws& draws);

/// `param,low50,low90,median,high90,high50`: central 50% and 90% intervals.
std::string interval_csv(const sampler::PosteriorDraws& draws, const std::vector<std::string>& names);

struct ImputeSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  std::optional<double> correlation;  // with the supplied truth
  std::optional<double> rmse;

  std::string to_csv(const std::vector<std::string>& ids) const;
};

/// Summaries of the x_mis draws on the standardized exposure scale.
ImputeSummary impute_summary(const sampler::PosteriorDraws& draws, const std::optional<Eigen::VectorXd>& truth = {});

struct PpcReport {
  std::size_t replicates = 0;
  double observed_cases = 0.0;
  double p_total = 0.0;
  std::vector<std::string> families;
  Eigen::VectorXd observed_family_cases;
  Eigen::VectorXd p_family;

  std::string to_json() const;
};

/// Posterior predictive check on case counts: replicate outcomes from
/// `replicates` evenly thinned draws and report the fraction of replicates
/// whose statistic is at least the observed one.
PpcReport ppc(const sampler::PosteriorDraws& draws, const bayes::PosteriorModel& model, std::uint64_t seed,
              std::size_t replicates = 200);

/// Long-format draws CSV: `chain,iter,name1,...`. Chains and iterations are 1-based.
std::string draws_csv(const std::vector<std::string>& names, const std::vector<Eigen::MatrixXd>& chains);
struct DrawsTable {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;
};
DrawsTable parse_draws_csv(std::string_view text);

}  // namespace pedmr::posterior
