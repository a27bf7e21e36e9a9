#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pedmr/dataset.hpp"

namespace pedmr::freq_mr {

enum class Method {
  simple_median,
  weighted_median,
  penalized_weighted_median,
  ivw,
  penalized_ivw,
  robust_ivw,
  penalized_robust_ivw,
  egger,
  penalized_egger,
  robust_egger,
  penalized_robust_egger,
};

/// Display label, e.g. "Penalized robust MR-Egger".
std::string_view method_label(Method m);
/// Identifier, e.g. "penalized_robust_egger".
std::string_view method_id(Method m);
const std::vector<Method>& all_methods();

struct FreqEstimate {
  Method method = Method::ivw;
  double estimate = 0.0;  // log-odds-ratio scale
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  std::optional<double> intercept;     // Egger family only
  std::optional<double> intercept_se;
  std::vector<std::string> warnings;
};

struct Options {
  /// Penalized weights are w * min(1, penalty_factor * q), q the chi-square(1)
  /// upper tail of each instrument's heterogeneity contribution.
  double penalty_factor = 20.0;
  double tukey_c = 4.685;
  int robust_max_iter = 200;
  double robust_tol = 1e-10;
  int bootstrap_resamples = 2000;
  std::uint64_t seed = 20240101;
};

struct Ratio {
  double estimate = 0.0;
  double se = 0.0;
};

/// Wald ratios with first-order standard errors. Throws ValidationError when
/// any beta_x is exactly zero.
std::vector<Ratio> ratio_estimates(const dataset::SummaryStats& s);

FreqEstimate ivw(const dataset::SummaryStats& s, bool penalized, bool robust, const Options& opts = {});

enum class MedianVariant { simple, weighted, penalized_weighted };
FreqEstimate median_mr(const dataset::SummaryStats& s, MedianVariant variant, const Options& opts = {});

FreqEstimate egger(const dataset::SummaryStats& s, bool penalized, bool robust, const Options& opts = {});

/// Weighted median of `values` with non-negative `weights`, interpolating
/// between the order statistics that bracket cumulative weight 0.5 (each
/// point placed at the midpoint of its weight mass).
double weighted_median(const std::vector<double>& values, const std::vector<double>& weights);

/// Every method in table order.
std::vector<FreqEstimate> run_all(const dataset::SummaryStats& s, const Options& opts = {});

/// `method,estimate,se,ci_low,ci_high,p`
std::string format_table(const std::vector<FreqEstimate>& rows);

}  // namespace pedmr::freq_mr
