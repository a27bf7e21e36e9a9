#pragma once

#include <Eigen/Dense>

#include "pedmr/dataset.hpp"

namespace pedmr::assoc {

struct LmmResult {
  double beta = 0.0;
  double se = 0.0;
  double intercept = 0.0;
  double sigma_g2 = 0.0;
  double sigma_e2 = 0.0;
  double lambda = 0.0;  // sigma_g2 / sigma_e2
  double log_likelihood = 0.0;
  double p_value = 1.0;
};

/// y = mu + x*b + g + e, cov(g) = sigma_g2 * K, cov(e) = sigma_e2 * I, fitted
/// by maximum likelihood. K is eigendecomposed once at construction so the
/// same engine can fit many (y, x) pairs.
class LmmEngine {
 public:
  explicit LmmEngine(const Eigen::MatrixXd& relationship);

  LmmResult fit(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const;

  /// Profiled log-likelihood at variance ratio lambda, for already-rotated data.
  double profile_log_likelihood(double lambda, const Eigen::VectorXd& y, const Eigen::VectorXd& x) const;

  const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }
  Eigen::Index size() const noexcept { return eigenvalues_.size(); }

  static constexpr double kLogLambdaMin = -10.0;
  static constexpr double kLogLambdaMax = 10.0;
  static constexpr int kGridPoints = 101;
  static constexpr double kTolerance = 1e-6;

 private:
  struct Rotated {
    Eigen::VectorXd y;
    Eigen::MatrixXd design;  // columns: intercept, x
  };
  Rotated rotate(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const;
  double profile(double lambda, const Rotated& r, LmmResult* out) const;

  Eigen::MatrixXd eigenvectors_;
  Eigen::VectorXd eigenvalues_;
};

LmmResult lmm_fit(const Eigen::VectorXd& y, const Eigen::VectorXd& x, const Eigen::MatrixXd& relationship);

/// Exposure leg on observed-X rows (LMM when use_lmm, else OLS); outcome leg
/// by per-instrument logistic IRLS (or linear, on request) over all rows.
dataset::SummaryStats assoc_scan(const dataset::MRDataset& d, const Eigen::MatrixXd& relationship, bool use_lmm,
                                 dataset::OutcomeLeg outcome_leg = dataset::OutcomeLeg::logistic);

}  // namespace pedmr::assoc
