#pragma once

#include <Eigen/Dense>

namespace pedmr::regression {

struct Coefficient {
  double estimate = 0.0;
  double se = 0.0;
  double p_value = 1.0;
};

/// y = a + b*x by least squares; returns the slope with its classical SE and
/// two-sided t-test p-value (n - 2 df).
Coefficient ols_slope(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct LogisticFit {
  Eigen::Vector2d coef = Eigen::Vector2d::Zero();  // intercept, slope
  Eigen::Vector2d se = Eigen::Vector2d::Zero();
  double deviance = 0.0;
  int iterations = 0;
  bool converged = false;
  bool separated = false;
};

/// Logistic regression of a 0/1 response on an intercept and x by IRLS.
/// Stops when the deviance change falls below `tol`.
LogisticFit logistic_irls(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int max_iter = 100, double tol = 1e-10);

double normal_two_sided_p(double z);
double student_t_two_sided_p(double t, double df);
double chisq1_upper_tail(double x);

}  // namespace pedmr::regression
