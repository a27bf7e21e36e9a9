#include "pedmr/regression.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/students_t.hpp>

#include "pedmr/error.hpp"

namespace pedmr::regression {

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

double chisq1_upper_tail(double x) {
  if (x <= 0.0) return 1.0;
  return std::erfc(std::sqrt(0.5 * x));
}

Coefficient ols_slope(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const auto n = static_cast<double>(x.size());
  if (x.size() != y.size() || x.size() < 3) throw ValidationError("ols_slope: need at least 3 paired values");
  const double mx = x.mean(), my = y.mean();
  const Eigen::ArrayXd dx = x.array() - mx;
  const double sxx = dx.square().sum();
  if (!(sxx > 0.0)) throw ValidationError("ols_slope: constant regressor");
  const double b = (dx * (y.array() - my)).sum() / sxx;
  const double a = my - b * mx;
  const double rss = (y.array() - a - b * x.array()).square().sum();
  Coefficient c;
  c.estimate = b;
  c.se = std::sqrt(rss / (n - 2.0) / sxx);
  c.p_value = c.se > 0.0 ? student_t_two_sided_p(b / c.se, n - 2.0) : 0.0;
  return c;
}

LogisticFit logistic_irls(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int max_iter, double tol) {
  const auto n = x.size();
  LogisticFit fit;
  Eigen::MatrixXd design(n, 2);
  design.col(0).setOnes();
  design.col(1) = x;

  // Start from the intercept-only solution.
  const double ybar = std::clamp(y.mean(), 1e-6, 1.0 - 1e-6);
  Eigen::Vector2d beta(std::log(ybar / (1.0 - ybar)), 0.0);

  auto deviance = [&](const Eigen::VectorXd& eta) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      // log(1 + exp(eta)) - y*eta, computed stably
      const double e = eta(i);
      const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      dev += 2.0 * (softplus - y(i) * e);
    }
    return dev;
  };

  Eigen::VectorXd eta = design * beta;
  double dev = deviance(eta);
  Eigen::Matrix2d info = Eigen::Matrix2d::Identity();
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::ArrayXd p = 1.0 / (1.0 + (-eta.array()).exp());
    Eigen::ArrayXd w = (p * (1.0 - p)).max(1e-12);
    info = design.transpose() * (w.matrix().asDiagonal() * design);
    Eigen::Vector2d score = design.transpose() * (y.array() - p).matrix();
    Eigen::Vector2d step = info.ldlt().solve(score);
    // Step halving keeps the deviance non-increasing.
    double new_dev = 0.0;
    Eigen::Vector2d trial = beta + step;
    for (int h = 0; h < 30; ++h) {
      eta = design * trial;
      new_dev = deviance(eta);
      if (std::isfinite(new_dev) && new_dev <= dev + 1e-12) break;
      step *= 0.5;
      trial = beta + step;
    }
    beta = trial;
    fit.iterations = it;
    const double change = std::abs(new_dev - dev) / (std::abs(new_dev) + 0.1);
    dev = new_dev;
    if (change < tol) {
      fit.converged = true;
      break;
    }
  }
  Eigen::ArrayXd p = 1.0 / (1.0 + (-eta.array()).exp());
  Eigen::ArrayXd w = p * (1.0 - p);
  info = design.transpose() * (w.matrix().asDiagonal() * design);
  fit.coef = beta;
  fit.deviance = dev;
  const Eigen::Matrix2d cov = info.inverse();
  fit.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.separated = !fit.converged || !beta.allFinite() || beta.cwiseAbs().maxCoeff() > 30.0 ||
                  !fit.se.allFinite() || (p.minCoeff() < 1e-10 && p.maxCoeff() > 1.0 - 1e-10);
  return fit;
}

}  // namespace pedmr::regression
