#include "mr_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

namespace pedmr::testing {

dataset::SummaryStats random_summary_stats(std::size_t j, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(j);
  dataset::SummaryStats s;
  s.beta_x.resize(n);
  s.se_x.resize(n);
  s.p_x.resize(n);
  s.beta_y.resize(n);
  s.se_y.resize(n);
  s.p_y.resize(n);
  const double theta = nd(rng) * 0.5;
  for (Eigen::Index k = 0; k < n; ++k) {
    s.snp_ids.push_back("rs" + std::to_string(k + 1));
    double bx = 0.05 + 0.3 * unif(rng);
    if (unif(rng) < 0.3) bx = -bx;
    s.beta_x(k) = bx;
    s.se_x(k) = 0.01 + 0.05 * unif(rng);
    s.se_y(k) = 0.02 + 0.1 * unif(rng);
    const double shift = unif(rng) < 0.33 ? 0.2 * nd(rng) : 0.0;
    s.beta_y(k) = theta * bx + shift + s.se_y(k) * nd(rng);
    s.p_x(k) = 0.01;
    s.p_y(k) = 0.5;
  }
  s.exposure_leg = "ols";
  s.outcome_leg = "logistic";
  return s;
}

ClosedForm ivw_oracle(const dataset::SummaryStats& s) {
  double sxx = 0.0, sxy = 0.0;
  const auto j = s.beta_x.size();
  for (Eigen::Index k = 0; k < j; ++k) {
    const double w = 1.0 / (s.se_y(k) * s.se_y(k));
    sxx += w * s.beta_x(k) * s.beta_x(k);
    sxy += w * s.beta_x(k) * s.beta_y(k);
  }
  ClosedForm out;
  out.estimate = sxy / sxx;
  double rss = 0.0;
  for (Eigen::Index k = 0; k < j; ++k) {
    const double r = s.beta_y(k) - out.estimate * s.beta_x(k);
    rss += r * r / (s.se_y(k) * s.se_y(k));
  }
  const double sigma = j > 1 ? std::sqrt(rss / static_cast<double>(j - 1)) : 1.0;
  out.se = std::max(1.0, sigma) / std::sqrt(sxx);
  return out;
}

ClosedForm egger_oracle(const dataset::SummaryStats& s) {
  const auto j = s.beta_x.size();
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
  std::vector<double> x(static_cast<std::size_t>(j)), y(static_cast<std::size_t>(j)), w(static_cast<std::size_t>(j));
  for (Eigen::Index k = 0; k < j; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double sign = s.beta_x(k) < 0.0 ? -1.0 : 1.0;
    x[i] = sign * s.beta_x(k);
    y[i] = sign * s.beta_y(k);
    w[i] = 1.0 / (s.se_y(k) * s.se_y(k));
    s0 += w[i];
    s1 += w[i] * x[i];
    s2 += w[i] * x[i] * x[i];
    t0 += w[i] * y[i];
    t1 += w[i] * x[i] * y[i];
  }
  const double det = s0 * s2 - s1 * s1;
  ClosedForm out;
  out.intercept = (t0 * s2 - s1 * t1) / det;
  out.estimate = (s0 * t1 - s1 * t0) / det;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - out.intercept - out.estimate * x[i];
    rss += w[i] * r * r;
  }
  const double inflate = j > 2 ? std::max(1.0, rss / static_cast<double>(j - 2)) : 1.0;
  out.se = std::sqrt(inflate * s0 / det);
  out.intercept_se = std::sqrt(inflate * s2 / det);
  return out;
}

double weighted_median_oracle(const std::vector<double>& values, const std::vector<double>& weights) {
  std::vector<std::pair<double, double>> pts;
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    pts.emplace_back(values[i], weights[i]);
    total += weights[i];
  }
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> p(pts.size());
  double before = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    p[i] = (before + 0.5 * pts[i].second) / total;
    before += pts[i].second;
  }
  if (0.5 <= p.front()) return pts.front().first;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    if (p[i] < 0.5 && 0.5 <= p[i + 1])
      return pts[i].first + (pts[i + 1].first - pts[i].first) * (0.5 - p[i]) / (p[i + 1] - p[i]);
  return pts.back().first;
}

}  // namespace pedmr::testing
