#include "pedmr/freq_mr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pedmr/error.hpp"
#include "pedmr/regression.hpp"
#include "pedmr/text_io.hpp"

namespace pedmr::freq_mr {

namespace {

constexpr double kZ975 = 1.959963984540054;

struct MethodInfo {
  Method method;
  std::string_view id;
  std::string_view label;
};

constexpr std::array<MethodInfo, 11> kMethods{{
    {Method::simple_median, "simple_median", "Simple median"},
    {Method::weighted_median, "weighted_median", "Weighted median"},
    {Method::penalized_weighted_median, "penalized_weighted_median", "Penalized weighted median"},
    {Method::ivw, "ivw", "IVW"},
    {Method::penalized_ivw, "penalized_ivw", "Penalized IVW"},
    {Method::robust_ivw, "robust_ivw", "Robust IVW"},
    {Method::penalized_robust_ivw, "penalized_robust_ivw", "Penalized robust IVW"},
    {Method::egger, "egger", "MR-Egger"},
    {Method::penalized_egger, "penalized_egger", "Penalized MR-Egger"},
    {Method::robust_egger, "robust_egger", "Robust MR-Egger"},
    {Method::penalized_robust_egger, "penalized_robust_egger", "Penalized robust MR-Egger"},
}};

const MethodInfo& info(Method m) {
  for (const auto& i : kMethods)
    if (i.method == m) return i;
  throw Error("unknown MR method");
}

struct LinearFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov;
};

// Weighted least squares with multiplicative random-effects inflation of the
// covariance: the residual standard error is floored at 1.
LinearFit wls(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd xtw = design.transpose() * w.asDiagonal();
  const Eigen::MatrixXd a = xtw * design;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !(a.determinant() > 0.0)) throw ValidationError("weighted regression: singular design");
  LinearFit f;
  f.coef = ldlt.solve(xtw * y);
  const auto j = design.rows(), p = design.cols();
  const Eigen::MatrixXd a_inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  double inflate = 1.0;
  if (j > p) {
    const Eigen::VectorXd r = y - design * f.coef;
    const double sigma2 = (w.array() * r.array().square()).sum() / static_cast<double>(j - p);
    inflate = std::max(1.0, sigma2);
  }
  f.cov = a_inv * inflate;
  return f;
}

double median_of(std::vector<double> v) {
  const auto n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Tukey-biweight M-estimation by IRLS on whitened data (rows scaled by
// sqrt(w)). Scale is fixed at the normalized MAD of the starting residuals.
LinearFit robust_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                     const Eigen::VectorXd& start, const Options& opts) {
  const auto j = design.rows(), p = design.cols();
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd xt = sw.asDiagonal() * design;
  const Eigen::VectorXd yt = sw.asDiagonal() * y;

  Eigen::VectorXd coef = start;
  Eigen::VectorXd r = yt - xt * coef;
  std::vector<double> absr(static_cast<std::size_t>(j));
  for (Eigen::Index i = 0; i < j; ++i) absr[static_cast<std::size_t>(i)] = std::abs(r(i));
  double scale = 1.482602218505602 * median_of(absr);
  if (!(scale > 1e-12)) scale = std::sqrt(r.squaredNorm() / static_cast<double>(j));
  if (!(scale > 1e-12)) {
    // Start already fits at least half the points exactly.
    return wls(design, y, w);
  }

  const double c = opts.tukey_c;
  auto biweight = [c](double u) {
    const double t = u / c;
    return std::abs(t) < 1.0 ? (1.0 - t * t) * (1.0 - t * t) : 0.0;
  };
  bool converged = false;
  for (int it = 0; it < opts.robust_max_iter; ++it) {
    Eigen::VectorXd rw(j);
    for (Eigen::Index i = 0; i < j; ++i) rw(i) = biweight(r(i) / scale);
    if (!(rw.sum() > 0.0)) throw ConvergenceError("robust regression: all observations rejected");
    const Eigen::MatrixXd xtw = xt.transpose() * rw.asDiagonal();
    const Eigen::MatrixXd a = xtw * xt;
    if (!(a.determinant() > 1e-300)) throw ConvergenceError("robust regression: singular weighted design");
    const Eigen::VectorXd next = a.ldlt().solve(xtw * yt);
    const double delta = (next - coef).cwiseAbs().maxCoeff();
    coef = next;
    r = yt - xt * coef;
    if (delta <= opts.robust_tol * (1.0 + coef.cwiseAbs().maxCoeff())) {
      converged = true;
      break;
    }
  }
  if (!converged) throw ConvergenceError("robust regression did not converge");

  // Sandwich covariance for an M-estimator.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p), b = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < j; ++i) {
    const double u = r(i) / scale, t = u / c;
    const double psi = std::abs(t) < 1.0 ? u * (1.0 - t * t) * (1.0 - t * t) : 0.0;
    const double dpsi = std::abs(t) < 1.0 ? (1.0 - t * t) * (1.0 - 5.0 * t * t) : 0.0;
    const Eigen::VectorXd xi = xt.row(i).transpose();
    a += dpsi * xi * xi.transpose();
    b += psi * psi * xi * xi.transpose();
  }
  LinearFit f;
  f.coef = coef;
  const double dof = j > p ? static_cast<double>(j) / static_cast<double>(j - p) : 1.0;
  if (a.determinant() > 1e-300 && a.ldlt().isPositive()) {
    const Eigen::MatrixXd a_inv = a.inverse();
    f.cov = scale * scale * dof * a_inv * b * a_inv;
  } else {
    Eigen::VectorXd rw(j);
    for (Eigen::Index i = 0; i < j; ++i) rw(i) = biweight(r(i) / scale);
    f.cov = scale * scale * (xt.transpose() * rw.asDiagonal() * xt).inverse();
  }
  if (!(f.cov.diagonal().array() > 0.0).all()) {
    // Degenerate sandwich (all residuals inside the flat part); use the fixed-effect covariance.
    f.cov = (xt.transpose() * xt).inverse();
  }
  return f;
}

FreqEstimate wald(Method m, double est, double se) {
  FreqEstimate e;
  e.method = m;
  e.estimate = est;
  e.se = se;
  e.ci_low = est - kZ975 * se;
  e.ci_high = est + kZ975 * se;
  e.p_value = regression::normal_two_sided_p(est / se);
  return e;
}

void check_stats(const dataset::SummaryStats& s) {
  s.validate();
  if (s.size() == 0) throw ValidationError("no instruments in summary statistics");
}

Eigen::VectorXd outcome_weights(const dataset::SummaryStats& s) { return s.se_y.array().square().inverse(); }

Eigen::VectorXd penalize(const Eigen::VectorXd& w, const Eigen::VectorXd& contrib, const Options& opts) {
  Eigen::VectorXd out(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    out(i) = w(i) * std::min(1.0, opts.penalty_factor * regression::chisq1_upper_tail(contrib(i)));
  return out;
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string_view method_label(Method m) { return info(m).label; }
std::string_view method_id(Method m) { return info(m).id; }

const std::vector<Method>& all_methods() {
  static const std::vector<Method> v = [] {
    std::vector<Method> out;
    for (const auto& i : kMethods) out.push_back(i.method);
    return out;
  }();
  return v;
}

std::vector<Ratio> ratio_estimates(const dataset::SummaryStats& s) {
  check_stats(s);
  std::vector<Ratio> out;
  out.reserve(s.size());
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(s.size()); ++j) {
    if (s.beta_x(j) == 0.0)
      throw ValidationError("instrument '" + s.snp_ids[static_cast<std::size_t>(j)] + "' has zero exposure association");
    out.push_back({s.beta_y(j) / s.beta_x(j), s.se_y(j) / std::abs(s.beta_x(j))});
  }
  return out;
}

double weighted_median(const std::vector<double>& values, const std::vector<double>& weights) {
  const auto n = values.size();
  if (n == 0 || weights.size() != n) throw ValidationError("weighted_median: bad input sizes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw ValidationError("weighted_median: weights sum to zero");
  std::vector<double> v(n), cum(n);
  double run = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double wk = weights[order[k]] / total;
    v[k] = values[order[k]];
    run += wk;
    cum[k] = run - 0.5 * wk;
  }
  std::ptrdiff_t below = -1;
  for (std::size_t k = 0; k < n; ++k)
    if (cum[k] < 0.5) below = static_cast<std::ptrdiff_t>(k);
  if (below < 0) return v.front();
  if (static_cast<std::size_t>(below) == n - 1) return v.back();
  const auto b = static_cast<std::size_t>(below);
  return v[b] + (v[b + 1] - v[b]) * (0.5 - cum[b]) / (cum[b + 1] - cum[b]);
}

FreqEstimate ivw(const dataset::SummaryStats& s, bool penalized, bool robust, const Options& opts) {
  check_stats(s);
  const Eigen::MatrixXd design = s.beta_x;
  const Eigen::VectorXd w0 = outcome_weights(s);
  Eigen::VectorXd w = w0;
  if (penalized) {
    const auto base = wls(design, s.beta_y, w0);
    const Eigen::VectorXd contrib = w0.array() * (s.beta_y - base.coef(0) * s.beta_x).array().square();
    w = penalize(w0, contrib, opts);
  }
  const Method m = penalized ? (robust ? Method::penalized_robust_ivw : Method::penalized_ivw)
                             : (robust ? Method::robust_ivw : Method::ivw);
  LinearFit fit;
  if (robust) {
    std::vector<double> ratios, rw;
    for (Eigen::Index j = 0; j < s.beta_x.size(); ++j) {
      ratios.push_back(s.beta_y(j) / s.beta_x(j));
      rw.push_back(w(j) * s.beta_x(j) * s.beta_x(j));
    }
    Eigen::VectorXd start(1);
    start(0) = weighted_median(ratios, rw);
    fit = robust_fit(design, s.beta_y, w, start, opts);
  } else {
    fit = wls(design, s.beta_y, w);
  }
  return wald(m, fit.coef(0), std::sqrt(fit.cov(0, 0)));
}

FreqEstimate egger(const dataset::SummaryStats& s, bool penalized, bool robust, const Options& opts) {
  check_stats(s);
  const auto j = s.beta_x.size();
  if (j < 3) throw ValidationError("MR-Egger needs at least 3 instruments");
  // Orient so every exposure association is non-negative.
  Eigen::VectorXd bx = s.beta_x.cwiseAbs();
  Eigen::VectorXd by(j);
  for (Eigen::Index i = 0; i < j; ++i) by(i) = s.beta_x(i) < 0.0 ? -s.beta_y(i) : s.beta_y(i);
  const double mean_bx = bx.mean();
  const double sd_bx = std::sqrt((bx.array() - mean_bx).square().sum() / static_cast<double>(j - 1));
  if (!(sd_bx > 1e-12 * std::max(1.0, mean_bx))) throw ValidationError("MR-Egger: degenerate design (no variation in beta_x)");

  Eigen::MatrixXd design(j, 2);
  design.col(0).setOnes();
  design.col(1) = bx;
  const Eigen::VectorXd w0 = outcome_weights(s);
  Eigen::VectorXd w = w0;
  if (penalized) {
    const auto base = wls(design, by, w0);
    const Eigen::VectorXd contrib = w0.array() * (by - design * base.coef).array().square();
    w = penalize(w0, contrib, opts);
  }
  const Method m = penalized ? (robust ? Method::penalized_robust_egger : Method::penalized_egger)
                             : (robust ? Method::robust_egger : Method::egger);
  LinearFit fit;
  if (robust) {
    std::vector<double> ratios, rw;
    for (Eigen::Index i = 0; i < j; ++i) {
      ratios.push_back(by(i) / bx(i));
      rw.push_back(w(i) * bx(i) * bx(i));
    }
    Eigen::VectorXd start(2);
    start(1) = weighted_median(ratios, rw);
    std::vector<double> resid, ww;
    for (Eigen::Index i = 0; i < j; ++i) {
      resid.push_back(by(i) - start(1) * bx(i));
      ww.push_back(w(i));
    }
    start(0) = weighted_median(resid, ww);
    fit = robust_fit(design, by, w, start, opts);
  } else {
    fit = wls(design, by, w);
  }
  auto e = wald(m, fit.coef(1), std::sqrt(fit.cov(1, 1)));
  e.intercept = fit.coef(0);
  e.intercept_se = std::sqrt(fit.cov(0, 0));
  return e;
}

FreqEstimate median_mr(const dataset::SummaryStats& s, MedianVariant variant, const Options& opts) {
  const auto ratios = ratio_estimates(s);
  const auto j = ratios.size();
  std::vector<double> values(j), weights(j, 1.0);
  for (std::size_t i = 0; i < j; ++i) values[i] = ratios[i].estimate;
  if (variant != MedianVariant::simple)
    for (std::size_t i = 0; i < j; ++i) weights[i] = 1.0 / (ratios[i].se * ratios[i].se);
  if (variant == MedianVariant::penalized_weighted) {
    const double ivw_est = ivw(s, false, false, opts).estimate;
    for (std::size_t i = 0; i < j; ++i) {
      const double contrib = weights[i] * (values[i] - ivw_est) * (values[i] - ivw_est);
      weights[i] *= std::min(1.0, opts.penalty_factor * regression::chisq1_upper_tail(contrib));
    }
  }
  FreqEstimate e;
  e.method = variant == MedianVariant::simple     ? Method::simple_median
             : variant == MedianVariant::weighted ? Method::weighted_median
                                                  : Method::penalized_weighted_median;
  if (j < 3) e.warnings.push_back("median-based estimates with fewer than 3 instruments are unreliable");
  e.estimate = weighted_median(values, weights);

  // Parametric bootstrap with weights held at their original values. Noise is
  // applied to instruments oriented to positive beta_x so results do not
  // depend on allele coding.
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> boot(static_cast<std::size_t>(opts.bootstrap_resamples));
  std::vector<double> draw(j);
  for (auto& b : boot) {
    for (std::size_t i = 0; i < j; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const double sign = s.beta_x(k) < 0.0 ? -1.0 : 1.0;
      const double bx = sign * s.beta_x(k) + s.se_x(k) * normal(rng);
      const double by = sign * s.beta_y(k) + s.se_y(k) * normal(rng);
      draw[i] = by / bx;
    }
    b = weighted_median(draw, weights);
  }
  const double mean = std::accumulate(boot.begin(), boot.end(), 0.0) / static_cast<double>(boot.size());
  double ss = 0.0;
  for (double b : boot) ss += (b - mean) * (b - mean);
  e.se = std::sqrt(ss / static_cast<double>(boot.size() - 1));
  // Percentile interval, widened to contain the point estimate if needed.
  e.ci_low = std::min(percentile(boot, 0.025), e.estimate);
  e.ci_high = std::max(percentile(boot, 0.975), e.estimate);
  e.p_value = regression::normal_two_sided_p(e.estimate / e.se);
  return e;
}

std::vector<FreqEstimate> run_all(const dataset::SummaryStats& s, const Options& opts) {
  std::vector<FreqEstimate> out;
  auto attempt = [&](Method m, auto&& fn) {
    try {
      out.push_back(fn());
    } catch (const Error& e) {
      // Keep the row so the table always lists every method.
      FreqEstimate failed;
      failed.method = m;
      failed.estimate = failed.se = failed.ci_low = failed.ci_high = failed.p_value = std::nan("");
      failed.warnings.emplace_back(e.what());
      out.push_back(std::move(failed));
    }
  };
  attempt(Method::simple_median, [&] { return median_mr(s, MedianVariant::simple, opts); });
  attempt(Method::weighted_median, [&] { return median_mr(s, MedianVariant::weighted, opts); });
  attempt(Method::penalized_weighted_median, [&] { return median_mr(s, MedianVariant::penalized_weighted, opts); });
  attempt(Method::ivw, [&] { return ivw(s, false, false, opts); });
  attempt(Method::penalized_ivw, [&] { return ivw(s, true, false, opts); });
  attempt(Method::robust_ivw, [&] { return ivw(s, false, true, opts); });
  attempt(Method::penalized_robust_ivw, [&] { return ivw(s, true, true, opts); });
  attempt(Method::egger, [&] { return egger(s, false, false, opts); });
  attempt(Method::penalized_egger, [&] { return egger(s, true, false, opts); });
  attempt(Method::robust_egger, [&] { return egger(s, false, true, opts); });
  attempt(Method::penalized_robust_egger, [&] { return egger(s, true, true, opts); });
  return out;
}

std::string format_table(const std::vector<FreqEstimate>& rows) {
  std::ostringstream os;
  os << "method,estimate,se,ci_low,ci_high,p\n";
  for (const auto& r : rows)
    os << method_id(r.method) << ',' << io::format_double(r.estimate) << ',' << io::format_double(r.se) << ','
       << io::format_double(r.ci_low) << ',' << io::format_double(r.ci_high) << ',' << io::format_double(r.p_value)
       << '\n';
  return os.str();
}

}  // namespace pedmr::freq_mr
