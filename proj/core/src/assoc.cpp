#include "pedmr/assoc.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "pedmr/error.hpp"
#include "pedmr/regression.hpp"

namespace pedmr::assoc {

LmmEngine::LmmEngine(const Eigen::MatrixXd& relationship) {
  if (relationship.rows() != relationship.cols() || relationship.rows() == 0)
    throw ValidationError("relationship matrix must be square and non-empty");
  if (!relationship.isApprox(relationship.transpose(), 1e-10))
    throw ValidationError("relationship matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(relationship);
  if (es.info() != Eigen::Success) throw NotPositiveDefiniteError("eigendecomposition of relationship matrix failed");
  eigenvalues_ = es.eigenvalues();
  const double scale = std::max(1.0, eigenvalues_.cwiseAbs().maxCoeff());
  if (eigenvalues_.minCoeff() < -1e-8 * scale)
    throw NotPositiveDefiniteError("relationship matrix is not positive semi-definite");
  eigenvalues_ = eigenvalues_.cwiseMax(0.0);
  eigenvectors_ = es.eigenvectors();
}

LmmEngine::Rotated LmmEngine::rotate(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
  const auto n = eigenvalues_.size();
  if (y.size() != n || x.size() != n) throw ValidationError("lmm: data length does not match relationship matrix");
  Rotated r;
  Eigen::MatrixXd design(n, 2);
  design.col(0).setOnes();
  design.col(1) = x;
  r.y = eigenvectors_.transpose() * y;
  r.design = eigenvectors_.transpose() * design;
  return r;
}

double LmmEngine::profile(double lambda, const Rotated& r, LmmResult* out) const {
  const auto n = static_cast<double>(eigenvalues_.size());
  const Eigen::ArrayXd v = lambda * eigenvalues_.array() + 1.0;
  const Eigen::ArrayXd w = v.inverse();
  const Eigen::Matrix2d a = r.design.transpose() * (w.matrix().asDiagonal() * r.design);
  const Eigen::Vector2d b = r.design.transpose() * (w * r.y.array()).matrix();
  const Eigen::Matrix2d a_inv = a.inverse();
  const Eigen::Vector2d coef = a_inv * b;
  const Eigen::ArrayXd resid = r.y.array() - (r.design * coef).array();
  const double sigma_e2 = (w * resid.square()).sum() / n;
  const double ll = -0.5 * n * (std::log(2.0 * std::numbers::pi) + std::log(sigma_e2) + 1.0) - 0.5 * v.log().sum();
  if (out) {
    out->intercept = coef(0);
    out->beta = coef(1);
    out->sigma_e2 = sigma_e2;
    out->lambda = lambda;
    out->sigma_g2 = lambda * sigma_e2;
    out->se = std::sqrt(sigma_e2 * a_inv(1, 1));
    out->log_likelihood = ll;
    out->p_value = out->se > 0.0 ? regression::normal_two_sided_p(out->beta / out->se) : 0.0;
  }
  return ll;
}

double LmmEngine::profile_log_likelihood(double lambda, const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
  return profile(lambda, rotate(y, x), nullptr);
}

LmmResult LmmEngine::fit(const Eigen::VectorXd& y, const Eigen::VectorXd& x) const {
  if (x.size() == 0 || !((x.array() - x.mean()).abs().maxCoeff() > 0.0))
    throw ValidationError("lmm: covariate is constant");
  const auto r = rotate(y, x);
  auto ll_at = [&](double t) { return profile(std::exp(t), r, nullptr); };

  // Coarse grid first, so the golden-section bracket holds the global maximum
  // of the grid even if the profile is not unimodal.
  const double step = (kLogLambdaMax - kLogLambdaMin) / (kGridPoints - 1);
  int best = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kGridPoints; ++k) {
    const double ll = ll_at(kLogLambdaMin + step * k);
    if (ll > best_ll) {
      best_ll = ll;
      best = k;
    }
  }
  double lo = kLogLambdaMin + step * std::max(0, best - 1);
  double hi = kLogLambdaMin + step * std::min(kGridPoints - 1, best + 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = ll_at(c), fd = ll_at(d);
  while (hi - lo > kTolerance) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = ll_at(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = ll_at(d);
    }
  }
  double t_best = 0.5 * (lo + hi);
  if (ll_at(t_best) < best_ll) t_best = kLogLambdaMin + step * best;

  LmmResult res;
  profile(std::exp(t_best), r, &res);
  return res;
}

LmmResult lmm_fit(const Eigen::VectorXd& y, const Eigen::VectorXd& x, const Eigen::MatrixXd& relationship) {
  return LmmEngine(relationship).fit(y, x);
}

dataset::SummaryStats assoc_scan(const dataset::MRDataset& d, const Eigen::MatrixXd& relationship, bool use_lmm,
                                 dataset::OutcomeLeg outcome_leg) {
  d.validate();
  const auto n = static_cast<Eigen::Index>(d.n());
  if (use_lmm && (relationship.rows() != n || relationship.cols() != n))
    throw ValidationError("assoc_scan: relationship matrix does not match dataset");

  std::vector<Eigen::Index> obs;
  for (Eigen::Index i = 0; i < n; ++i)
    if (d.x_observed[static_cast<std::size_t>(i)]) obs.push_back(i);
  if (obs.size() < 3) throw ValidationError("assoc_scan: fewer than 3 observed exposures");
  const Eigen::VectorXd x_obs = d.x(obs);
  const Eigen::VectorXd y_all = d.y.cast<double>();

  std::optional<LmmEngine> exposure_engine, outcome_engine;
  if (use_lmm) {
    exposure_engine.emplace(relationship(obs, obs));
    if (outcome_leg == dataset::OutcomeLeg::linear) outcome_engine.emplace(relationship);
  }

  dataset::SummaryStats s;
  s.exposure_leg = use_lmm ? "lmm" : "ols";
  s.outcome_leg = outcome_leg == dataset::OutcomeLeg::logistic ? "logistic" : "linear";
  std::vector<double> bx, sx, px, by, sy, py;
  for (Eigen::Index j = 0; j < d.z.cols(); ++j) {
    const auto& snp = d.snp_ids[static_cast<std::size_t>(j)];
    const Eigen::VectorXd zj_obs = d.z.col(j)(obs);
    const Eigen::VectorXd zj = d.z.col(j);
    if (!((zj_obs.array() - zj_obs.mean()).abs().maxCoeff() > 0.0)) {
      s.dropped.push_back(snp + ": constant over observed exposures");
      continue;
    }
    regression::Coefficient ex;
    if (use_lmm) {
      auto r = exposure_engine->fit(x_obs, zj_obs);
      ex = {r.beta, r.se, r.p_value};
    } else {
      ex = regression::ols_slope(zj_obs, x_obs);
    }

    regression::Coefficient out;
    if (outcome_leg == dataset::OutcomeLeg::logistic) {
      auto fit = regression::logistic_irls(zj, y_all, 100, 1e-10);
      if (fit.separated) {
        s.dropped.push_back(snp + ": logistic fit did not converge (separation)");
        continue;
      }
      out = {fit.coef(1), fit.se(1), regression::normal_two_sided_p(fit.coef(1) / fit.se(1))};
    } else if (use_lmm) {
      auto r = outcome_engine->fit(y_all, zj);
      out = {r.beta, r.se, r.p_value};
    } else {
      out = regression::ols_slope(zj, y_all);
    }
    if (!(ex.se > 0.0) || !(out.se > 0.0)) {
      s.dropped.push_back(snp + ": zero standard error");
      continue;
    }
    s.snp_ids.push_back(snp);
    bx.push_back(ex.estimate);
    sx.push_back(ex.se);
    px.push_back(ex.p_value);
    by.push_back(out.estimate);
    sy.push_back(out.se);
    py.push_back(out.p_value);
  }
  auto to_vec = [](const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval(); };
  s.beta_x = to_vec(bx);
  s.se_x = to_vec(sx);
  s.p_x = to_vec(px);
  s.beta_y = to_vec(by);
  s.se_y = to_vec(sy);
  s.p_y = to_vec(py);
  return s;
}

}  // namespace pedmr::assoc
