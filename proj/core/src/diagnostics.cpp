#include "pedmr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "pedmr/error.hpp"

namespace pedmr::diagnostics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check(const std::vector<Eigen::VectorXd>& chains) {
  if (chains.size() < 2) throw ValidationError("diagnostics need at least two chains");
  for (const auto& c : chains) {
    if (c.size() < 4) throw ValidationError("diagnostics need at least four draws per chain");
    if (c.size() != chains.front().size()) throw ValidationError("chains differ in length");
  }
}

bool any_constant(const std::vector<Eigen::VectorXd>& chains) {
  return std::any_of(chains.begin(), chains.end(), [](const Eigen::VectorXd& c) {
    return !c.allFinite() || (c.array() == c(0)).all();
  });
}

std::vector<Eigen::VectorXd> split(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> out;
  const auto half = chains.front().size() / 2;
  for (const auto& c : chains) {
    out.emplace_back(c.head(half));
    out.emplace_back(c.tail(half));
  }
  return out;
}

/// Replaces values by normal scores of their pooled average ranks.
std::vector<Eigen::VectorXd> rank_normalize(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (Eigen::Index i = 0; i < chains[c].size(); ++i) all.emplace_back(chains[c](i), all.size());
  const std::size_t s = all.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a].first < all[b].first; });
  std::vector<double> rank(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t k = i;
    while (k + 1 < s && all[order[k + 1]].first == all[order[i]].first) ++k;
    const double avg = 0.5 * static_cast<double>(i + k) + 1.0;
    for (std::size_t t = i; t <= k; ++t) rank[order[t]] = avg;
    i = k + 1;
  }
  const boost::math::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> out;
  std::size_t pos = 0;
  for (const auto& c : chains) {
    Eigen::VectorXd z(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i)
      z(i) = boost::math::quantile(normal, (rank[pos++] - 0.375) / (static_cast<double>(s) + 0.25));
    out.push_back(std::move(z));
  }
  return out;
}

double rhat_basic(const std::vector<Eigen::VectorXd>& chains) {
  const auto m = static_cast<double>(chains.size());
  const auto n = static_cast<double>(chains.front().size());
  Eigen::VectorXd means(chains.size()), vars(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means(static_cast<Eigen::Index>(c)) = chains[c].mean();
    vars(static_cast<Eigen::Index>(c)) = (chains[c].array() - chains[c].mean()).square().sum() / (n - 1.0);
  }
  const double w = vars.mean();
  const double b_over_n = (means.array() - means.mean()).square().sum() / (m - 1.0);
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  return std::sqrt(var_plus / w);
}

Eigen::VectorXd autocovariance(const Eigen::VectorXd& x) {
  const auto n = x.size();
  Eigen::Index len = 1;
  while (len < 2 * n) len *= 2;
  std::vector<double> padded(static_cast<std::size_t>(len), 0.0);
  const double mean = x.mean();
  for (Eigen::Index i = 0; i < n; ++i) padded[static_cast<std::size_t>(i)] = x(i) - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> back;
  fft.inv(back, freq);
  Eigen::VectorXd acov(n);
  for (Eigen::Index i = 0; i < n; ++i) acov(i) = back[static_cast<std::size_t>(i)] / static_cast<double>(n);
  return acov;
}

std::vector<Eigen::VectorXd> indicator(const std::vector<Eigen::VectorXd>& chains, double cut) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& c : chains) out.emplace_back((c.array() <= cut).cast<double>());
  return out;
}

double pooled_quantile(const std::vector<Eigen::VectorXd>& chains, double p) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.data(), c.data() + c.size());
  std::sort(all.begin(), all.end());
  const double h = (static_cast<double>(all.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, all.size() - 1);
  return all[lo] + (h - static_cast<double>(lo)) * (all[hi] - all[lo]);
}

}  // namespace

double ess(const std::vector<Eigen::VectorXd>& chains) {
  check(chains);
  if (any_constant(chains)) return kNaN;
  const auto m = chains.size();
  const auto n = chains.front().size();
  std::vector<Eigen::VectorXd> acov;
  Eigen::VectorXd means(static_cast<Eigen::Index>(m)), vars(static_cast<Eigen::Index>(m));
  for (std::size_t c = 0; c < m; ++c) {
    acov.push_back(autocovariance(chains[c]));
    means(static_cast<Eigen::Index>(c)) = chains[c].mean();
    vars(static_cast<Eigen::Index>(c)) = acov.back()(0) * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  const double mean_var = vars.mean();
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  auto mean_acov = [&](Eigen::Index lag) {
    double s = 0.0;
    for (const auto& a : acov) s += a(lag);
    return s / static_cast<double>(m);
  };
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(n);
  double rho_even = 1.0;
  rho(0) = rho_even;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho(1) = rho_odd;
  Eigen::Index s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho(s + 1) = rho_even;
      rho(s + 2) = rho_odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (rho_even > 0.0 && max_s + 1 < n) rho(max_s + 1) = rho_even;
  // Initial monotone sequence.
  for (Eigen::Index k = 1; k <= max_s - 3; k += 2) {
    if (rho(k + 1) + rho(k + 2) > rho(k - 1) + rho(k)) {
      rho(k + 1) = 0.5 * (rho(k - 1) + rho(k));
      rho(k + 2) = rho(k + 1);
    }
  }
  const double total = static_cast<double>(m) * static_cast<double>(n);
  double tau = -1.0 + 2.0 * rho.head(std::min(max_s + 1, n)).sum() + (max_s + 1 < n ? rho(max_s + 1) : 0.0);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double split_rhat_raw(const std::vector<Eigen::VectorXd>& chains) {
  check(chains);
  if (any_constant(chains)) return kNaN;
  return rhat_basic(split(chains));
}

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  check(chains);
  if (any_constant(chains)) return kNaN;
  const auto s = split(chains);
  const double bulk = rhat_basic(rank_normalize(s));
  const double med = pooled_quantile(s, 0.5);
  std::vector<Eigen::VectorXd> folded;
  for (const auto& c : s) folded.emplace_back((c.array() - med).abs());
  const double tail = rhat_basic(rank_normalize(folded));
  return std::max(bulk, tail);
}

double ess_bulk(const std::vector<Eigen::VectorXd>& chains) {
  check(chains);
  if (any_constant(chains)) return kNaN;
  return ess(rank_normalize(split(chains)));
}

double ess_tail(const std::vector<Eigen::VectorXd>& chains) {
  check(chains);
  if (any_constant(chains)) return kNaN;
  const auto s = split(chains);
  const double lo = ess(indicator(s, pooled_quantile(s, 0.05)));
  const double hi = ess(indicator(s, pooled_quantile(s, 0.95)));
  return std::min(lo, hi);
}

double mcse_mean(const std::vector<Eigen::VectorXd>& chains) {
  const double e = ess(chains);
  double sum = 0.0, sum2 = 0.0, count = 0.0;
  for (const auto& c : chains) {
    sum += c.sum();
    sum2 += c.squaredNorm();
    count += static_cast<double>(c.size());
  }
  const double mean = sum / count;
  const double var = (sum2 - count * mean * mean) / (count - 1.0);
  return std::sqrt(var / e);
}

double Summary::max_rhat() const {
  double best = kNaN;
  for (const auto& p : params)
    if (!p.flagged && !(p.rhat <= best)) best = p.rhat;
  return best;
}

const ParamDiagnostic& Summary::at(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw ValidationError("no diagnostics for '" + name + "'");
}

std::string Summary::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json j;
  j["n_chains"] = n_chains;
  j["n_draws"] = n_draws;
  j["divergences"] = divergences;
  j["max_rhat"] = num(max_rhat());
  auto& arr = j["parameters"] = nlohmann::ordered_json::array();
  for (const auto& p : params) {
    nlohmann::ordered_json e;
    e["name"] = p.name;
    e["rhat"] = num(p.rhat);
    e["ess_bulk"] = num(p.ess_bulk);
    e["ess_tail"] = num(p.ess_tail);
    e["flagged"] = p.flagged;
    arr.push_back(e);
  }
  return j.dump(2);
}

Summary summarize(const sampler::PosteriorDraws& draws, const std::vector<std::string>& names) {
  Summary s;
  s.n_chains = draws.n_chains();
  s.n_draws = draws.n_draws();
  s.divergences = draws.divergences();
  const auto& list = !names.empty() ? names : (!draws.quantity_names.empty() ? draws.quantity_names : draws.names);
  for (const auto& name : list) {
    const auto chains = draws.chains_of(name);
    ParamDiagnostic p;
    p.name = name;
    p.rhat = split_rhat(chains);
    p.flagged = std::isnan(p.rhat);
    p.ess_bulk = p.flagged ? kNaN : ess_bulk(chains);
    p.ess_tail = p.flagged ? kNaN : ess_tail(chains);
    s.params.push_back(std::move(p));
  }
  return s;
}

}  // namespace pedmr::diagnostics
