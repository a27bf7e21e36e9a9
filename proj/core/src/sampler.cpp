#include "pedmr/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

#include "pedmr/error.hpp"

namespace pedmr::sampler {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxDeltaH = 1000.0;

double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Step size adaptation by dual averaging.
class StepSizeAdapter {
 public:
  explicit StepSizeAdapter(double delta) : delta_(delta) {}
  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  void learn(double& eps, double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double c = static_cast<double>(counter_);
    const double eta = 1.0 / (c + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(c) / kGamma;
    const double x_eta = std::pow(c, -kKappa);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    eps = std::exp(x);
  }
  double final_step_size() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kKappa = 0.75;
  static constexpr double kT0 = 10.0;
  double delta_;
  double mu_ = 0.0;
  std::size_t counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

/// Diagonal metric estimation over expanding warmup windows.
class MetricAdapter {
 public:
  MetricAdapter(std::size_t n_warmup, std::size_t dim) : n_warmup_(n_warmup), mean_(Eigen::VectorXd::Zero(dim)), m2_(mean_) {
    if (n_warmup < 20) {
      init_buffer_ = n_warmup;
      term_buffer_ = 0;
      base_window_ = 0;
      enabled_ = false;
    } else if (n_warmup < init_buffer_ + term_buffer_ + base_window_) {
      init_buffer_ = static_cast<std::size_t>(0.15 * static_cast<double>(n_warmup));
      term_buffer_ = static_cast<std::size_t>(0.1 * static_cast<double>(n_warmup));
      base_window_ = n_warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  /// Adds q if inside a slow window; returns true when a window closes and
  /// inv_metric has been updated.
  bool learn(Eigen::VectorXd& inv_metric, const Eigen::VectorXd& q) {
    if (!enabled_) return false;
    if (in_window()) add(q);
    if (end_of_window()) {
      compute_next_window();
      const double n = static_cast<double>(count_);
      Eigen::VectorXd var = m2_ / (n - 1.0);
      inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
      count_ = 0;
      mean_.setZero();
      m2_.setZero();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_ && counter_ != n_warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != n_warmup_; }
  void compute_next_window() {
    if (next_window_ == n_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != n_warmup_ - term_buffer_ - 1) {
      const std::size_t boundary = next_window_ + 2 * window_size_;
      if (boundary >= n_warmup_ - term_buffer_) next_window_ = n_warmup_ - term_buffer_ - 1;
    }
  }
  void add(const Eigen::VectorXd& q) {
    ++count_;
    const Eigen::VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta.cwiseProduct(q - mean_);
  }

  std::size_t n_warmup_;
  std::size_t init_buffer_ = 75;
  std::size_t term_buffer_ = 50;
  std::size_t base_window_ = 25;
  std::size_t window_size_ = 0;
  std::size_t next_window_ = 0;
  std::size_t counter_ = 0;
  bool enabled_ = true;
  std::size_t count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

struct Transition {
  double accept_stat = 0.0;
  int depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
};

class Nuts {
 public:
  Nuts(const LogDensityGradient& f, std::size_t max_depth, std::mt19937_64& rng)
      : f_(f), max_depth_(max_depth), rng_(rng) {}

  double eps = 1.0;
  Eigen::VectorXd inv_metric;

  void sample_momentum(PhasePoint& z) {
    for (Eigen::Index i = 0; i < z.p.size(); ++i) z.p(i) = normal_(rng_) / std::sqrt(inv_metric(i));
  }

  void init_step_size(PhasePoint& z) {
    const PhasePoint start = z;
    sample_momentum(z);
    double h0 = hamiltonian(z, inv_metric);
    leapfrog(f_, z, eps, inv_metric);
    double h = hamiltonian(z, inv_metric);
    if (std::isnan(h)) h = kInf;
    double delta_h = h0 - h;
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    for (;;) {
      z = start;
      sample_momentum(z);
      h0 = hamiltonian(z, inv_metric);
      leapfrog(f_, z, eps, inv_metric);
      h = hamiltonian(z, inv_metric);
      if (std::isnan(h)) h = kInf;
      delta_h = h0 - h;
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && !(delta_h < std::log(0.8))) break;
      eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
      if (eps > 1e7) throw AdaptationError("step size search diverged: posterior may be improper");
      if (eps < std::numeric_limits<double>::min()) throw AdaptationError("step size collapsed to zero: no acceptable step found");
    }
    z = start;
  }

  Transition transition(PhasePoint& current) {
    PhasePoint z = current;
    sample_momentum(z);
    divergent_ = false;
    n_leapfrog_ = 0;
    sum_metro_prob_ = 0.0;

    PhasePoint z_fwd = z, z_bck = z, z_sample = z, z_propose = z;
    Eigen::VectorXd p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    Eigen::VectorXd ps = inv_metric.cwiseProduct(z.p);
    Eigen::VectorXd ps_fwd_fwd = ps, ps_fwd_bck = ps, ps_bck_fwd = ps, ps_bck_bck = ps;
    Eigen::VectorXd rho = z.p;
    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z, inv_metric);
    std::size_t depth = 0;
    const auto dim = z.q.size();

    while (depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(dim), rho_bck = Eigen::VectorXd::Zero(dim);
      bool valid = false;
      double lsw_subtree = -kInf;
      if (uniform_(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        ps_bck_fwd = ps_fwd_bck;
        z = z_fwd;
        valid = build_tree(depth, z, z_propose, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, h0, 1.0, lsw_subtree);
        z_fwd = z;
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        ps_fwd_bck = ps_bck_fwd;
        z = z_bck;
        valid = build_tree(depth, z, z_propose, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, h0, -1.0, lsw_subtree);
        z_bck = z;
      }
      if (!valid) break;
      ++depth;
      if (lsw_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_(rng_) < std::exp(lsw_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
      rho = rho_bck + rho_fwd;
      bool persist = criterion(ps_bck_bck, ps_fwd_fwd, rho);
      persist = persist && criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck);
      persist = persist && criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd);
      if (!persist) break;
    }
    current = z_sample;
    Transition t;
    t.depth = static_cast<int>(depth);
    t.n_leapfrog = n_leapfrog_;
    t.divergent = divergent_;
    t.accept_stat = n_leapfrog_ > 0 ? sum_metro_prob_ / static_cast<double>(n_leapfrog_) : 0.0;
    return t;
  }

 private:
  static bool criterion(const Eigen::VectorXd& ps_minus, const Eigen::VectorXd& ps_plus, const Eigen::VectorXd& rho) {
    return ps_plus.dot(rho) > 0.0 && ps_minus.dot(rho) > 0.0;
  }

  bool build_tree(std::size_t depth, PhasePoint& z, PhasePoint& z_propose, Eigen::VectorXd& ps_beg, Eigen::VectorXd& ps_end,
                  Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end, double h0, double sign,
                  double& log_sum_weight) {
    if (depth == 0) {
      leapfrog(f_, z, sign * eps, inv_metric);
      ++n_leapfrog_;
      double h = hamiltonian(z, inv_metric);
      if (std::isnan(h)) h = kInf;
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob_ += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z;
      ps_beg = inv_metric.cwiseProduct(z.p);
      ps_end = ps_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }
    const auto dim = z.q.size();
    Eigen::VectorXd p_init_end(dim), ps_init_end(dim), rho_init = Eigen::VectorXd::Zero(dim);
    double lsw_init = -kInf;
    if (!build_tree(depth - 1, z, z_propose, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, h0, sign, lsw_init))
      return false;

    PhasePoint z_propose_final = z;
    Eigen::VectorXd p_final_beg(dim), ps_final_beg(dim), rho_final = Eigen::VectorXd::Zero(dim);
    double lsw_final = -kInf;
    if (!build_tree(depth - 1, z, z_propose_final, ps_final_beg, ps_end, rho_final, p_final_beg, p_end, h0, sign, lsw_final))
      return false;

    const double lsw_subtree = log_sum_exp(lsw_init, lsw_final);
    log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
    if (lsw_final > lsw_subtree) {
      z_propose = z_propose_final;
    } else if (uniform_(rng_) < std::exp(lsw_final - lsw_subtree)) {
      z_propose = z_propose_final;
    }
    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(ps_beg, ps_end, rho_subtree);
    persist = persist && criterion(ps_beg, ps_final_beg, rho_init + p_final_beg);
    persist = persist && criterion(ps_init_end, ps_end, rho_final + p_init_end);
    return persist;
  }

  const LogDensityGradient& f_;
  std::size_t max_depth_;
  std::mt19937_64& rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  bool divergent_ = false;
  int n_leapfrog_ = 0;
  double sum_metro_prob_ = 0.0;
};

void run_chain(const Target& target, const Eigen::VectorXd& init, const SamplerConfig& cfg, std::size_t chain,
               Eigen::MatrixXd& draws, Eigen::MatrixXd& quantities, ChainInfo& info) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(chain)};
  std::mt19937_64 rng(seq);
  const auto dim = static_cast<Eigen::Index>(target.dim);

  PhasePoint z;
  z.q = init;
  z.p = Eigen::VectorXd::Zero(dim);
  z.grad = Eigen::VectorXd::Zero(dim);
  z.log_density = target.log_density_gradient(z.q, z.grad);
  if (!std::isfinite(z.log_density) || !z.grad.allFinite())
    throw ValidationError("chain " + std::to_string(chain + 1) + ": log density or gradient not finite at the initial value");

  Nuts nuts(target.log_density_gradient, cfg.max_depth(), rng);
  nuts.inv_metric = Eigen::VectorXd::Ones(dim);
  nuts.init_step_size(z);
  StepSizeAdapter step(cfg.target_accept);
  step.set_mu(std::log(10.0 * nuts.eps));
  step.restart();
  MetricAdapter metric(cfg.n_warmup, target.dim);

  std::size_t warmup_divergent = 0;
  for (std::size_t it = 0; it < cfg.n_warmup; ++it) {
    const auto t = nuts.transition(z);
    if (t.divergent) ++warmup_divergent;
    step.learn(nuts.eps, t.accept_stat);
    if (metric.learn(nuts.inv_metric, z.q)) {
      nuts.init_step_size(z);
      step.set_mu(std::log(10.0 * nuts.eps));
      step.restart();
    }
  }
  if (cfg.n_warmup > 0) {
    if (warmup_divergent == cfg.n_warmup)
      throw AdaptationError("chain " + std::to_string(chain + 1) + ": every warmup transition diverged");
    nuts.eps = step.final_step_size();
  }

  const auto n = static_cast<Eigen::Index>(cfg.n_draws);
  draws.resize(n, dim);
  const bool with_quantities = static_cast<bool>(target.quantities);
  if (with_quantities) quantities.resize(n, static_cast<Eigen::Index>(target.quantity_names.size()));
  info.step_size = nuts.eps;
  info.inv_metric = nuts.inv_metric;
  info.warmup_divergences = warmup_divergent;
  info.log_density.reserve(cfg.n_draws);
  for (Eigen::Index it = 0; it < n; ++it) {
    const auto t = nuts.transition(z);
    draws.row(it) = z.q.transpose();
    if (with_quantities) quantities.row(it) = target.quantities(z.q).transpose();
    info.log_density.push_back(z.log_density);
    info.accept_stat.push_back(t.accept_stat);
    info.energy.push_back(hamiltonian(z, nuts.inv_metric));
    info.tree_depth.push_back(t.depth);
    info.n_leapfrog.push_back(t.n_leapfrog);
    info.divergent.push_back(t.divergent);
  }
}

}  // namespace

void SamplerConfig::validate() const {
  if (n_chains == 0 || n_draws == 0 || max_leapfrog == 0) throw ValidationError("sampler counts must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ValidationError("target_accept must lie in (0, 1)");
}

std::size_t SamplerConfig::max_depth() const {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::bit_width(max_leapfrog) - 1));
}

void leapfrog(const LogDensityGradient& f, PhasePoint& z, double eps, const Eigen::VectorXd& inv_metric) {
  z.p += 0.5 * eps * z.grad;
  z.q += eps * inv_metric.cwiseProduct(z.p);
  z.log_density = f(z.q, z.grad);
  z.p += 0.5 * eps * z.grad;
}

double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_metric) {
  return -z.log_density + 0.5 * z.p.cwiseProduct(inv_metric).dot(z.p);
}

std::size_t PosteriorDraws::divergences() const {
  std::size_t count = 0;
  for (const auto& c : info) count += static_cast<std::size_t>(std::count(c.divergent.begin(), c.divergent.end(), true));
  return count;
}

bool PosteriorDraws::contains(const std::string& name) const {
  return std::find(quantity_names.begin(), quantity_names.end(), name) != quantity_names.end() ||
         std::find(names.begin(), names.end(), name) != names.end();
}

std::vector<Eigen::VectorXd> PosteriorDraws::chains_of(const std::string& name) const {
  std::vector<Eigen::VectorXd> out;
  auto qi = std::find(quantity_names.begin(), quantity_names.end(), name);
  if (qi != quantity_names.end() && quantities.size() == draws.size()) {
    const auto col = static_cast<Eigen::Index>(qi - quantity_names.begin());
    for (const auto& q : quantities) out.emplace_back(q.col(col));
    return out;
  }
  auto ni = std::find(names.begin(), names.end(), name);
  if (ni == names.end()) throw ValidationError("no draws named '" + name + "'");
  const auto col = static_cast<Eigen::Index>(ni - names.begin());
  for (const auto& d : draws) out.emplace_back(d.col(col));
  return out;
}

Eigen::VectorXd PosteriorDraws::pooled(const std::string& name) const {
  const auto chains = chains_of(name);
  Eigen::Index total = 0;
  for (const auto& c : chains) total += c.size();
  Eigen::VectorXd out(total);
  Eigen::Index pos = 0;
  for (const auto& c : chains) {
    out.segment(pos, c.size()) = c;
    pos += c.size();
  }
  return out;
}

PosteriorDraws hmc_run(const Target& target, const std::vector<Eigen::VectorXd>& inits, const SamplerConfig& cfg) {
  cfg.validate();
  if (!target.log_density_gradient) throw ValidationError("target has no log density");
  if (inits.size() != cfg.n_chains) throw ValidationError("need one initial value per chain");
  for (const auto& v : inits) {
    if (static_cast<std::size_t>(v.size()) != target.dim) throw ValidationError("initial value dimension does not match target");
    if (!v.allFinite()) throw ValidationError("initial value is not finite");
  }

  PosteriorDraws out;
  out.names = target.names;
  if (out.names.empty())
    for (std::size_t i = 0; i < target.dim; ++i) out.names.push_back("q[" + std::to_string(i + 1) + "]");
  out.quantity_names = target.quantities ? target.quantity_names : std::vector<std::string>{};
  out.draws.resize(cfg.n_chains);
  out.quantities.resize(target.quantities ? cfg.n_chains : 0);
  out.info.resize(cfg.n_chains);
  Eigen::MatrixXd unused;

  auto work = [&](std::size_t c) {
    run_chain(target, inits[c], cfg, c, out.draws[c], target.quantities ? out.quantities[c] : unused, out.info[c]);
  };

  const std::size_t workers = std::clamp<std::size_t>(cfg.threads, 1, cfg.n_chains);
  if (workers == 1) {
    for (std::size_t c = 0; c < cfg.n_chains; ++c) work(c);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < cfg.n_chains; c = next++) {
          try {
            work(c);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace pedmr::sampler
