#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pedmr::sampler {

struct SamplerConfig {
  std::size_t n_chains = 4;
  std::size_t n_warmup = 1000;
  std::size_t n_draws = 1000;
  double target_accept = 0.8;
  std::size_t max_leapfrog = 1024;  // caps tree depth at log2(max_leapfrog)
  std::uint64_t seed = 1;
  std::size_t threads = 1;  // concurrent chains; results do not depend on it

  void validate() const;
  std::size_t max_depth() const;
};

/// Writes the gradient into grad and returns the log density. Must be safe to
/// call concurrently from several threads.
using LogDensityGradient = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct Target {
  std::size_t dim = 0;
  LogDensityGradient log_density_gradient;
  std::vector<std::string> names;  // one per unconstrained coordinate
  /// Optional derived quantities stored alongside each draw.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> quantities;
  std::vector<std::string> quantity_names;
};

struct ChainInfo {
  std::vector<double> log_density;
  std::vector<double> accept_stat;
  std::vector<double> energy;
  std::vector<int> tree_depth;
  std::vector<int> n_leapfrog;
  std::vector<bool> divergent;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  std::size_t warmup_divergences = 0;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<std::string> quantity_names;
  std::vector<Eigen::MatrixXd> draws;       // per chain, n_draws x dim (unconstrained)
  std::vector<Eigen::MatrixXd> quantities;  // per chain, n_draws x n_quantities
  std::vector<ChainInfo> info;

  std::size_t n_chains() const noexcept { return draws.size(); }
  std::size_t n_draws() const noexcept { return draws.empty() ? 0 : static_cast<std::size_t>(draws.front().rows()); }
  std::size_t divergences() const;

  /// Per-chain columns of a named value, looked up in quantities first and
  /// then in unconstrained draws.
  std::vector<Eigen::VectorXd> chains_of(const std::string& name) const;
  /// All chains of a named value concatenated.
  Eigen::VectorXd pooled(const std::string& name) const;
  bool contains(const std::string& name) const;
};

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;  // gradient of the log density at q
  double log_density = 0.0;
};

/// One leapfrog step of size eps with a diagonal inverse metric.
void leapfrog(const LogDensityGradient& f, PhasePoint& z, double eps, const Eigen::VectorXd& inv_metric);
/// Potential plus kinetic energy.
double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_metric);

PosteriorDraws hmc_run(const Target& target, const std::vector<Eigen::VectorXd>& inits, const SamplerConfig& cfg);

}  // namespace pedmr::sampler
