#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pedmr/dataset.hpp"

namespace pedmr::bayes {

/// Model elaborations, each adding to the previous one.
enum class Level {
  independence,    // individuals treated as unrelated
  kinship,         // + correlated outcome correction with relationship covariance
  kinship_family,  // + family effects on exposure and outcome
  full,            // + parental exposures as instruments
};

std::string_view level_name(Level level);
Level parse_level(std::string_view name);

struct ModelConfig {
  Level level = Level::full;
  double cauchy_sd = 2.5;
  double nu_local = 1.0;  // 1 gives the horseshoe
  double nu_global = 1.0;
  double pleio_frac_lower = 0.1;
  double pleio_frac_upper = 0.9;
  double kinship_scale = 2.0;
  /// Sample latent blocks through standardized coordinates: correction as
  /// L * correction_z, u relative to its conditional given the observed
  /// exposure, and x_mis as its exposure mean plus delta_x * u + sigma_x *
  /// x_mis_z, family effects in the eigenbasis of the standardized family
  /// design, and pleio_frac through its conditional quantile given
  /// r1_global. The posterior is the same; only the coordinates differ.
  bool noncentered = true;
  /// Accepted for compatibility with existing configs; has no effect.
  std::optional<double> betasimsd;

  void validate() const;
  static ModelConfig from_json(std::string_view json);
  std::string to_json() const;
};

enum class Transform { identity, log, interval };

struct Block {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  Transform transform = Transform::identity;
  double lower = 0.0;  // interval bounds, Transform::interval only
  double upper = 0.0;
};

/// Flat unconstrained parameter layout. Block order: theta, omega_y, delta_x,
/// sigma_x, sigma_alpha, pleio_frac, alpha, z, r1_local, r2_local, r1_global,
/// r2_global, u, x_mis, then gamma_x, gamma_y (family levels), alpha_mother,
/// alpha_father (full), correction (kinship levels). Non-centered layouts
/// name the latent blocks u_z, x_mis_z and correction_z, and the family
/// blocks gamma_x_q and gamma_y_q. pleio_frac becomes pleio_frac_u on (0, 1).
class Layout {
 public:
  static Layout create(const ModelConfig& cfg, std::size_t n, std::size_t j, std::size_t m, std::size_t n_mis);

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  const Block& block(std::string_view name) const;
  bool has(std::string_view name) const;
  /// One name per coordinate, `name` for scalars and `name[k]` (1-based) otherwise.
  std::vector<std::string> coordinate_names() const;
  std::string to_json() const;

  Level level() const noexcept { return level_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t j() const noexcept { return j_; }
  std::size_t m() const noexcept { return m_; }
  std::size_t n_mis() const noexcept { return n_mis_; }

 private:
  std::vector<Block> blocks_;
  std::size_t dim_ = 0;
  Level level_ = Level::independence;
  std::size_t n_ = 0, j_ = 0, m_ = 0, n_mis_ = 0;
};

/// Parameters on their natural scale. Blocks absent at the active level are
/// left empty (vectors) or zero (scalars). to_natural leaves non-centered
/// latent blocks as stored; PosteriorModel::natural resolves them.
struct ParamBlock {
  double theta = 0.0;
  double omega_y = 0.0;
  double delta_x = 0.0;
  double sigma_x = 1.0;
  double sigma_alpha = 1.0;
  double pleio_frac = 0.5;
  Eigen::VectorXd alpha;
  Eigen::VectorXd z_aux;
  Eigen::VectorXd r1_local;
  Eigen::VectorXd r2_local;
  double r1_global = 1.0;
  double r2_global = 1.0;
  Eigen::VectorXd u;
  Eigen::VectorXd x_mis;
  Eigen::VectorXd gamma_x;
  Eigen::VectorXd gamma_y;
  double alpha_mother = 0.0;
  double alpha_father = 0.0;
  Eigen::VectorXd correction;

  Eigen::VectorXd lambda() const;
  double tau() const;
  /// Pleiotropic effects, z * lambda * tau.
  Eigen::VectorXd beta() const;
};

/// Expected number of large pleiotropic effects, floor(J * pleio_frac).
double expected_pleiotropic(std::size_t j, double pleio_frac);
/// Scale of the half-normal on r1_global: 2*m0 / (sqrt(N) * (J - m0)).
double global_scale(std::size_t n, std::size_t j, double pleio_frac);

ParamBlock to_natural(const Layout& layout, const Eigen::VectorXd& v);
Eigen::VectorXd to_unconstrained(const Layout& layout, const ParamBlock& p);

/// Zero-mean multivariate normal with covariance L*L^T, where L is a
/// lower-triangular factor whose nonzero pattern splits into independent
/// blocks (families). Each block is solved separately.
class BlockCholesky {
 public:
  BlockCholesky() = default;
  explicit BlockCholesky(const Eigen::MatrixXd& lower);

  std::size_t size() const noexcept { return n_; }
  std::size_t block_count() const noexcept { return blocks_.size(); }
  /// Log density at x; when grad is non-null, adds d/dx into it.
  double log_density(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const;
  /// L * e and L^T * g.
  Eigen::VectorXd multiply(const Eigen::VectorXd& e) const;
  Eigen::VectorXd multiply_transpose(const Eigen::VectorXd& g) const;

 private:
  struct Part {
    std::vector<Eigen::Index> index;
    Eigen::MatrixXd lower;
    double log_det_half = 0.0;  // sum of log diag
  };
  std::vector<Part> blocks_;
  std::size_t n_ = 0;
};

/// Log posterior (up to the improper flat priors) on the unconstrained scale,
/// with its analytic gradient. The dataset must be standardized and
/// partitioned (observed exposures first).
class PosteriorModel {
 public:
  PosteriorModel(dataset::MRDataset data, const Eigen::MatrixXd& relationship_cholesky, ModelConfig cfg);

  const Layout& layout() const noexcept { return layout_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  const dataset::MRDataset& data() const noexcept { return data_; }
  std::size_t dim() const noexcept { return layout_.dim(); }

  double log_density(const Eigen::VectorXd& v) const;
  /// Returns the log density and writes its gradient into grad.
  double log_density_gradient(const Eigen::VectorXd& v, Eigen::VectorXd& grad) const;

  struct Terms {
    double prior = 0.0;
    double jacobian = 0.0;
    double exposure = 0.0;    // observed and missing exposure densities
    double outcome = 0.0;     // Bernoulli-logit
    double correction = 0.0;  // kinship-correlated correction density
    double total() const { return prior + jacobian + exposure + outcome + correction; }
  };
  Terms terms(const Eigen::VectorXd& v) const;

  /// Exposure with missing entries filled from x_mis.
  Eigen::VectorXd complete_exposure(const ParamBlock& p) const;
  /// Outcome linear predictor (logit scale) from natural parameters.
  Eigen::VectorXd outcome_linear_predictor(const ParamBlock& p) const;
  /// Natural-scale parameters, including resolved latent blocks.
  ParamBlock natural(const Eigen::VectorXd& v) const;
  /// Kinship-correlated correction on the natural scale (empty at the
  /// independence level).
  Eigen::VectorXd correction(const Eigen::VectorXd& v) const;

  /// Names and values of natural-scale quantities stored per draw: every
  /// layout block under its natural name, then beta, lambda, tau, m0,
  /// scale_global and indirect family effects.
  std::vector<std::string> quantity_names() const;
  Eigen::VectorXd quantities(const Eigen::VectorXd& v) const;

 private:
  double evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad, Terms* terms) const;
  Eigen::VectorXd exposure_mean_without_confounder(const ParamBlock& p) const;
  // Log of the global-scale prior with pleio_frac integrated out; optionally
  // writes r1g times its derivative.
  double global_scale_mixture(double r1g, double* r1g_dlog) const;
  // Conditional quantile of pleio_frac given r1_global.
  double pleio_from_uniform(double u, double r1g) const;

  dataset::MRDataset data_;
  ModelConfig cfg_;
  Layout layout_;
  BlockCholesky correction_prior_;
  Eigen::VectorXd x_obs_;
  Eigen::VectorXd y_;
  std::size_t n_obs_ = 0;
  struct PleioInterval {
    double left, width, log_weight, scale;
  };
  std::vector<PleioInterval> pleio_mix_;  // intervals of constant m0 > 0
  Eigen::MatrixXd family_rotation_;  // gamma = R * gamma_q; empty when unrotated
};

double log_posterior(const Eigen::VectorXd& v, const dataset::MRDataset& d, const Eigen::MatrixXd& relationship_cholesky,
                     const ModelConfig& cfg);
Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& v, const dataset::MRDataset& d,
                                   const Eigen::MatrixXd& relationship_cholesky, const ModelConfig& cfg);

/// Uniform(-2, 2) on the unconstrained scale, except x_mis = 0 and u,
/// correction ~ N(0, 0.1^2).
Eigen::VectorXd init_params(const ModelConfig& cfg, const dataset::MRDataset& d, std::uint64_t seed);
Eigen::VectorXd init_params(const Layout& layout, std::uint64_t seed);

}  // namespace pedmr::bayes
