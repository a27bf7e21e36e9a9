#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pedmr/bayes_model.hpp"
#include "pedmr/dataset.hpp"
#include "pedmr/diagnostics.hpp"
#include "pedmr/pedigree.hpp"
#include "pedmr/sampler.hpp"

namespace pedmr::fit {

/// Dataset ready for the posterior: standardized, observed exposures first,
/// with the relationship factor in the same row order.
struct Prepared {
  dataset::MRDataset data;
  std::vector<std::size_t> permutation;  // new row k is input row permutation[k]
  Eigen::MatrixXd relationship_cholesky;  // empty at the independence level
  double jitter = 0.0;
};

/// kinship may be null only at the independence level.
Prepared prepare(const dataset::MRDataset& d, const pedigree::KinshipMatrix* kinship, const bayes::ModelConfig& cfg);

struct BayesFit {
  Prepared prepared;
  std::shared_ptr<const bayes::PosteriorModel> model;
  sampler::PosteriorDraws draws;
};

sampler::Target make_target(const std::shared_ptr<const bayes::PosteriorModel>& model);

/// Random inits with finite log density, retrying up to 100 draws per chain.
std::vector<Eigen::VectorXd> initial_values(const bayes::PosteriorModel& model, std::size_t n_chains, std::uint64_t seed);

BayesFit fit_bayes(const dataset::MRDataset& d, const pedigree::KinshipMatrix* kinship, const bayes::ModelConfig& cfg,
                   const sampler::SamplerConfig& scfg);

}  // namespace pedmr::fit
