#include "pedmr/fit.hpp"

#include <cmath>

#include "pedmr/error.hpp"

namespace pedmr::fit {

Prepared prepare(const dataset::MRDataset& d, const pedigree::KinshipMatrix* kinship, const bayes::ModelConfig& cfg) {
  cfg.validate();
  Prepared out;
  auto part = dataset::partition_missing(d.scaling ? d : dataset::standardize(d));
  out.data = std::move(part.data);
  out.permutation = std::move(part.permutation);
  if (cfg.level != bayes::Level::independence) {
    if (!kinship) throw ValidationError("kinship levels need a kinship matrix");
    const auto k = kinship->subset(out.data.ids);
    out.relationship_cholesky = pedigree::relationship_cholesky(k, cfg.kinship_scale, out.jitter);
  }
  return out;
}

sampler::Target make_target(const std::shared_ptr<const bayes::PosteriorModel>& model) {
  sampler::Target t;
  t.dim = model->dim();
  t.log_density_gradient = [model](const Eigen::VectorXd& v, Eigen::VectorXd& g) { return model->log_density_gradient(v, g); };
  t.names = model->layout().coordinate_names();
  t.quantities = [model](const Eigen::VectorXd& v) { return model->quantities(v); };
  t.quantity_names = model->quantity_names();
  return t;
}

std::vector<Eigen::VectorXd> initial_values(const bayes::PosteriorModel& model, std::size_t n_chains, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> inits;
  Eigen::VectorXd grad;
  for (std::size_t c = 0; c < n_chains; ++c) {
    bool ok = false;
    for (std::uint64_t attempt = 0; attempt < 100 && !ok; ++attempt) {
      auto v = bayes::init_params(model.layout(), seed * 1000003ULL + c * 1009ULL + attempt);
      const double lp = model.log_density_gradient(v, grad);
      if (std::isfinite(lp) && grad.allFinite()) {
        inits.push_back(std::move(v));
        ok = true;
      }
    }
    if (!ok) throw ValidationError("no initial value with finite log density after 100 attempts");
  }
  return inits;
}

BayesFit fit_bayes(const dataset::MRDataset& d, const pedigree::KinshipMatrix* kinship, const bayes::ModelConfig& cfg,
                   const sampler::SamplerConfig& scfg) {
  BayesFit out;
  out.prepared = prepare(d, kinship, cfg);
  out.model = std::make_shared<const bayes::PosteriorModel>(out.prepared.data, out.prepared.relationship_cholesky, cfg);
  const auto inits = initial_values(*out.model, scfg.n_chains, scfg.seed);
  out.draws = sampler::hmc_run(make_target(out.model), inits, scfg);
  return out;
}

}  // namespace pedmr::fit
