#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "pedmr/dataset.hpp"
#include "pedmr/pedigree.hpp"

namespace pedmr::simulate {

/// Generating values for the exposure and outcome equations.
struct TrueParams {
  double theta = 0.0;          // log-odds per unit of raw exposure
  Eigen::VectorXd alpha;       // instrument -> exposure, per SD of genotype
  Eigen::VectorXd beta;        // pleiotropic instrument -> outcome, per SD of genotype
  double delta_x = 0.0;
  double sigma_x = 1.0;
  double omega_y = 0.0;
  Eigen::VectorXd gamma_x;     // per family
  Eigen::VectorXd gamma_y;
  double alpha_mother = 0.0;
  double alpha_father = 0.0;
  double kinship_scale = 1.0;  // outcome random effect ~ MVN(0, kinship_scale * 2 * phi)

  void validate(std::size_t j, std::size_t m) const;
};

/// `generations` counts levels including the founding couple, so 1 yields a
/// founder-only family. Every non-final-generation child marries a founder
/// from outside and has `children_per_couple` children.
pedigree::Pedigree simulate_pedigree(int n_families, int generations, int children_per_couple, std::uint64_t seed);

/// Mendelian gene dropping; returns an N x J dosage matrix in pedigree order.
Eigen::MatrixXd drop_genotypes(const pedigree::Pedigree& ped, const Eigen::VectorXd& maf, std::uint64_t seed);

struct SimulatedData {
  dataset::MRDataset data;        // raw scale, masked exposure
  Eigen::VectorXd x_true;         // unmasked exposure, same rows as data
  Eigen::VectorXd u;
  Eigen::VectorXd correction;
  /// theta expressed per SD of the observed exposure, the scale the
  /// standardized analysis estimates.
  double theta_per_sd = 0.0;
};

/// Traits from the generative model. Instruments enter the equations after
/// sample standardization of `genotypes` (raw dosages expected).
SimulatedData simulate_traits(const pedigree::Pedigree& ped, const Eigen::MatrixXd& genotypes, const TrueParams& tp,
                              double missing_frac, std::uint64_t seed);

std::string truth_json(const TrueParams& tp, const SimulatedData& sim);

/// A complete synthetic study: pedigree shape, instrument panel and effects.
struct Scenario {
  int families = 12;
  int generations = 4;
  int children = 3;
  std::size_t per_family = 0;  // keep only the first k members of each family; 0 keeps all
  std::size_t j = 25;
  std::size_t n_true = 5;   // instruments 1..n_true carry alpha
  std::size_t n_pleio = 3;  // the next n_pleio carry beta
  double alpha = 0.4;
  double beta = 0.3;
  double theta = -0.5;
  double missing_frac = 0.3;
  double maf_low = 0.1;
  double maf_high = 0.5;
  double delta_x = 0.5;
  double sigma_x = 1.0;
  double omega_y = 0.0;
  Eigen::VectorXd gamma_x;  // empty means zero
  Eigen::VectorXd gamma_y;
  double alpha_mother = 0.0;
  double alpha_father = 0.0;
  double kinship_scale = 1.0;

  void validate() const;
  /// Reads any subset of the fields; absent keys keep their defaults.
  static Scenario from_json(std::string_view json);
  std::string to_json() const;
};

struct ScenarioData {
  pedigree::Pedigree ped;
  pedigree::KinshipMatrix kinship;
  TrueParams truth;
  SimulatedData sim;
  Eigen::VectorXd maf;
};

ScenarioData run_scenario(const Scenario& sc, std::uint64_t seed);

}  // namespace pedmr::simulate
