#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pedmr/pedigree.hpp"

namespace pedmr::dataset {

/// Affine maps applied by standardize(), kept so results can be reported on
/// natural scales.
struct Standardization {
  double x_mean = 0.0;
  double x_sd = 1.0;
  Eigen::VectorXd z_mean;
  Eigen::VectorXd z_sd;
  double mother_mean = 0.0;
  double mother_sd = 1.0;
  double father_mean = 0.0;
  double father_sd = 1.0;
};

/// Per-individual analysis data. Rows are aligned across every field.
struct MRDataset {
  std::vector<std::string> ids;
  std::vector<std::string> snp_ids;
  Eigen::MatrixXd z;                 // N x J instrument values
  Eigen::VectorXd x;                 // exposure; value ignored where !x_observed
  std::vector<bool> x_observed;
  Eigen::VectorXi y;                 // binary outcome
  std::vector<int> family;           // 0-based family index per row
  std::vector<std::string> family_labels;
  Eigen::VectorXd mother_x;          // parental exposures; 0 where unknown after standardize
  Eigen::VectorXd father_x;
  std::vector<bool> mother_known;
  std::vector<bool> father_known;
  Eigen::MatrixXd family_design;     // N x M, filled by standardize()
  std::optional<Standardization> scaling;

  std::size_t n() const noexcept { return ids.size(); }
  std::size_t j() const noexcept { return static_cast<std::size_t>(z.cols()); }
  std::size_t m() const noexcept { return family_labels.size(); }
  std::size_t n_obs() const;
  std::size_t n_mis() const noexcept { return n() - n_obs(); }
  /// True when every observed-X row precedes every missing-X row.
  bool is_partitioned() const;

  /// Throws ValidationError if any field disagrees in length or labels are invalid.
  void validate() const;
};

struct SnpInfo {
  std::string id;
  std::string chrom;
  long long pos = 0;
};

/// Reads the genotype CSV (`id,snp1,...`) and phenotype CSV (`id,X,Y`) and
/// aligns them to pedigree order. Individuals lacking either record are
/// dropped; records naming ids absent from the pedigree are errors.
MRDataset load_dataset(const pedigree::Pedigree& ped, std::string_view genotype_csv, std::string_view phenotype_csv);

std::vector<SnpInfo> parse_snp_info(std::string_view snp_csv);

MRDataset standardize(const MRDataset& d);

/// Builds the standardized one-hot family design for `d.family`.
Eigen::MatrixXd family_design(const std::vector<int>& family, std::size_t m);

struct Partitioned {
  MRDataset data;
  /// New row k holds original row permutation[k].
  std::vector<std::size_t> permutation;
};

Partitioned partition_missing(const MRDataset& d);

/// Applies a row permutation to every per-individual field.
MRDataset permute_rows(const MRDataset& d, const std::vector<std::size_t>& perm);

/// Keeps only the given instrument columns.
MRDataset select_columns(const MRDataset& d, const std::vector<std::size_t>& columns);

struct SelectionOptions {
  double p_threshold = 5e-3;
  double r2_threshold = 0.20;
  long long window_bp = 100000;
};

struct MarginalTest {
  double beta = 0.0;
  double se = 0.0;
  double p_value = 1.0;
};

/// Simple regression of exposure on one SNP over observed rows, two-sided t test.
MarginalTest marginal_association(const Eigen::Ref<const Eigen::VectorXd>& dosage, const Eigen::VectorXd& x,
                                  const std::vector<bool>& observed);

/// P-value filter then greedy LD pruning in ascending p order (ties by
/// index). Returns kept column indices in ascending order. Throws
/// EmptySelectionError when nothing passes.
std::vector<std::size_t> select_instruments(const Eigen::MatrixXd& dosages, const std::vector<long long>& positions,
                                            const Eigen::VectorXd& x, const std::vector<bool>& observed,
                                            const SelectionOptions& opts = {});

/// Squared Pearson correlation between two columns.
double squared_correlation(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

struct SummaryStats {
  std::vector<std::string> snp_ids;
  Eigen::VectorXd beta_x, se_x, p_x;
  Eigen::VectorXd beta_y, se_y, p_y;
  std::string exposure_leg;  // "lmm" or "ols"
  std::string outcome_leg;   // "logistic" or "linear"
  std::vector<std::string> dropped;  // instruments removed (separation, zero association)

  std::size_t size() const noexcept { return static_cast<std::size_t>(beta_x.size()); }
  void validate() const;
};

enum class OutcomeLeg { logistic, linear };

/// Per-instrument exposure and outcome associations. With a kinship matrix
/// the exposure leg uses the kinship mixed model, otherwise OLS.
SummaryStats summary_stats(const MRDataset& d, const pedigree::KinshipMatrix* kinship,
                           OutcomeLeg outcome_leg = OutcomeLeg::logistic, double kinship_scale = 2.0);

std::string format_summary_stats(const SummaryStats& s);
SummaryStats parse_summary_stats(std::string_view csv);

}  // namespace pedmr::dataset
