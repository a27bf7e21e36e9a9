#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace pedmr::pedigree {

enum class Sex { male, female, unknown };

struct Individual {
  std::string family_id;
  std::string id;
  std::string father_id;  // empty for founders
  std::string mother_id;  // empty for founders
  Sex sex = Sex::unknown;
  std::optional<int> affected;

  bool is_founder() const noexcept { return father_id.empty(); }
};

inline constexpr int kNoParent = -1;

/// Validated pedigree. Individuals keep file order; a topological order
/// (parents before children) is computed once at construction.
class Pedigree {
 public:
  Pedigree() = default;

  /// Validates and builds. Throws ValidationError on duplicate ids, dangling
  /// or half-specified parents, parents outside the child's family, and
  /// ancestry cycles.
  static Pedigree create(std::vector<Individual> individuals);

  std::size_t size() const noexcept { return individuals_.size(); }
  const std::vector<Individual>& individuals() const noexcept { return individuals_; }
  const Individual& operator[](std::size_t i) const { return individuals_[i]; }

  std::optional<std::size_t> index_of(std::string_view id) const;
  int father(std::size_t i) const { return father_[i]; }
  int mother(std::size_t i) const { return mother_[i]; }

  const std::vector<std::size_t>& topological_order() const noexcept { return topo_; }

  /// Distinct family ids in order of first appearance.
  const std::vector<std::string>& families() const noexcept { return families_; }
  /// Index into families() for individual i.
  int family_index(std::size_t i) const { return family_of_[i]; }

  std::size_t founder_count() const;

 private:
  std::vector<Individual> individuals_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<int> father_;
  std::vector<int> mother_;
  std::vector<std::size_t> topo_;
  std::vector<std::string> families_;
  std::vector<int> family_of_;
};

/// Parses whitespace-separated text with a header naming the columns
/// `family id father mother sex affected` (any order). Parent token "0"
/// means missing; sex accepts 1/2/0 or M/F/U; affected accepts 0/1/NA.
Pedigree parse_pedigree(std::string_view text);

std::string format_pedigree(const Pedigree& ped);

/// Kinship coefficients over an ordered set of individuals.
struct KinshipMatrix {
  std::vector<std::string> order;
  Eigen::MatrixXd phi;

  std::size_t size() const noexcept { return order.size(); }

  /// Rows/columns restricted to and reordered by `ids`.
  KinshipMatrix subset(const std::vector<std::string>& ids) const;
  /// Reordered so that new position k holds old position perm[k].
  KinshipMatrix permuted(const std::vector<std::size_t>& perm) const;
};

KinshipMatrix kinship_matrix(const Pedigree& ped);

/// Lower-triangular L with L*L^T = scale*phi + jitter*I. Jitter is tried in
/// the sequence 0, 1e-10, 1e-8, 1e-6; NotPositiveDefiniteError past that.
Eigen::MatrixXd relationship_cholesky(const KinshipMatrix& k, double scale = 2.0);

/// Same as above but also reports the jitter that was needed.
Eigen::MatrixXd relationship_cholesky(const KinshipMatrix& k, double scale, double& jitter_used);

}  // namespace pedmr::pedigree
