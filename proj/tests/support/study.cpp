#include "study.hpp"

namespace pedmr::testing {

Study small_study(std::uint64_t seed) {
  StudySpec spec;
  spec.families = 3;
  spec.generations = 4;
  spec.children = 2;
  spec.per_family = 20;
  spec.j = 8;
  spec.n_true = 3;
  spec.n_pleio = 2;
  spec.missing_frac = 10.0 / 60.0;
  spec.gamma_x = Eigen::Vector3d(0.3, -0.2, 0.1);
  spec.gamma_y = Eigen::Vector3d(0.2, 0.1, -0.3);
  spec.alpha_mother = 0.2;
  spec.alpha_father = 0.1;
  return make_study(spec, seed);
}

}  // namespace pedmr::testing
