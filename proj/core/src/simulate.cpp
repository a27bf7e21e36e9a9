#include "pedmr/simulate.hpp"

#include <algorithm>
#include <map>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "pedmr/error.hpp"

namespace pedmr::simulate {

void TrueParams::validate(std::size_t j, std::size_t m) const {
  if (!(sigma_x > 0.0)) throw ValidationError("sigma_x must be positive");
  if (static_cast<std::size_t>(alpha.size()) != j || static_cast<std::size_t>(beta.size()) != j)
    throw ValidationError("alpha and beta must have one entry per instrument");
  if (static_cast<std::size_t>(gamma_x.size()) != m || static_cast<std::size_t>(gamma_y.size()) != m)
    throw ValidationError("gamma_x and gamma_y must have one entry per family");
  if (kinship_scale < 0.0) throw ValidationError("kinship_scale must be non-negative");
}

pedigree::Pedigree simulate_pedigree(int n_families, int generations, int children_per_couple, std::uint64_t seed) {
  if (n_families < 1 || generations < 1 || children_per_couple < 1)
    throw ValidationError("simulate_pedigree: all counts must be at least 1");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<pedigree::Individual> out;

  for (int f = 1; f <= n_families; ++f) {
    const std::string fam = "FAM" + std::to_string(f);
    int counter = 0;
    auto make = [&](const std::string& father, const std::string& mother, pedigree::Sex sex) {
      pedigree::Individual ind;
      ind.family_id = fam;
      ind.id = fam + "_" + std::to_string(++counter);
      ind.father_id = father;
      ind.mother_id = mother;
      ind.sex = sex;
      out.push_back(ind);
      return ind.id;
    };
    struct Couple {
      std::string father, mother;
    };
    std::vector<Couple> couples{{make("", "", pedigree::Sex::male), make("", "", pedigree::Sex::female)}};
    for (int g = 2; g <= generations; ++g) {
      std::vector<Couple> next;
      for (const auto& c : couples) {
        for (int k = 0; k < children_per_couple; ++k) {
          const auto sex = coin(rng) ? pedigree::Sex::male : pedigree::Sex::female;
          const auto child = make(c.father, c.mother, sex);
          if (g == generations) continue;
          if (sex == pedigree::Sex::male) next.push_back({child, make("", "", pedigree::Sex::female)});
          else next.push_back({make("", "", pedigree::Sex::male), child});
        }
      }
      couples = std::move(next);
    }
  }
  return pedigree::Pedigree::create(std::move(out));
}

Eigen::MatrixXd drop_genotypes(const pedigree::Pedigree& ped, const Eigen::VectorXd& maf, std::uint64_t seed) {
  for (Eigen::Index j = 0; j < maf.size(); ++j)
    if (!(maf(j) >= 0.0 && maf(j) <= 1.0)) throw ValidationError("allele frequency outside [0,1]");
  const auto n = static_cast<Eigen::Index>(ped.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd dose(n, maf.size());
  // Two alleles per individual, transmitted in topological order.
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 2> alleles(n, 2);
  for (Eigen::Index j = 0; j < maf.size(); ++j) {
    for (auto i : ped.topological_order()) {
      const auto r = static_cast<Eigen::Index>(i);
      if (ped.father(i) == pedigree::kNoParent) {
        alleles(r, 0) = unif(rng) < maf(j);
        alleles(r, 1) = unif(rng) < maf(j);
      } else {
        alleles(r, 0) = alleles(ped.father(i), unif(rng) < 0.5 ? 0 : 1);
        alleles(r, 1) = alleles(ped.mother(i), unif(rng) < 0.5 ? 0 : 1);
      }
      dose(r, j) = alleles(r, 0) + alleles(r, 1);
    }
  }
  return dose;
}

SimulatedData simulate_traits(const pedigree::Pedigree& ped, const Eigen::MatrixXd& genotypes, const TrueParams& tp,
                              double missing_frac, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(ped.size());
  const auto m = ped.families().size();
  if (genotypes.rows() != n) throw ValidationError("genotype rows must match pedigree size");
  tp.validate(static_cast<std::size_t>(genotypes.cols()), m);
  if (!(missing_frac >= 0.0 && missing_frac < 1.0)) throw ValidationError("missing fraction must lie in [0,1)");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::MatrixXd zs = genotypes;
  for (Eigen::Index c = 0; c < zs.cols(); ++c) {
    const double mean = zs.col(c).mean();
    const double sd = std::sqrt((zs.col(c).array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(n - 1)));
    if (sd > 0.0) zs.col(c) = (zs.col(c).array() - mean) / sd;
    else zs.col(c).setZero();
  }

  SimulatedData sim;
  sim.u.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) sim.u(i) = normal(rng);

  const Eigen::VectorXd genetic_x = zs * tp.alpha;
  sim.x_true = Eigen::VectorXd::Zero(n);
  for (auto i : ped.topological_order()) {
    const auto r = static_cast<Eigen::Index>(i);
    double v = genetic_x(r) + tp.delta_x * sim.u(r) + tp.gamma_x(ped.family_index(i));
    if (ped.mother(i) != pedigree::kNoParent) v += tp.alpha_mother * sim.x_true(ped.mother(i));
    if (ped.father(i) != pedigree::kNoParent) v += tp.alpha_father * sim.x_true(ped.father(i));
    sim.x_true(r) = v + tp.sigma_x * normal(rng);
  }

  sim.correction = Eigen::VectorXd::Zero(n);
  if (tp.kinship_scale > 0.0) {
    const auto l = pedigree::relationship_cholesky(pedigree::kinship_matrix(ped), 2.0 * tp.kinship_scale);
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e(i) = normal(rng);
    sim.correction = l.triangularView<Eigen::Lower>() * e;
  }

  const Eigen::VectorXd pleio = zs * tp.beta;
  Eigen::VectorXi y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double eta = tp.omega_y + tp.theta * sim.x_true(i) + pleio(i) + sim.u(i) +
                       tp.gamma_y(ped.family_index(static_cast<std::size_t>(i))) + sim.correction(i);
    y(i) = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1 : 0;
  }

  // Missing completely at random, applied after trait generation.
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_mask = static_cast<std::size_t>(std::llround(missing_frac * static_cast<double>(n)));
  std::vector<bool> observed(static_cast<std::size_t>(n), true);
  for (std::size_t k = 0; k < n_mask; ++k) observed[order[k]] = false;

  auto& d = sim.data;
  d.z = genotypes;
  for (Eigen::Index c = 0; c < genotypes.cols(); ++c) d.snp_ids.push_back("snp" + std::to_string(c + 1));
  d.x = Eigen::VectorXd::Zero(n);
  d.x_observed = observed;
  d.y = y;
  d.family_labels = ped.families();
  d.mother_x = Eigen::VectorXd::Zero(n);
  d.father_x = Eigen::VectorXd::Zero(n);
  d.mother_known.assign(static_cast<std::size_t>(n), false);
  d.father_known.assign(static_cast<std::size_t>(n), false);
  double sum = 0.0, sumsq = 0.0;
  std::size_t n_obs = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    d.ids.push_back(ped[ui].id);
    d.family.push_back(ped.family_index(ui));
    if (observed[ui]) {
      d.x(i) = sim.x_true(i);
      sum += d.x(i);
      sumsq += d.x(i) * d.x(i);
      ++n_obs;
    }
    const int mo = ped.mother(ui), fa = ped.father(ui);
    if (mo != pedigree::kNoParent && observed[static_cast<std::size_t>(mo)]) {
      d.mother_x(i) = sim.x_true(mo);
      d.mother_known[ui] = true;
    }
    if (fa != pedigree::kNoParent && observed[static_cast<std::size_t>(fa)]) {
      d.father_x(i) = sim.x_true(fa);
      d.father_known[ui] = true;
    }
  }
  const double mean = n_obs ? sum / static_cast<double>(n_obs) : 0.0;
  const double var = n_obs > 1 ? (sumsq - static_cast<double>(n_obs) * mean * mean) / static_cast<double>(n_obs - 1) : 0.0;
  sim.theta_per_sd = tp.theta * std::sqrt(std::max(0.0, var));
  d.validate();
  return sim;
}

std::string truth_json(const TrueParams& tp, const SimulatedData& sim) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::ordered_json j;
  j["theta"] = tp.theta;
  j["theta_per_sd"] = sim.theta_per_sd;
  j["alpha"] = vec(tp.alpha);
  j["beta"] = vec(tp.beta);
  j["delta_x"] = tp.delta_x;
  j["sigma_x"] = tp.sigma_x;
  j["omega_y"] = tp.omega_y;
  j["gamma_x"] = vec(tp.gamma_x);
  j["gamma_y"] = vec(tp.gamma_y);
  j["alpha_mother"] = tp.alpha_mother;
  j["alpha_father"] = tp.alpha_father;
  j["kinship_scale"] = tp.kinship_scale;
  j["ids"] = sim.data.ids;
  j["x_true"] = vec(sim.x_true);
  std::vector<bool> masked;
  for (bool o : sim.data.x_observed) masked.push_back(!o);
  j["x_masked"] = masked;
  return j.dump(2) + "\n";
}

void Scenario::validate() const {
  if (families < 1 || generations < 1 || children < 1) throw ValidationError("scenario: pedigree counts must be at least 1");
  if (j < 1) throw ValidationError("scenario: need at least one instrument");
  if (n_true + n_pleio > j) throw ValidationError("scenario: n_true + n_pleio exceeds j");
  if (!(maf_low > 0.0 && maf_low <= maf_high && maf_high < 1.0)) throw ValidationError("scenario: need 0 < maf_low <= maf_high < 1");
  if (!(sigma_x > 0.0)) throw ValidationError("scenario: sigma_x must be positive");
  if (!(missing_frac >= 0.0 && missing_frac < 1.0)) throw ValidationError("scenario: missing_frac must lie in [0,1)");
  if (kinship_scale < 0.0) throw ValidationError("scenario: kinship_scale must be non-negative");
}

Scenario Scenario::from_json(std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scenario JSON: ") + e.what());
  }
  if (j.contains("scenario")) j = j["scenario"];
  if (!j.is_object()) throw ParseError("scenario JSON must be an object");
  Scenario s;
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  try {
    s.families = j.value("families", s.families);
    s.generations = j.value("generations", s.generations);
    s.children = j.value("children", s.children);
    s.per_family = j.value("per_family", s.per_family);
    s.j = j.value("j", s.j);
    s.n_true = j.value("n_true", s.n_true);
    s.n_pleio = j.value("n_pleio", s.n_pleio);
    s.alpha = j.value("alpha", s.alpha);
    s.beta = j.value("beta", s.beta);
    s.theta = j.value("theta", s.theta);
    s.missing_frac = j.value("missing_frac", s.missing_frac);
    s.maf_low = j.value("maf_low", s.maf_low);
    s.maf_high = j.value("maf_high", s.maf_high);
    s.delta_x = j.value("delta_x", s.delta_x);
    s.sigma_x = j.value("sigma_x", s.sigma_x);
    s.omega_y = j.value("omega_y", s.omega_y);
    if (j.contains("gamma_x")) s.gamma_x = vec(j["gamma_x"]);
    if (j.contains("gamma_y")) s.gamma_y = vec(j["gamma_y"]);
    s.alpha_mother = j.value("alpha_mother", s.alpha_mother);
    s.alpha_father = j.value("alpha_father", s.alpha_father);
    s.kinship_scale = j.value("kinship_scale", s.kinship_scale);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scenario JSON: ") + e.what());
  }
  s.validate();
  return s;
}

std::string Scenario::to_json() const {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::ordered_json o;
  o["families"] = families;
  o["generations"] = generations;
  o["children"] = children;
  o["per_family"] = per_family;
  o["j"] = j;
  o["n_true"] = n_true;
  o["n_pleio"] = n_pleio;
  o["alpha"] = alpha;
  o["beta"] = beta;
  o["theta"] = theta;
  o["missing_frac"] = missing_frac;
  o["maf_low"] = maf_low;
  o["maf_high"] = maf_high;
  o["delta_x"] = delta_x;
  o["sigma_x"] = sigma_x;
  o["omega_y"] = omega_y;
  o["gamma_x"] = vec(gamma_x);
  o["gamma_y"] = vec(gamma_y);
  o["alpha_mother"] = alpha_mother;
  o["alpha_father"] = alpha_father;
  o["kinship_scale"] = kinship_scale;
  return o.dump(2);
}

namespace {

pedigree::Pedigree truncate_families(const pedigree::Pedigree& ped, std::size_t per_family) {
  if (per_family == 0) return ped;
  std::map<std::string, std::size_t> seen;
  std::vector<pedigree::Individual> kept;
  for (const auto& ind : ped.individuals())
    if (seen[ind.family_id]++ < per_family) kept.push_back(ind);
  return pedigree::Pedigree::create(std::move(kept));
}

}  // namespace

ScenarioData run_scenario(const Scenario& sc, std::uint64_t seed) {
  sc.validate();
  ScenarioData s;
  s.ped = truncate_families(simulate_pedigree(sc.families, sc.generations, sc.children, seed), sc.per_family);
  s.kinship = pedigree::kinship_matrix(s.ped);

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> maf_dist(sc.maf_low, sc.maf_high);
  s.maf.resize(static_cast<Eigen::Index>(sc.j));
  for (auto& m : s.maf) m = maf_dist(rng);
  const auto geno = drop_genotypes(s.ped, s.maf, seed + 1);

  const auto j = static_cast<Eigen::Index>(sc.j);
  const auto m = static_cast<Eigen::Index>(s.ped.families().size());
  auto& tp = s.truth;
  tp.theta = sc.theta;
  tp.alpha = Eigen::VectorXd::Zero(j);
  tp.beta = Eigen::VectorXd::Zero(j);
  for (std::size_t k = 0; k < sc.n_true; ++k) tp.alpha(static_cast<Eigen::Index>(k)) = sc.alpha;
  for (std::size_t k = sc.n_true; k < sc.n_true + sc.n_pleio; ++k) tp.beta(static_cast<Eigen::Index>(k)) = sc.beta;
  tp.delta_x = sc.delta_x;
  tp.sigma_x = sc.sigma_x;
  tp.omega_y = sc.omega_y;
  if (sc.gamma_x.size() != 0 && sc.gamma_x.size() != m) throw ValidationError("scenario: gamma_x needs one entry per family");
  if (sc.gamma_y.size() != 0 && sc.gamma_y.size() != m) throw ValidationError("scenario: gamma_y needs one entry per family");
  tp.gamma_x = sc.gamma_x.size() == m ? sc.gamma_x : Eigen::VectorXd::Zero(m);
  tp.gamma_y = sc.gamma_y.size() == m ? sc.gamma_y : Eigen::VectorXd::Zero(m);
  tp.alpha_mother = sc.alpha_mother;
  tp.alpha_father = sc.alpha_father;
  tp.kinship_scale = sc.kinship_scale;
  s.sim = simulate_traits(s.ped, geno, tp, sc.missing_frac, seed + 2);
  return s;
}

}  // namespace pedmr::simulate
