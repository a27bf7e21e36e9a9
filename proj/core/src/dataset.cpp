#include "pedmr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "pedmr/assoc.hpp"
#include "pedmr/error.hpp"
#include "pedmr/regression.hpp"
#include "pedmr/text_io.hpp"

namespace pedmr::dataset {

std::size_t MRDataset::n_obs() const {
  return static_cast<std::size_t>(std::count(x_observed.begin(), x_observed.end(), true));
}

bool MRDataset::is_partitioned() const {
  bool seen_missing = false;
  for (bool o : x_observed) {
    if (!o) seen_missing = true;
    else if (seen_missing) return false;
  }
  return true;
}

void MRDataset::validate() const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  auto check = [&](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("dataset field length mismatch: ") + what);
  };
  check(z.rows() == n, "z");
  check(static_cast<std::size_t>(z.cols()) == snp_ids.size(), "snp_ids");
  check(x.size() == n, "x");
  check(x_observed.size() == ids.size(), "x_observed");
  check(y.size() == n, "y");
  check(family.size() == ids.size(), "family");
  check(mother_x.size() == n && father_x.size() == n, "parental exposure");
  check(mother_known.size() == ids.size() && father_known.size() == ids.size(), "parental masks");
  if (z.cols() < 1) throw ValidationError("dataset needs at least one instrument");
  for (Eigen::Index i = 0; i < n; ++i)
    if (y(i) != 0 && y(i) != 1) throw ValidationError("outcome must be 0/1 for '" + ids[static_cast<std::size_t>(i)] + "'");
  std::vector<int> seen(family_labels.size(), 0);
  for (int f : family) {
    if (f < 0 || static_cast<std::size_t>(f) >= family_labels.size()) throw ValidationError("family index out of range");
    seen[static_cast<std::size_t>(f)] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw ValidationError("family label with no members");
  if (family_design.size() != 0) check(family_design.rows() == n && static_cast<std::size_t>(family_design.cols()) == family_labels.size(), "family_design");
}

MRDataset load_dataset(const pedigree::Pedigree& ped, std::string_view genotype_csv, std::string_view phenotype_csv) {
  const auto geno = io::parse_csv(genotype_csv);
  const auto pheno = io::parse_csv(phenotype_csv);
  if (geno.header.size() < 2 || geno.header.front() != "id")
    throw ParseError("genotype CSV must start with column 'id' followed by SNP ids");
  const auto p_id = pheno.column("id"), p_x = pheno.column("X"), p_y = pheno.column("Y");

  std::unordered_map<std::string, std::size_t> geno_row, pheno_row;
  for (std::size_t r = 0; r < geno.rows.size(); ++r) {
    const auto& id = geno.rows[r][0];
    if (!ped.index_of(id)) throw ValidationError("genotype file references unknown id '" + id + "'");
    if (!geno_row.emplace(id, r).second) throw ValidationError("duplicate genotype row for '" + id + "'");
  }
  for (std::size_t r = 0; r < pheno.rows.size(); ++r) {
    const auto& id = pheno.rows[r][p_id];
    if (!ped.index_of(id)) throw ValidationError("phenotype file references unknown id '" + id + "'");
    if (!pheno_row.emplace(id, r).second) throw ValidationError("duplicate phenotype row for '" + id + "'");
  }

  std::vector<std::size_t> members;  // pedigree indices with both records
  for (std::size_t i = 0; i < ped.size(); ++i) {
    const auto& id = ped[i].id;
    if (geno_row.count(id) && pheno_row.count(id)) members.push_back(i);
  }
  if (members.empty()) throw ValidationError("no individual has both genotype and phenotype records");

  MRDataset d;
  const auto n = static_cast<Eigen::Index>(members.size());
  const auto j = static_cast<Eigen::Index>(geno.header.size() - 1);
  d.snp_ids.assign(geno.header.begin() + 1, geno.header.end());
  d.z.resize(n, j);
  d.x = Eigen::VectorXd::Zero(n);
  d.x_observed.assign(members.size(), false);
  d.y.resize(n);
  d.mother_x = Eigen::VectorXd::Zero(n);
  d.father_x = Eigen::VectorXd::Zero(n);
  d.mother_known.assign(members.size(), false);
  d.father_known.assign(members.size(), false);

  std::unordered_map<int, int> fam_remap;
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto pi = members[static_cast<std::size_t>(r)];
    const auto& id = ped[pi].id;
    d.ids.push_back(id);
    row_of.emplace(id, r);
    const auto& g = geno.rows[geno_row.at(id)];
    for (Eigen::Index c = 0; c < j; ++c) {
      const auto& tok = g[static_cast<std::size_t>(c) + 1];
      double v = io::parse_double(tok, "genotype of '" + id + "'");
      if (v != 0.0 && v != 1.0 && v != 2.0)
        throw ValidationError("dosage outside {0,1,2} for '" + id + "' at " + d.snp_ids[static_cast<std::size_t>(c)]);
      d.z(r, c) = v;
    }
    const auto& p = pheno.rows[pheno_row.at(id)];
    if (p[p_x] != "NA" && !p[p_x].empty()) {
      d.x(r) = io::parse_double(p[p_x], "exposure of '" + id + "'");
      d.x_observed[static_cast<std::size_t>(r)] = true;
    }
    const auto yv = io::parse_int(p[p_y], "outcome of '" + id + "'");
    if (yv != 0 && yv != 1) throw ValidationError("outcome outside {0,1} for '" + id + "'");
    d.y(r) = static_cast<int>(yv);
    const int fam = ped.family_index(pi);
    auto [it, inserted] = fam_remap.emplace(fam, static_cast<int>(d.family_labels.size()));
    if (inserted) d.family_labels.push_back(ped.families()[static_cast<std::size_t>(fam)]);
    d.family.push_back(it->second);
  }

  for (Eigen::Index r = 0; r < n; ++r) {
    const auto pi = members[static_cast<std::size_t>(r)];
    auto fill = [&](int parent, Eigen::VectorXd& values, std::vector<bool>& known) {
      if (parent == pedigree::kNoParent) return;
      auto it = row_of.find(ped[static_cast<std::size_t>(parent)].id);
      if (it == row_of.end() || !d.x_observed[static_cast<std::size_t>(it->second)]) return;
      values(r) = d.x(it->second);
      known[static_cast<std::size_t>(r)] = true;
    };
    fill(ped.mother(pi), d.mother_x, d.mother_known);
    fill(ped.father(pi), d.father_x, d.father_known);
  }
  d.validate();
  return d;
}

std::vector<SnpInfo> parse_snp_info(std::string_view snp_csv) {
  const auto t = io::parse_csv(snp_csv);
  const auto c_snp = t.column("snp"), c_chr = t.column("chrom"), c_pos = t.column("pos");
  std::vector<SnpInfo> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) out.push_back({r[c_snp], r[c_chr], io::parse_int(r[c_pos], "snp position")});
  return out;
}

namespace {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t count = 0;
};

template <typename Mask>
Moments masked_moments(const Eigen::VectorXd& v, const Mask& keep) {
  Moments m;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (keep(i)) {
      sum += v(i);
      ++m.count;
    }
  if (m.count == 0) return m;
  m.mean = sum / static_cast<double>(m.count);
  double ss = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (keep(i)) ss += (v(i) - m.mean) * (v(i) - m.mean);
  m.sd = m.count > 1 ? std::sqrt(ss / static_cast<double>(m.count - 1)) : 0.0;
  return m;
}

}  // namespace

Eigen::MatrixXd family_design(const std::vector<int>& family, std::size_t m) {
  const auto n = static_cast<Eigen::Index>(family.size());
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < n; ++i) f(i, family[static_cast<std::size_t>(i)]) = 1.0;
  for (Eigen::Index c = 0; c < f.cols(); ++c) {
    Eigen::VectorXd col = f.col(c);
    auto mo = masked_moments(col, [](Eigen::Index) { return true; });
    // A single family gives a constant indicator, which carries no information.
    if (!(mo.sd > 0.0)) f.col(c).setZero();
    else f.col(c) = (col.array() - mo.mean) / mo.sd;
  }
  return f;
}

MRDataset standardize(const MRDataset& in) {
  in.validate();
  MRDataset d = in;
  Standardization s;

  auto xm = masked_moments(d.x, [&](Eigen::Index i) { return d.x_observed[static_cast<std::size_t>(i)]; });
  if (!(xm.sd > 0.0)) throw DegenerateColumnError("X");
  for (Eigen::Index i = 0; i < d.x.size(); ++i)
    d.x(i) = d.x_observed[static_cast<std::size_t>(i)] ? (d.x(i) - xm.mean) / xm.sd : 0.0;
  s.x_mean = xm.mean;
  s.x_sd = xm.sd;

  s.z_mean.resize(d.z.cols());
  s.z_sd.resize(d.z.cols());
  for (Eigen::Index c = 0; c < d.z.cols(); ++c) {
    Eigen::VectorXd col = d.z.col(c);
    auto zm = masked_moments(col, [](Eigen::Index) { return true; });
    if (!(zm.sd > 0.0)) throw DegenerateColumnError(d.snp_ids[static_cast<std::size_t>(c)]);
    d.z.col(c) = (col.array() - zm.mean) / zm.sd;
    s.z_mean(c) = zm.mean;
    s.z_sd(c) = zm.sd;
  }

  // Parental columns: unknown entries become 0, the post-standardization mean.
  auto parental = [](Eigen::VectorXd& v, const std::vector<bool>& known, double& mean_out, double& sd_out) {
    auto pm = masked_moments(v, [&](Eigen::Index i) { return known[static_cast<std::size_t>(i)]; });
    const bool usable = pm.count > 1 && pm.sd > 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v(i) = (usable && known[static_cast<std::size_t>(i)]) ? (v(i) - pm.mean) / pm.sd : 0.0;
    mean_out = usable ? pm.mean : 0.0;
    sd_out = usable ? pm.sd : 1.0;
  };
  parental(d.mother_x, d.mother_known, s.mother_mean, s.mother_sd);
  parental(d.father_x, d.father_known, s.father_mean, s.father_sd);

  d.family_design = family_design(d.family, d.m());

  if (in.scaling) {
    // Compose so natural-scale reporting refers to the original data.
    const auto& o = *in.scaling;
    s.x_mean = o.x_mean + o.x_sd * s.x_mean;
    s.x_sd = o.x_sd * s.x_sd;
    s.z_mean = o.z_mean.array() + o.z_sd.array() * s.z_mean.array();
    s.z_sd = o.z_sd.array() * s.z_sd.array();
    s.mother_mean = o.mother_mean + o.mother_sd * s.mother_mean;
    s.mother_sd = o.mother_sd * s.mother_sd;
    s.father_mean = o.father_mean + o.father_sd * s.father_mean;
    s.father_sd = o.father_sd * s.father_sd;
  }
  d.scaling = s;
  return d;
}

MRDataset permute_rows(const MRDataset& d, const std::vector<std::size_t>& perm) {
  if (perm.size() != d.n()) throw ValidationError("permutation size mismatch");
  std::vector<Eigen::Index> idx(perm.begin(), perm.end());
  MRDataset out = d;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const auto p = perm[k];
    out.ids[k] = d.ids[p];
    out.x_observed[k] = d.x_observed[p];
    out.family[k] = d.family[p];
    out.mother_known[k] = d.mother_known[p];
    out.father_known[k] = d.father_known[p];
  }
  out.z = d.z(idx, Eigen::all);
  out.x = d.x(idx);
  out.y = d.y(idx);
  out.mother_x = d.mother_x(idx);
  out.father_x = d.father_x(idx);
  if (d.family_design.size() != 0) out.family_design = d.family_design(idx, Eigen::all);
  return out;
}

Partitioned partition_missing(const MRDataset& d) {
  std::vector<std::size_t> perm(d.n());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_partition(perm.begin(), perm.end(), [&](std::size_t i) { return static_cast<bool>(d.x_observed[i]); });
  return {permute_rows(d, perm), perm};
}

MRDataset select_columns(const MRDataset& d, const std::vector<std::size_t>& columns) {
  MRDataset out = d;
  std::vector<Eigen::Index> idx(columns.begin(), columns.end());
  out.z = d.z(Eigen::all, idx);
  out.snp_ids.clear();
  for (auto c : columns) out.snp_ids.push_back(d.snp_ids.at(c));
  if (d.scaling) {
    out.scaling->z_mean = d.scaling->z_mean(idx);
    out.scaling->z_sd = d.scaling->z_sd(idx);
  }
  return out;
}

MarginalTest marginal_association(const Eigen::Ref<const Eigen::VectorXd>& dosage, const Eigen::VectorXd& x,
                                  const std::vector<bool>& observed) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < observed.size(); ++i)
    if (observed[i]) rows.push_back(static_cast<Eigen::Index>(i));
  if (rows.size() < 3) throw ValidationError("marginal association needs at least 3 observed exposures");
  Eigen::VectorXd g = dosage(rows);
  Eigen::VectorXd xv = x(rows);
  const double mean = g.mean();
  if (!((g.array() - mean).abs().maxCoeff() > 0.0)) return {};
  auto c = regression::ols_slope(g, xv);
  return {c.estimate, c.se, c.p_value};
}

double squared_correlation(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double saa = da.square().sum(), sbb = db.square().sum();
  if (!(saa > 0.0) || !(sbb > 0.0)) return 0.0;
  const double sab = (da * db).sum();
  return sab * sab / (saa * sbb);
}

std::vector<std::size_t> select_instruments(const Eigen::MatrixXd& dosages, const std::vector<long long>& positions,
                                            const Eigen::VectorXd& x, const std::vector<bool>& observed,
                                            const SelectionOptions& opts) {
  if (!(opts.p_threshold > 0.0 && opts.p_threshold < 1.0)) throw ValidationError("p threshold must lie in (0,1)");
  if (!(opts.r2_threshold > 0.0 && opts.r2_threshold < 1.0)) throw ValidationError("r2 threshold must lie in (0,1)");
  const auto k = static_cast<std::size_t>(dosages.cols());
  if (!positions.empty() && positions.size() != k) throw ValidationError("positions length must match SNP count");
  if (x.size() != dosages.rows() || observed.size() != static_cast<std::size_t>(dosages.rows()))
    throw ValidationError("exposure length must match genotype rows");

  std::vector<double> pval(k, 1.0);
  std::vector<std::size_t> candidates;
  for (std::size_t c = 0; c < k; ++c) {
    pval[c] = marginal_association(dosages.col(static_cast<Eigen::Index>(c)), x, observed).p_value;
    if (pval[c] < opts.p_threshold) candidates.push_back(c);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) { return pval[a] < pval[b]; });

  std::vector<std::size_t> kept;
  for (auto c : candidates) {
    bool ok = true;
    for (auto s : kept) {
      const bool near = positions.empty() || std::llabs(positions[c] - positions[s]) <= opts.window_bp;
      if (near && squared_correlation(dosages.col(static_cast<Eigen::Index>(c)), dosages.col(static_cast<Eigen::Index>(s))) >=
                      opts.r2_threshold) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(c);
  }
  if (kept.empty()) throw EmptySelectionError("no SNP passed the association threshold");
  std::sort(kept.begin(), kept.end());
  return kept;
}

void SummaryStats::validate() const {
  const auto j = beta_x.size();
  if (se_x.size() != j || beta_y.size() != j || se_y.size() != j || p_x.size() != j || p_y.size() != j ||
      snp_ids.size() != static_cast<std::size_t>(j))
    throw ValidationError("summary statistics columns differ in length");
  if ((se_x.array() <= 0.0).any() || (se_y.array() <= 0.0).any())
    throw ValidationError("summary statistics standard errors must be positive");
}

SummaryStats summary_stats(const MRDataset& d, const pedigree::KinshipMatrix* kinship, OutcomeLeg outcome_leg,
                           double kinship_scale) {
  if (kinship) {
    auto k = kinship->subset(d.ids);
    return assoc::assoc_scan(d, kinship_scale * k.phi, true, outcome_leg);
  }
  return assoc::assoc_scan(d, Eigen::MatrixXd(), false, outcome_leg);
}

std::string format_summary_stats(const SummaryStats& s) {
  std::ostringstream os;
  os << "snp,beta_x,se_x,beta_y,se_y,p_x,p_y\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    os << s.snp_ids[i] << ',' << io::format_double(s.beta_x(k)) << ',' << io::format_double(s.se_x(k)) << ','
       << io::format_double(s.beta_y(k)) << ',' << io::format_double(s.se_y(k)) << ',' << io::format_double(s.p_x(k))
       << ',' << io::format_double(s.p_y(k)) << '\n';
  }
  return os.str();
}

SummaryStats parse_summary_stats(std::string_view csv) {
  const auto t = io::parse_csv(csv);
  const auto c_snp = t.column("snp"), c_bx = t.column("beta_x"), c_sx = t.column("se_x");
  const auto c_by = t.column("beta_y"), c_sy = t.column("se_y");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  SummaryStats s;
  s.beta_x.resize(n);
  s.se_x.resize(n);
  s.beta_y.resize(n);
  s.se_y.resize(n);
  s.p_x = Eigen::VectorXd::Constant(n, std::nan(""));
  s.p_y = Eigen::VectorXd::Constant(n, std::nan(""));
  const auto px = std::find(t.header.begin(), t.header.end(), "p_x");
  const auto py = std::find(t.header.begin(), t.header.end(), "p_y");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<std::size_t>(i)];
    s.snp_ids.push_back(r[c_snp]);
    s.beta_x(i) = io::parse_double(r[c_bx], "beta_x");
    s.se_x(i) = io::parse_double(r[c_sx], "se_x");
    s.beta_y(i) = io::parse_double(r[c_by], "beta_y");
    s.se_y(i) = io::parse_double(r[c_sy], "se_y");
    if (px != t.header.end()) s.p_x(i) = io::parse_double(r[static_cast<std::size_t>(px - t.header.begin())], "p_x");
    if (py != t.header.end()) s.p_y(i) = io::parse_double(r[static_cast<std::size_t>(py - t.header.begin())], "p_y");
  }
  s.validate();
  return s;
}

}  // namespace pedmr::dataset
