#include "pedmr/pedigree.hpp"

#include <algorithm>
#include <deque>
#include <sstream>

#include "pedmr/error.hpp"
#include "pedmr/text_io.hpp"

namespace pedmr::pedigree {

Pedigree Pedigree::create(std::vector<Individual> individuals) {
  Pedigree p;
  const std::size_t n = individuals.size();
  p.individuals_ = std::move(individuals);
  p.index_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ind = p.individuals_[i];
    if (ind.id.empty()) throw ValidationError("individual with empty id");
    if (ind.family_id.empty()) throw ValidationError("individual '" + ind.id + "' has empty family id");
    if (!p.index_.emplace(ind.id, i).second) throw ValidationError("duplicate individual id: " + ind.id);
  }

  p.father_.assign(n, kNoParent);
  p.mother_.assign(n, kNoParent);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ind = p.individuals_[i];
    if (ind.father_id.empty() != ind.mother_id.empty())
      throw ValidationError("individual '" + ind.id + "' has exactly one parent specified");
    if (ind.father_id.empty()) continue;
    auto lookup = [&](const std::string& pid) {
      auto it = p.index_.find(pid);
      if (it == p.index_.end())
        throw ValidationError("individual '" + ind.id + "' references unknown parent '" + pid + "'");
      if (p.individuals_[it->second].family_id != ind.family_id)
        throw ValidationError("parent '" + pid + "' of '" + ind.id + "' belongs to a different family");
      return static_cast<int>(it->second);
    };
    p.father_[i] = lookup(ind.father_id);
    p.mother_[i] = lookup(ind.mother_id);
    if (p.father_[i] == static_cast<int>(i) || p.mother_[i] == static_cast<int>(i))
      throw ValidationError("cycle in ancestry: '" + ind.id + "' is its own parent");
  }

  // Kahn's algorithm, seeded in file order so the result is deterministic.
  std::vector<int> pending(n, 0);
  std::vector<std::vector<std::size_t>> children(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (p.father_[i] == kNoParent) continue;
    pending[i] = (p.father_[i] == p.mother_[i]) ? 1 : 2;
    children[static_cast<std::size_t>(p.father_[i])].push_back(i);
    if (p.mother_[i] != p.father_[i]) children[static_cast<std::size_t>(p.mother_[i])].push_back(i);
  }
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (pending[i] == 0) ready.push_back(i);
  p.topo_.reserve(n);
  while (!ready.empty()) {
    auto i = ready.front();
    ready.pop_front();
    p.topo_.push_back(i);
    for (auto c : children[i])
      if (--pending[c] == 0) ready.push_back(c);
  }
  if (p.topo_.size() != n) {
    for (std::size_t i = 0; i < n; ++i)
      if (pending[i] > 0) throw ValidationError("cycle in ancestry involving '" + p.individuals_[i].id + "'");
  }

  p.family_of_.resize(n);
  std::unordered_map<std::string, int> fam_index;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = fam_index.emplace(p.individuals_[i].family_id, static_cast<int>(p.families_.size()));
    if (inserted) p.families_.push_back(p.individuals_[i].family_id);
    p.family_of_[i] = it->second;
  }
  return p;
}

std::optional<std::size_t> Pedigree::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Pedigree::founder_count() const {
  return static_cast<std::size_t>(std::count(father_.begin(), father_.end(), kNoParent));
}

namespace {

Sex parse_sex(const std::string& tok, std::size_t line) {
  if (tok == "1" || tok == "M" || tok == "m" || tok == "male") return Sex::male;
  if (tok == "2" || tok == "F" || tok == "f" || tok == "female") return Sex::female;
  if (tok == "0" || tok == "U" || tok == "u" || tok == "NA" || tok == "unknown") return Sex::unknown;
  throw ParseError("pedigree line " + std::to_string(line) + ": invalid sex '" + tok + "'");
}

std::optional<int> parse_affected(const std::string& tok, std::size_t line) {
  if (tok == "NA" || tok == "-9") return std::nullopt;
  if (tok == "0") return 0;
  if (tok == "1") return 1;
  throw ParseError("pedigree line " + std::to_string(line) + ": invalid affected status '" + tok + "'");
}

}  // namespace

Pedigree parse_pedigree(std::string_view text) {
  auto lines = io::data_lines(text);
  if (lines.empty()) throw ParseError("empty pedigree file");
  auto header = io::split_whitespace(lines.front());
  auto col = [&](std::string_view name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("pedigree header lacks column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_fam = col("family"), c_id = col("id"), c_fa = col("father"), c_mo = col("mother");
  const auto c_sex = col("sex"), c_aff = col("affected");

  std::vector<Individual> inds;
  inds.reserve(lines.size() - 1);
  for (std::size_t l = 1; l < lines.size(); ++l) {
    auto f = io::split_whitespace(lines[l]);
    if (f.size() != header.size())
      throw ParseError("pedigree line " + std::to_string(l + 1) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(f.size()));
    Individual ind;
    ind.family_id = f[c_fam];
    ind.id = f[c_id];
    ind.father_id = f[c_fa] == "0" ? std::string() : f[c_fa];
    ind.mother_id = f[c_mo] == "0" ? std::string() : f[c_mo];
    ind.sex = parse_sex(f[c_sex], l + 1);
    ind.affected = parse_affected(f[c_aff], l + 1);
    inds.push_back(std::move(ind));
  }
  return Pedigree::create(std::move(inds));
}

std::string format_pedigree(const Pedigree& ped) {
  std::ostringstream os;
  os << "family\tid\tfather\tmother\tsex\taffected\n";
  for (const auto& ind : ped.individuals()) {
    os << ind.family_id << '\t' << ind.id << '\t' << (ind.father_id.empty() ? "0" : ind.father_id) << '\t'
       << (ind.mother_id.empty() ? "0" : ind.mother_id) << '\t'
       << (ind.sex == Sex::male ? "1" : ind.sex == Sex::female ? "2" : "0") << '\t'
       << (ind.affected ? std::to_string(*ind.affected) : std::string("NA")) << '\n';
  }
  return os.str();
}

KinshipMatrix kinship_matrix(const Pedigree& ped) {
  const std::size_t n = ped.size();
  KinshipMatrix k;
  k.order.reserve(n);
  for (const auto& ind : ped.individuals()) k.order.push_back(ind.id);
  k.phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));

  // Visiting in topological order guarantees that when i is processed, no
  // already-processed j descends from i, so the parent recursion applies.
  const auto& topo = ped.topological_order();
  auto& phi = k.phi;
  for (std::size_t t = 0; t < topo.size(); ++t) {
    const auto i = static_cast<Eigen::Index>(topo[t]);
    const int fa = ped.father(topo[t]);
    const int mo = ped.mother(topo[t]);
    if (fa == kNoParent) {
      phi(i, i) = 0.5;
      continue;
    }
    phi(i, i) = 0.5 * (1.0 + phi(fa, mo));
    const int fam = ped.family_index(topo[t]);
    for (std::size_t s = 0; s < t; ++s) {
      if (ped.family_index(topo[s]) != fam) continue;
      const auto j = static_cast<Eigen::Index>(topo[s]);
      const double v = 0.5 * (phi(fa, j) + phi(mo, j));
      phi(i, j) = v;
      phi(j, i) = v;
    }
  }
  return k;
}

KinshipMatrix KinshipMatrix::subset(const std::vector<std::string>& ids) const {
  std::unordered_map<std::string, Eigen::Index> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos.emplace(order[i], static_cast<Eigen::Index>(i));
  std::vector<Eigen::Index> idx;
  idx.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = pos.find(id);
    if (it == pos.end()) throw ValidationError("kinship matrix has no individual '" + id + "'");
    idx.push_back(it->second);
  }
  KinshipMatrix out;
  out.order = ids;
  out.phi = phi(idx, idx);
  return out;
}

KinshipMatrix KinshipMatrix::permuted(const std::vector<std::size_t>& perm) const {
  if (perm.size() != order.size()) throw ValidationError("permutation size mismatch");
  std::vector<Eigen::Index> idx(perm.begin(), perm.end());
  KinshipMatrix out;
  out.order.reserve(perm.size());
  for (auto p : perm) out.order.push_back(order[p]);
  out.phi = phi(idx, idx);
  return out;
}

Eigen::MatrixXd relationship_cholesky(const KinshipMatrix& k, double scale, double& jitter_used) {
  if (!(scale > 0.0)) throw ValidationError("relationship scale must be positive");
  const Eigen::MatrixXd a = scale * k.phi;
  const auto n = a.rows();
  for (double jitter : {0.0, 1e-10, 1e-8, 1e-6}) {
    Eigen::LLT<Eigen::MatrixXd> llt(a + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd l = llt.matrixL();
    if (!l.diagonal().allFinite() || (l.diagonal().array() <= 0.0).any()) continue;
    jitter_used = jitter;
    return l;
  }
  throw NotPositiveDefiniteError("relationship matrix is not positive definite even with jitter 1e-6");
}

Eigen::MatrixXd relationship_cholesky(const KinshipMatrix& k, double scale) {
  double jitter = 0.0;
  return relationship_cholesky(k, scale, jitter);
}

}  // namespace pedmr::pedigree
