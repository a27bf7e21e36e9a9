#include "pedmr/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "pedmr/error.hpp"
#include "pedmr/text_io.hpp"

namespace pedmr::posterior {

namespace {

std::string prob_label(double p) {
  const double pct = p * 100.0;
  const double rounded = std::round(pct);
  return "p" + (std::abs(pct - rounded) < 1e-9 ? std::to_string(static_cast<long long>(rounded)) : io::format_double(pct));
}

std::vector<std::size_t> thinned_indices(std::size_t total, std::size_t wanted) {
  std::vector<std::size_t> idx;
  if (wanted >= total) {
    for (std::size_t i = 0; i < total; ++i) idx.push_back(i);
    return idx;
  }
  for (std::size_t k = 0; k < wanted; ++k) idx.push_back(k * total / wanted);
  return idx;
}

Eigen::MatrixXd stacked(const std::vector<Eigen::MatrixXd>& chains) {
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.rows();
  Eigen::MatrixXd out(rows, chains.empty() ? 0 : chains.front().cols());
  Eigen::Index pos = 0;
  for (const auto& c : chains) {
    out.middleRows(pos, c.rows()) = c;
    pos += c.rows();
  }
  return out;
}

}  // namespace

Eigen::VectorXd percentiles(const Eigen::VectorXd& samples, const std::vector<double>& probs) {
  if (samples.size() == 0) throw ValidationError("percentiles of an empty sample");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw ValidationError("percentile probabilities must lie in [0, 1]");
    if (i > 0 && probs[i] < probs[i - 1]) throw ValidationError("percentile probabilities must be sorted");
  }
  std::vector<double> sorted(samples.data(), samples.data() + samples.size());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  Eigen::VectorXd out(static_cast<Eigen::Index>(probs.size()));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double h = (n - 1.0) * probs[i] + 1.0;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(static_cast<std::size_t>(std::ceil(h)), sorted.size());
    const double a = sorted[lo - 1], b = sorted[hi - 1];
    out(static_cast<Eigen::Index>(i)) = a + (h - std::floor(h)) * (b - a);
  }
  return out;
}

Eigen::VectorXd odds_ratio_transform(const Eigen::VectorXd& log_or) { return log_or.array().exp(); }

const PercentileRow& PercentileTable::row(std::string_view quantity) const {
  for (const auto& r : rows)
    if (r.quantity == quantity) return r;
  throw ValidationError("table has no row '" + std::string(quantity) + "'");
}

std::string PercentileTable::to_csv() const {
  std::ostringstream os;
  os << "quantity";
  for (double p : probs) os << ',' << prob_label(p);
  os << '\n';
  for (const auto& r : rows) {
    os << r.quantity;
    for (Eigen::Index i = 0; i < r.values.size(); ++i) os << ',' << io::format_double(r.values(i));
    os << '\n';
  }
  return os.str();
}

std::string PercentileTable::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["quantity"] = r.quantity;
    for (std::size_t i = 0; i < probs.size(); ++i) e[prob_label(probs[i])] = r.values(static_cast<Eigen::Index>(i));
    j.push_back(e);
  }
  return j.dump(2);
}

PercentileTable PercentileTable::parse_csv(std::string_view text) {
  const auto csv = io::parse_csv(text);
  if (csv.header.empty() || csv.header.front() != "quantity") throw ParseError("percentile table must start with a 'quantity' column");
  PercentileTable t;
  t.probs.clear();
  for (std::size_t c = 1; c < csv.header.size(); ++c) {
    const auto& h = csv.header[c];
    if (h.size() < 2 || h.front() != 'p') throw ParseError("bad percentile column '" + h + "'");
    t.probs.push_back(io::parse_double(std::string_view(h).substr(1), "percentile column") / 100.0);
  }
  for (const auto& row : csv.rows) {
    if (row.size() != csv.header.size()) throw ParseError("percentile table row has wrong field count");
    PercentileRow r;
    r.quantity = row[0];
    r.values.resize(static_cast<Eigen::Index>(row.size() - 1));
    for (std::size_t c = 1; c < row.size(); ++c) r.values(static_cast<Eigen::Index>(c - 1)) = io::parse_double(row[c], r.quantity);
    t.rows.push_back(std::move(r));
  }
  return t;
}

PercentileTable percentile_table(const sampler::PosteriorDraws& draws, const std::vector<std::string>& names,
                                 const std::vector<double>& probs) {
  PercentileTable t;
  t.probs = probs;
  for (const auto& name : names) t.rows.push_back({name, percentiles(draws.pooled(name), probs)});
  return t;
}

PercentileTable causal_effect_table(const sampler::PosteriorDraws& draws) {
  PercentileTable t;
  const Eigen::VectorXd log_or = percentiles(draws.pooled("theta"));
  t.rows.push_back({"causal_log_odds_ratio", log_or});
  t.rows.push_back({"causal_odds_ratio", odds_ratio_transform(log_or)});
  return t;
}

FamilyEffects family_effects(const sampler::PosteriorDraws& draws) {
  if (!draws.contains("gamma_x[1]") || !draws.contains("gamma_y[1]"))
    throw ValidationError("draws contain no family effects; fit a kinship_family or full model");
  const Eigen::VectorXd theta = draws.pooled("theta");
  FamilyEffects out;
  for (std::size_t f = 1;; ++f) {
    const std::string gx = "gamma_x[" + std::to_string(f) + "]";
    if (!draws.contains(gx)) break;
    const std::string label = "family " + std::to_string(f);
    const Eigen::VectorXd gamma_x = draws.pooled(gx);
    const Eigen::VectorXd gamma_y = draws.pooled("gamma_y[" + std::to_string(f) + "]");
    out.direct.rows.push_back({label, percentiles(gamma_y.array().exp().matrix())});
    out.indirect.rows.push_back({label, percentiles((gamma_x.array() * theta.array()).exp().matrix())});
  }
  return out;
}

std::string interval_csv(const sampler::PosteriorDraws& draws, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "param,low50,low90,median,high90,high50\n";
  for (const auto& name : names) {
    const auto q = percentiles(draws.pooled(name), {0.05, 0.25, 0.5, 0.75, 0.95});
    os << name << ',' << io::format_double(q(1)) << ',' << io::format_double(q(0)) << ',' << io::format_double(q(2)) << ','
       << io::format_double(q(4)) << ',' << io::format_double(q(3)) << '\n';
  }
  return os.str();
}

std::string ImputeSummary::to_csv(const std::vector<std::string>& ids) const {
  if (ids.size() != static_cast<std::size_t>(mean.size())) throw ValidationError("one id per imputed value is required");
  std::ostringstream os;
  os << "id,mean,sd\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    os << ids[i] << ',' << io::format_double(mean(static_cast<Eigen::Index>(i))) << ','
       << io::format_double(sd(static_cast<Eigen::Index>(i))) << '\n';
  return os.str();
}

ImputeSummary impute_summary(const sampler::PosteriorDraws& draws, const std::optional<Eigen::VectorXd>& truth) {
  std::vector<std::string> names;
  for (std::size_t k = 1; draws.contains("x_mis[" + std::to_string(k) + "]"); ++k) names.push_back("x_mis[" + std::to_string(k) + "]");
  if (names.empty()) throw ValidationError("draws contain no imputed exposures");
  ImputeSummary s;
  const auto n = static_cast<Eigen::Index>(names.size());
  s.mean.resize(n);
  s.sd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd v = draws.pooled(names[static_cast<std::size_t>(i)]);
    const double m = v.mean();
    s.mean(i) = m;
    s.sd(i) = v.size() > 1 ? std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
  }
  if (truth) {
    if (truth->size() != n) throw ValidationError("truth length does not match imputed values");
    const Eigen::ArrayXd a = s.mean.array() - s.mean.mean();
    const Eigen::ArrayXd b = truth->array() - truth->mean();
    const double denom = std::sqrt(a.square().sum() * b.square().sum());
    s.correlation = denom > 0.0 ? (a * b).sum() / denom : std::numeric_limits<double>::quiet_NaN();
    s.rmse = std::sqrt((s.mean - *truth).squaredNorm() / static_cast<double>(n));
  }
  return s;
}

std::string PpcReport::to_json() const {
  nlohmann::ordered_json j;
  j["replicates"] = replicates;
  j["statistics"] = nlohmann::ordered_json::array();
  nlohmann::ordered_json total;
  total["statistic"] = "case_count";
  total["observed"] = observed_cases;
  total["p_value"] = p_total;
  j["statistics"].push_back(total);
  for (std::size_t f = 0; f < families.size(); ++f) {
    nlohmann::ordered_json e;
    e["statistic"] = "case_count";
    e["family"] = families[f];
    e["observed"] = observed_family_cases(static_cast<Eigen::Index>(f));
    e["p_value"] = p_family(static_cast<Eigen::Index>(f));
    j["statistics"].push_back(e);
  }
  return j.dump(2);
}

PpcReport ppc(const sampler::PosteriorDraws& draws, const bayes::PosteriorModel& model, std::uint64_t seed,
              std::size_t replicates) {
  const auto& d = model.data();
  if (draws.names.size() != model.dim()) throw ValidationError("draws do not match the model layout");
  const Eigen::MatrixXd all = stacked(draws.draws);
  const auto idx = thinned_indices(static_cast<std::size_t>(all.rows()), replicates);
  if (idx.empty()) throw ValidationError("no draws for the predictive check");
  const auto m = static_cast<Eigen::Index>(d.m());

  PpcReport r;
  r.replicates = idx.size();
  r.families = d.family_labels;
  r.observed_family_cases = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < d.y.size(); ++i) {
    r.observed_cases += d.y(i);
    r.observed_family_cases(d.family[static_cast<std::size_t>(i)]) += d.y(i);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double exceed_total = 0.0;
  Eigen::VectorXd exceed_family = Eigen::VectorXd::Zero(m);
  for (auto s : idx) {
    const Eigen::VectorXd v = all.row(static_cast<Eigen::Index>(s)).transpose();
    const Eigen::VectorXd eta = model.outcome_linear_predictor(model.natural(v));
    double total = 0.0;
    Eigen::VectorXd fam = Eigen::VectorXd::Zero(m);
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-eta(i)));
      if (unif(rng) < p) {
        total += 1.0;
        fam(d.family[static_cast<std::size_t>(i)]) += 1.0;
      }
    }
    if (total >= r.observed_cases) exceed_total += 1.0;
    exceed_family.array() += (fam.array() >= r.observed_family_cases.array()).cast<double>();
  }
  const double reps = static_cast<double>(idx.size());
  r.p_total = exceed_total / reps;
  r.p_family = exceed_family / reps;
  return r;
}

std::string draws_csv(const std::vector<std::string>& names, const std::vector<Eigen::MatrixXd>& chains) {
  std::ostringstream os;
  os << "chain,iter";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (std::size_t c = 0; c < chains.size(); ++c) {
    if (static_cast<std::size_t>(chains[c].cols()) != names.size()) throw ValidationError("draws and names disagree in width");
    for (Eigen::Index i = 0; i < chains[c].rows(); ++i) {
      os << c + 1 << ',' << i + 1;
      for (Eigen::Index k = 0; k < chains[c].cols(); ++k) os << ',' << io::format_double(chains[c](i, k));
      os << '\n';
    }
  }
  return os.str();
}

DrawsTable parse_draws_csv(std::string_view text) {
  const auto csv = io::parse_csv(text);
  if (csv.header.size() < 2 || csv.header[0] != "chain" || csv.header[1] != "iter")
    throw ParseError("draws CSV must start with 'chain,iter'");
  DrawsTable t;
  t.names.assign(csv.header.begin() + 2, csv.header.end());
  std::vector<std::vector<std::vector<double>>> rows;
  for (const auto& row : csv.rows) {
    if (row.size() != csv.header.size()) throw ParseError("draws CSV row has wrong field count");
    const auto chain = io::parse_int(row[0], "chain");
    if (chain < 1) throw ParseError("chain numbers start at 1");
    if (static_cast<std::size_t>(chain) > rows.size()) rows.resize(static_cast<std::size_t>(chain));
    std::vector<double> values;
    for (std::size_t k = 2; k < row.size(); ++k) values.push_back(io::parse_double(row[k], t.names[k - 2]));
    rows[static_cast<std::size_t>(chain - 1)].push_back(std::move(values));
  }
  for (const auto& c : rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(t.names.size()));
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t k = 0; k < t.names.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c[i][k];
    t.chains.push_back(std::move(m));
  }
  return t;
}

}  // namespace pedmr::posterior
