#include "pedmr/cli.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pedmr/assoc.hpp"
#include "pedmr/bayes_model.hpp"
#include "pedmr/dataset.hpp"
#include "pedmr/diagnostics.hpp"
#include "pedmr/error.hpp"
#include "pedmr/fit.hpp"
#include "pedmr/freq_mr.hpp"
#include "pedmr/pedigree.hpp"
#include "pedmr/posterior.hpp"
#include "pedmr/sampler.hpp"
#include "pedmr/simulate.hpp"
#include "pedmr/text_io.hpp"

#ifndef PEDMR_VERSION
#define PEDMR_VERSION "unknown"
#endif

namespace pedmr::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string format = "csv";
  std::optional<std::size_t> chains;
  std::optional<std::size_t> threads;
  std::string level;
};

struct DataArgs {
  std::string ped, geno, pheno, instruments;
};

struct Args {
  Common common;
  DataArgs data;
  // select-instruments
  std::string snps;
  std::optional<double> p_threshold, r2_threshold;
  std::optional<long long> window_bp;
  // assoc
  bool no_lmm = false;
  std::string outcome_leg = "logistic";
  // mr-freq / summarize / ppc
  std::string stats, draws, fit_dir;
  std::vector<std::string> params;
  // mr-bayes
  std::optional<std::size_t> warmup, n_draws;
  std::string truth;
};

// 64-bit FNV-1a, used only to fingerprint config bytes in the manifest.
std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

class Run {
 public:
  Run(std::string command, const Args& a) : command_(std::move(command)), args_(a) {
    if (!a.common.config_path.empty()) {
      config_text_ = io::read_file(a.common.config_path);
      try {
        config_ = nlohmann::json::parse(config_text_);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
      }
      if (!config_.is_object()) throw ParseError("config must be a JSON object");
    } else {
      config_ = nlohmann::json::object();
    }
    fs::create_directories(a.common.out_dir);
  }

  const nlohmann::json& section(const char* name) const {
    static const nlohmann::json empty = nlohmann::json::object();
    return config_.contains(name) ? config_.at(name) : empty;
  }

  std::uint64_t seed() const {
    if (args_.common.seed) return *args_.common.seed;
    if (config_.contains("seed")) return config_.at("seed").get<std::uint64_t>();
    return 1;
  }

  void input(const std::string& role, const std::string& path) {
    if (!path.empty()) inputs_[role] = path;
  }

  void write(const std::string& name, std::string_view content) {
    io::write_file(fs::path(args_.common.out_dir) / name, content);
    outputs_.push_back(name);
  }

  void note(const std::string& key, json value) { notes_[key] = std::move(value); }

  void manifest(const std::string& status, const std::string& message = {}) const {
    json m;
    m["command"] = command_;
    m["status"] = status;
    if (!message.empty()) m["error"] = message;
    m["seed"] = seed();
    m["inputs"] = inputs_;
    m["config"] = args_.common.config_path;
    m["config_hash"] = config_text_.empty() ? "" : "fnv1a64:" + fnv1a_hex(config_text_);
    m["outputs"] = outputs_;
    m["versions"] = {{"pedmr", PEDMR_VERSION},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) +
                                   "." + std::to_string(BOOST_VERSION % 100)},
                     {"cli11", CLI11_VERSION},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    if (!notes_.empty()) m["notes"] = notes_;
    io::write_file(fs::path(args_.common.out_dir) / "manifest.json", m.dump(2) + "\n");
  }

  const std::string& config_text() const { return config_text_; }
  const nlohmann::json& config() const { return config_; }

 private:
  std::string command_;
  const Args& args_;
  std::string config_text_;
  nlohmann::json config_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  json notes_ = json::object();
};

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string("missing required option ") + flag);
  return value;
}

pedigree::Pedigree load_pedigree(Run& run, const std::string& path) {
  run.input("pedigree", path);
  return pedigree::parse_pedigree(io::read_file(require(path, "--ped")));
}

std::vector<std::string> read_instrument_list(const std::string& path) {
  const auto t = io::parse_csv(io::read_file(path));
  const auto c = t.column("snp");
  std::vector<std::string> out;
  for (const auto& r : t.rows) out.push_back(r[c]);
  return out;
}

struct Loaded {
  pedigree::Pedigree ped;
  dataset::MRDataset data;
};

Loaded load_data(Run& run, const DataArgs& a) {
  Loaded l;
  l.ped = load_pedigree(run, a.ped);
  run.input("genotypes", a.geno);
  run.input("phenotypes", a.pheno);
  l.data = dataset::load_dataset(l.ped, io::read_file(require(a.geno, "--geno")), io::read_file(require(a.pheno, "--pheno")));
  if (!a.instruments.empty()) {
    run.input("instruments", a.instruments);
    const auto wanted = read_instrument_list(a.instruments);
    std::vector<std::size_t> cols;
    for (const auto& id : wanted) {
      const auto it = std::find(l.data.snp_ids.begin(), l.data.snp_ids.end(), id);
      if (it == l.data.snp_ids.end()) throw ValidationError("instrument '" + id + "' is not in the genotype file");
      cols.push_back(static_cast<std::size_t>(it - l.data.snp_ids.begin()));
    }
    l.data = dataset::select_columns(l.data, cols);
  }
  return l;
}

std::string csv_matrix(const std::vector<std::string>& ids, const Eigen::MatrixXd& m) {
  std::ostringstream os;
  os << "id";
  for (const auto& id : ids) os << ',' << id;
  os << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    os << ids[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << ',' << io::format_double(m(r, c));
    os << '\n';
  }
  return os.str();
}

bayes::ModelConfig model_config(const Run& run, const Args& a) {
  bayes::ModelConfig cfg = run.config().contains("model") ? bayes::ModelConfig::from_json(run.config_text())
                                                            : bayes::ModelConfig{};
  if (!a.common.level.empty()) cfg.level = bayes::parse_level(a.common.level);
  cfg.validate();
  return cfg;
}

sampler::SamplerConfig sampler_config(const Run& run, const Args& a) {
  sampler::SamplerConfig s;
  const auto& j = run.section("sampler");
  try {
    s.n_chains = j.value("chains", s.n_chains);
    s.n_warmup = j.value("warmup", s.n_warmup);
    s.n_draws = j.value("draws", s.n_draws);
    s.target_accept = j.value("target_accept", s.target_accept);
    s.max_leapfrog = j.value("max_leapfrog", s.max_leapfrog);
    s.threads = j.value("threads", s.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config sampler section: ") + e.what());
  }
  if (a.common.chains) s.n_chains = *a.common.chains;
  if (a.common.threads) s.threads = *a.common.threads;
  if (a.warmup) s.n_warmup = *a.warmup;
  if (a.n_draws) s.n_draws = *a.n_draws;
  s.seed = run.seed();
  s.validate();
  return s;
}

std::string table_out(const posterior::PercentileTable& t, const std::string& format) {
  return format == "json" ? t.to_json() + "\n" : t.to_csv();
}

std::string ext(const std::string& format) { return format == "json" ? ".json" : ".csv"; }

// Draws reassembled from a draws CSV, with every column treated as a stored value.
sampler::PosteriorDraws draws_from_csv(const std::string& path) {
  auto t = posterior::parse_draws_csv(io::read_file(path));
  sampler::PosteriorDraws d;
  d.names = std::move(t.names);
  d.draws = std::move(t.chains);
  d.info.resize(d.draws.size());
  return d;
}

// ---- subcommands ----

void cmd_simulate(Run& run, const Args&) {
  const auto sc = run.config().contains("scenario") ? simulate::Scenario::from_json(run.config_text()) : simulate::Scenario{};
  const auto s = simulate::run_scenario(sc, run.seed());
  run.write("pedigree.ped", pedigree::format_pedigree(s.ped));
  const auto& d = s.sim.data;
  std::ostringstream geno, pheno, snps;
  geno << "id";
  for (const auto& id : d.snp_ids) geno << ',' << id;
  geno << '\n';
  pheno << "id,X,Y\n";
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    geno << d.ids[i];
    for (Eigen::Index c = 0; c < d.z.cols(); ++c) geno << ',' << static_cast<int>(d.z(r, c));
    geno << '\n';
    pheno << d.ids[i] << ',' << (d.x_observed[i] ? io::format_double(d.x(r)) : std::string("NA")) << ',' << d.y(r) << '\n';
  }
  // Instruments placed far apart so no LD window spans two of them.
  snps << "snp,chrom,pos\n";
  for (std::size_t k = 0; k < d.snp_ids.size(); ++k) snps << d.snp_ids[k] << ",1," << 1000000 * (k + 1) << '\n';
  run.write("genotypes.csv", geno.str());
  run.write("phenotypes.csv", pheno.str());
  run.write("snps.csv", snps.str());
  run.write("truth.json", simulate::truth_json(s.truth, s.sim));
  run.write("scenario.json", sc.to_json() + "\n");
}

void cmd_kinship(Run& run, const Args& a) {
  const auto ped = load_pedigree(run, a.data.ped);
  const auto k = pedigree::kinship_matrix(ped);
  run.write("kinship.csv", csv_matrix(k.order, k.phi));
}

void cmd_select(Run& run, const Args& a) {
  auto loaded = load_data(run, a.data);
  const auto& d = loaded.data;
  dataset::SelectionOptions opts;
  const auto& sel = run.section("selection");
  opts.p_threshold = a.p_threshold.value_or(sel.value("p_threshold", opts.p_threshold));
  opts.r2_threshold = a.r2_threshold.value_or(sel.value("r2_threshold", opts.r2_threshold));
  opts.window_bp = a.window_bp.value_or(sel.value("window_bp", opts.window_bp));
  std::vector<long long> positions;
  if (!a.snps.empty()) {
    run.input("snps", a.snps);
    const auto info = dataset::parse_snp_info(io::read_file(a.snps));
    std::map<std::string, long long> pos;
    for (const auto& s : info) pos[s.id] = s.pos;
    for (const auto& id : d.snp_ids) {
      const auto it = pos.find(id);
      if (it == pos.end()) throw ValidationError("no position for SNP '" + id + "'");
      positions.push_back(it->second);
    }
  }
  const auto kept = dataset::select_instruments(d.z, positions, d.x, d.x_observed, opts);
  std::ostringstream os;
  os << "snp,beta,se,p_value\n";
  for (auto c : kept) {
    const auto t = dataset::marginal_association(d.z.col(static_cast<Eigen::Index>(c)), d.x, d.x_observed);
    os << d.snp_ids[c] << ',' << io::format_double(t.beta) << ',' << io::format_double(t.se) << ','
       << io::format_double(t.p_value) << '\n';
  }
  run.write("instruments.csv", os.str());
  run.note("selected", kept.size());
}

void cmd_assoc(Run& run, const Args& a) {
  auto loaded = load_data(run, a.data);
  const auto d = dataset::standardize(loaded.data);
  if (a.outcome_leg != "logistic" && a.outcome_leg != "linear")
    throw ValidationError("--outcome-leg must be logistic or linear");
  const auto leg = a.outcome_leg == "linear" ? dataset::OutcomeLeg::linear : dataset::OutcomeLeg::logistic;
  const double scale = model_config(run, a).kinship_scale;
  std::optional<pedigree::KinshipMatrix> k;
  if (!a.no_lmm) k = pedigree::kinship_matrix(loaded.ped);
  const auto s = dataset::summary_stats(d, k ? &*k : nullptr, leg, scale);
  if (a.common.format == "json") {
    json j;
    j["exposure_leg"] = s.exposure_leg;
    j["outcome_leg"] = s.outcome_leg;
    j["dropped"] = s.dropped;
    j["csv"] = dataset::format_summary_stats(s);
    run.write("summary_stats.json", j.dump(2) + "\n");
  }
  run.write("summary_stats.csv", dataset::format_summary_stats(s));
  run.note("exposure_leg", s.exposure_leg);
  run.note("outcome_leg", s.outcome_leg);
  run.note("dropped", s.dropped);
}

void cmd_mr_freq(Run& run, const Args& a) {
  run.input("summary_stats", a.stats);
  const auto s = dataset::parse_summary_stats(io::read_file(require(a.stats, "--stats")));
  freq_mr::Options opts;
  const auto& f = run.section("mr_freq");
  opts.penalty_factor = f.value("penalty_factor", opts.penalty_factor);
  opts.bootstrap_resamples = f.value("bootstrap_resamples", opts.bootstrap_resamples);
  opts.seed = run.seed();
  const auto rows = freq_mr::run_all(s, opts);
  if (a.common.format == "json") {
    json arr = json::array();
    for (const auto& r : rows) {
      json o;
      o["method"] = freq_mr::method_id(r.method);
      o["label"] = freq_mr::method_label(r.method);
      o["estimate"] = r.estimate;
      o["se"] = r.se;
      o["ci_low"] = r.ci_low;
      o["ci_high"] = r.ci_high;
      o["p"] = r.p_value;
      if (r.intercept) o["intercept"] = *r.intercept;
      if (r.intercept_se) o["intercept_se"] = *r.intercept_se;
      o["warnings"] = r.warnings;
      arr.push_back(o);
    }
    run.write("mr_freq.json", arr.dump(2) + "\n");
  } else {
    run.write("mr_freq.csv", freq_mr::format_table(rows));
  }
}

std::vector<std::string> scalar_quantities(const sampler::PosteriorDraws& d) {
  std::vector<std::string> out;
  for (const char* n : {"theta", "omega_y", "delta_x", "sigma_x", "sigma_alpha", "pleio_frac", "tau", "m0",
                        "alpha_mother", "alpha_father"})
    if (d.contains(n)) out.emplace_back(n);
  return out;
}

void write_summaries(Run& run, const sampler::PosteriorDraws& draws, const std::vector<std::string>& names,
                     const std::string& format) {
  run.write("causal_effect" + ext(format), table_out(posterior::causal_effect_table(draws), format));
  run.write("percentiles" + ext(format), table_out(posterior::percentile_table(draws, names), format));
  run.write("intervals.csv", posterior::interval_csv(draws, names));
  if (draws.contains("gamma_x[1]")) {
    const auto fe = posterior::family_effects(draws);
    run.write("family_direct" + ext(format), table_out(fe.direct, format));
    run.write("family_indirect" + ext(format), table_out(fe.indirect, format));
  }
}

void cmd_mr_bayes(Run& run, const Args& a) {
  auto loaded = load_data(run, a.data);
  const auto cfg = model_config(run, a);
  const auto scfg = sampler_config(run, a);
  std::optional<pedigree::KinshipMatrix> k;
  if (cfg.level != bayes::Level::independence) k = pedigree::kinship_matrix(loaded.ped);
  const auto f = fit::fit_bayes(loaded.data, k ? &*k : nullptr, cfg, scfg);

  run.write("draws.csv", posterior::draws_csv(f.draws.quantity_names, f.draws.quantities));
  run.write("draws_unconstrained.csv", posterior::draws_csv(f.draws.names, f.draws.draws));
  const auto names = scalar_quantities(f.draws);
  const auto diag = diagnostics::summarize(f.draws, names);
  run.write("diagnostics.json", diag.to_json() + "\n");
  write_summaries(run, f.draws, names, a.common.format);

  std::vector<std::string> mis_ids(f.prepared.data.ids.begin() + static_cast<std::ptrdiff_t>(f.prepared.data.n_obs()),
                                   f.prepared.data.ids.end());
  if (!mis_ids.empty()) {
    std::optional<Eigen::VectorXd> truth;
    if (!a.truth.empty()) {
      run.input("truth", a.truth);
      const auto t = nlohmann::json::parse(io::read_file(a.truth));
      const auto ids = t.at("ids").get<std::vector<std::string>>();
      const auto xs = t.at("x_true").get<std::vector<double>>();
      std::map<std::string, double> by_id;
      for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]] = xs[i];
      const auto& sc = *f.prepared.data.scaling;
      Eigen::VectorXd v(static_cast<Eigen::Index>(mis_ids.size()));
      for (std::size_t i = 0; i < mis_ids.size(); ++i) v(static_cast<Eigen::Index>(i)) = (by_id.at(mis_ids[i]) - sc.x_mean) / sc.x_sd;
      truth = v;
    }
    const auto imp = posterior::impute_summary(f.draws, truth);
    run.write("impute.csv", imp.to_csv(mis_ids));
    if (imp.correlation) run.note("impute_correlation", *imp.correlation);
  }

  json fitj;
  fitj["model"] = nlohmann::json::parse(cfg.to_json());
  fitj["sampler"] = {{"chains", scfg.n_chains},   {"warmup", scfg.n_warmup},
                     {"draws", scfg.n_draws},     {"target_accept", scfg.target_accept},
                     {"max_leapfrog", scfg.max_leapfrog}, {"seed", scfg.seed}};
  fitj["layout"] = nlohmann::json::parse(f.model->layout().to_json());
  fitj["row_ids"] = f.prepared.data.ids;
  fitj["snp_ids"] = f.prepared.data.snp_ids;
  fitj["relationship_jitter"] = f.prepared.jitter;
  fitj["divergences"] = f.draws.divergences();
  std::vector<double> eps;
  for (const auto& i : f.draws.info) eps.push_back(i.step_size);
  fitj["step_size"] = eps;
  run.write("fit.json", fitj.dump(2) + "\n");
  run.note("max_rhat", diag.max_rhat());
  run.note("divergences", f.draws.divergences());
}

void cmd_summarize(Run& run, const Args& a) {
  run.input("draws", a.draws);
  const auto draws = draws_from_csv(require(a.draws, "--draws"));
  std::vector<std::string> names = a.params;
  if (names.empty()) names = scalar_quantities(draws);
  if (names.empty()) names = draws.names;
  const auto diag = diagnostics::summarize(draws, names);
  run.write("diagnostics.json", diag.to_json() + "\n");
  run.write("summary" + ext(a.common.format), table_out(posterior::percentile_table(draws, names), a.common.format));
  if (draws.contains("theta")) write_summaries(run, draws, names, a.common.format);
}

void cmd_ppc(Run& run, const Args& a) {
  const fs::path dir = require(a.fit_dir, "--fit-dir");
  run.input("fit", (dir / "fit.json").string());
  const auto fitj = nlohmann::json::parse(io::read_file(dir / "fit.json"));
  auto loaded = load_data(run, a.data);
  auto cfg = bayes::ModelConfig::from_json(fitj.at("model").dump());
  std::optional<pedigree::KinshipMatrix> k;
  if (cfg.level != bayes::Level::independence) k = pedigree::kinship_matrix(loaded.ped);
  const auto prep = fit::prepare(loaded.data, k ? &*k : nullptr, cfg);
  if (prep.data.ids != fitj.at("row_ids").get<std::vector<std::string>>())
    throw ValidationError("data do not match the fit (row order differs)");
  const bayes::PosteriorModel model(prep.data, prep.relationship_cholesky, cfg);
  auto draws = draws_from_csv((dir / "draws_unconstrained.csv").string());
  const std::size_t reps = run.section("ppc").value("replicates", std::size_t{200});
  const auto r = posterior::ppc(draws, model, run.seed(), reps);
  run.write("ppc.json", r.to_json() + "\n");
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--out-dir", c.out_dir, "Output directory");
  sub->add_option("--format", c.format, "Summary format")->check(CLI::IsMember({"csv", "json"}));
  sub->add_option("--chains", c.chains, "Number of chains")->check(CLI::PositiveNumber);
  sub->add_option("--threads", c.threads, "Concurrent chains")->check(CLI::PositiveNumber);
  sub->add_option("--level", c.level, "Model level")
      ->check(CLI::IsMember({"independence", "kinship", "kinship_family", "full"}));
}

void add_data(CLI::App* sub, DataArgs& d, bool need_genotypes) {
  sub->add_option("--ped", d.ped, "Pedigree file")->required()->check(CLI::ExistingFile);
  if (!need_genotypes) return;
  sub->add_option("--geno", d.geno, "Genotype CSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--pheno", d.pheno, "Phenotype CSV")->required()->check(CLI::ExistingFile);
  sub->add_option("--instruments", d.instruments, "CSV with a 'snp' column restricting instruments")
      ->check(CLI::ExistingFile);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mendelian randomization on pedigree data", "pedmr"};
  app.require_subcommand(1);
  Args a;

  struct Sub {
    const char* name;
    const char* help;
    void (*fn)(Run&, const Args&);
  };
  const Sub subs[] = {
      {"simulate", "Simulate a pedigree study from the scenario config", cmd_simulate},
      {"kinship", "Kinship matrix of a pedigree", cmd_kinship},
      {"select-instruments", "Association filter and LD pruning", cmd_select},
      {"assoc", "Per-instrument exposure and outcome associations", cmd_assoc},
      {"mr-freq", "Frequentist MR estimators from summary statistics", cmd_mr_freq},
      {"mr-bayes", "Bayesian pedigree MR model by HMC", cmd_mr_bayes},
      {"summarize", "Percentile tables and diagnostics from a draws CSV", cmd_summarize},
      {"ppc", "Posterior predictive check of a saved fit", cmd_ppc},
  };
  std::map<const CLI::App*, const Sub*> dispatch;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, a.common);
    dispatch[sub] = &s;
    const std::string name = s.name;
    if (name == "kinship") add_data(sub, a.data, false);
    if (name == "select-instruments" || name == "assoc" || name == "mr-bayes" || name == "ppc") add_data(sub, a.data, true);
    if (name == "select-instruments") {
      sub->add_option("--snps", a.snps, "SNP position CSV (snp,chrom,pos)")->check(CLI::ExistingFile);
      sub->add_option("--p-threshold", a.p_threshold, "Marginal p-value threshold");
      sub->add_option("--r2-threshold", a.r2_threshold, "LD r^2 threshold");
      sub->add_option("--window", a.window_bp, "LD window in base pairs");
    }
    if (name == "assoc") {
      sub->add_flag("--no-lmm", a.no_lmm, "Ordinary least squares for the exposure leg");
      sub->add_option("--outcome-leg", a.outcome_leg, "logistic or linear");
    }
    if (name == "mr-freq") sub->add_option("--stats", a.stats, "Summary statistics CSV")->required()->check(CLI::ExistingFile);
    if (name == "mr-bayes") {
      sub->add_option("--warmup", a.warmup, "Warmup iterations per chain")->check(CLI::PositiveNumber);
      sub->add_option("--draws", a.n_draws, "Retained draws per chain")->check(CLI::PositiveNumber);
      sub->add_option("--truth", a.truth, "truth.json from simulate, for imputation scoring")->check(CLI::ExistingFile);
    }
    if (name == "summarize") {
      sub->add_option("--draws", a.draws, "Draws CSV")->required()->check(CLI::ExistingFile);
      sub->add_option("--params", a.params, "Quantities to summarize");
    }
    if (name == "ppc") sub->add_option("--fit-dir", a.fit_dir, "Output directory of mr-bayes")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    if (e.get_exit_code() == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const Sub& sub = *dispatch.at(chosen);
  std::unique_ptr<Run> run;
  try {
    run = std::make_unique<Run>(sub.name, a);
    sub.fn(*run, a);
    run->manifest("ok");
    return kExitOk;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "pedmr " << sub.name << ": error: " << msg << '\n';
    if (run) {
      try {
        run->manifest("error", msg);
      } catch (const std::exception&) {
      }
    }
    return kExitRuntime;
  }
}

}  // namespace pedmr::cli
