#include "pedmr/bayes_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "pedmr/error.hpp"

namespace pedmr::bayes {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLog2 = std::numbers::ln2;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
double logit(double p) { return std::log(p) - std::log1p(-p); }

bool is_scalar_block(std::string_view name) {
  for (std::string_view s : {"theta", "omega_y", "delta_x", "sigma_x", "sigma_alpha", "pleio_frac", "pleio_frac_u", "r1_global", "r2_global",
                             "alpha_mother", "alpha_father"})
    if (name == s) return true;
  return false;
}

double cauchy_lpdf(double x, double scale) {
  return -std::log(std::numbers::pi * scale) - std::log1p((x / scale) * (x / scale));
}
double cauchy_dlpdf(double x, double scale) { return -2.0 * x / (scale * scale + x * x); }

// Inverse-gamma(shape, rate) log density at r.
double inv_gamma_lpdf(double r, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(r) - rate / r;
}

}  // namespace

std::string_view level_name(Level level) {
  switch (level) {
    case Level::independence: return "independence";
    case Level::kinship: return "kinship";
    case Level::kinship_family: return "kinship_family";
    case Level::full: return "full";
  }
  return "unknown";
}

Level parse_level(std::string_view name) {
  if (name == "independence") return Level::independence;
  if (name == "kinship") return Level::kinship;
  if (name == "kinship_family" || name == "kinship-family" || name == "family") return Level::kinship_family;
  if (name == "full") return Level::full;
  throw ValidationError("unknown model level '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (!(cauchy_sd > 0.0)) throw ValidationError("cauchy_sd must be positive");
  if (!(nu_local >= 1.0) || !(nu_global >= 1.0)) throw ValidationError("nu_local and nu_global must be >= 1");
  if (!(pleio_frac_lower > 0.0 && pleio_frac_lower < pleio_frac_upper && pleio_frac_upper < 1.0))
    throw ValidationError("pleiotropic fraction bounds must be ordered within (0,1)");
  if (!(kinship_scale > 0.0)) throw ValidationError("kinship_scale must be positive");
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  const auto& m = j.contains("model") ? j.at("model") : j;
  try {
    if (m.contains("level")) c.level = parse_level(m.at("level").get<std::string>());
    c.cauchy_sd = m.value("cauchy_sd", c.cauchy_sd);
    c.nu_local = m.value("nu_local", c.nu_local);
    c.nu_global = m.value("nu_global", c.nu_global);
    if (m.contains("pleio_frac_bounds")) {
      auto b = m.at("pleio_frac_bounds").get<std::vector<double>>();
      if (b.size() != 2) throw ParseError("pleio_frac_bounds must have two entries");
      c.pleio_frac_lower = b[0];
      c.pleio_frac_upper = b[1];
    }
    c.kinship_scale = m.value("kinship_scale", c.kinship_scale);
    if (m.contains("parameterization")) {
      const auto v = m.at("parameterization").get<std::string>();
      if (v != "centered" && v != "noncentered") throw ValidationError("parameterization must be centered or noncentered");
      c.noncentered = v == "noncentered";
    }
    if (m.contains("betasimsd")) c.betasimsd = m.at("betasimsd").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["level"] = level_name(level);
  j["cauchy_sd"] = cauchy_sd;
  j["nu_local"] = nu_local;
  j["nu_global"] = nu_global;
  j["pleio_frac_bounds"] = {pleio_frac_lower, pleio_frac_upper};
  j["kinship_scale"] = kinship_scale;
  j["parameterization"] = noncentered ? "noncentered" : "centered";
  if (betasimsd) j["betasimsd"] = *betasimsd;
  return j.dump(2);
}

Layout Layout::create(const ModelConfig& cfg, std::size_t n, std::size_t j, std::size_t m, std::size_t n_mis) {
  cfg.validate();
  if (n == 0 || j == 0) throw ValidationError("layout: N and J must be positive");
  if (n_mis > n) throw ValidationError("layout: more missing exposures than individuals");
  const bool family = cfg.level == Level::kinship_family || cfg.level == Level::full;
  if (family && m == 0) throw ValidationError("layout: family levels need at least one family");

  Layout l;
  l.level_ = cfg.level;
  l.n_ = n;
  l.j_ = j;
  l.m_ = m;
  l.n_mis_ = n_mis;
  auto add = [&](std::string name, std::size_t size, Transform t, double lo = 0.0, double hi = 0.0) {
    l.blocks_.push_back({std::move(name), l.dim_, size, t, lo, hi});
    l.dim_ += size;
  };
  add("theta", 1, Transform::identity);
  add("omega_y", 1, Transform::identity);
  add("delta_x", 1, Transform::identity);
  add("sigma_x", 1, Transform::log);
  add("sigma_alpha", 1, Transform::log);
  if (cfg.noncentered) add("pleio_frac_u", 1, Transform::interval, 0.0, 1.0);
  else add("pleio_frac", 1, Transform::interval, cfg.pleio_frac_lower, cfg.pleio_frac_upper);
  add("alpha", j, Transform::identity);
  add("z", j, Transform::identity);
  add("r1_local", j, Transform::log);
  add("r2_local", j, Transform::log);
  add("r1_global", 1, Transform::log);
  add("r2_global", 1, Transform::log);
  add(cfg.noncentered ? "u_z" : "u", n, Transform::identity);
  add(cfg.noncentered ? "x_mis_z" : "x_mis", n_mis, Transform::identity);
  if (family) {
    add(cfg.noncentered ? "gamma_x_q" : "gamma_x", m, Transform::identity);
    add(cfg.noncentered ? "gamma_y_q" : "gamma_y", m, Transform::identity);
  }
  if (cfg.level == Level::full) {
    add("alpha_mother", 1, Transform::interval, -1.0, 1.0);
    add("alpha_father", 1, Transform::interval, -1.0, 1.0);
  }
  if (cfg.level != Level::independence) add(cfg.noncentered ? "correction_z" : "correction", n, Transform::identity);
  return l;
}

const Block& Layout::block(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw ValidationError("layout has no block '" + std::string(name) + "'");
}

bool Layout::has(std::string_view name) const {
  return std::any_of(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.name == name; });
}

std::vector<std::string> Layout::coordinate_names() const {
  std::vector<std::string> names;
  names.reserve(dim_);
  for (const auto& b : blocks_) {
    if (b.size == 1 && is_scalar_block(b.name)) names.push_back(b.name);
    else
      for (std::size_t k = 0; k < b.size; ++k) names.push_back(b.name + "[" + std::to_string(k + 1) + "]");
  }
  return names;
}

std::string Layout::to_json() const {
  nlohmann::ordered_json j;
  j["level"] = level_name(level_);
  j["N"] = n_;
  j["J"] = j_;
  j["M"] = m_;
  j["n_mis"] = n_mis_;
  j["dim"] = dim_;
  auto& arr = j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& b : blocks_) {
    nlohmann::ordered_json e;
    e["name"] = b.name;
    e["offset"] = b.offset;
    e["size"] = b.size;
    e["transform"] = b.transform == Transform::identity ? "identity" : b.transform == Transform::log ? "log" : "interval";
    if (b.transform == Transform::interval) e["bounds"] = {b.lower, b.upper};
    arr.push_back(e);
  }
  return j.dump(2);
}

Eigen::VectorXd ParamBlock::lambda() const { return r1_local.array() * r2_local.array().sqrt(); }
double ParamBlock::tau() const { return r1_global * std::sqrt(r2_global); }
Eigen::VectorXd ParamBlock::beta() const { return z_aux.array() * lambda().array() * tau(); }

double expected_pleiotropic(std::size_t j, double pleio_frac) { return std::floor(static_cast<double>(j) * pleio_frac); }

double global_scale(std::size_t n, std::size_t j, double pleio_frac) {
  const double m0 = expected_pleiotropic(j, pleio_frac);
  return 2.0 * m0 / (std::sqrt(static_cast<double>(n)) * (static_cast<double>(j) - m0));
}

namespace {

double interval_value(const Block& b, double x) { return b.lower + (b.upper - b.lower) * logistic(x); }
double interval_inverse(const Block& b, double v) { return logit((v - b.lower) / (b.upper - b.lower)); }

}  // namespace

ParamBlock to_natural(const Layout& layout, const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != layout.dim()) throw ValidationError("parameter vector has wrong dimension");
  ParamBlock p;
  auto seg = [&](std::string_view name) {
    const auto& b = layout.block(name);
    return v.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size));
  };
  auto scalar = [&](std::string_view name) { return v(static_cast<Eigen::Index>(layout.block(name).offset)); };
  p.theta = scalar("theta");
  p.omega_y = scalar("omega_y");
  p.delta_x = scalar("delta_x");
  p.sigma_x = std::exp(scalar("sigma_x"));
  p.sigma_alpha = std::exp(scalar("sigma_alpha"));
  const char* pf = layout.has("pleio_frac_u") ? "pleio_frac_u" : "pleio_frac";
  p.pleio_frac = interval_value(layout.block(pf), scalar(pf));
  p.alpha = seg("alpha");
  p.z_aux = seg("z");
  p.r1_local = seg("r1_local").array().exp();
  p.r2_local = seg("r2_local").array().exp();
  p.r1_global = std::exp(scalar("r1_global"));
  p.r2_global = std::exp(scalar("r2_global"));
  p.u = seg(layout.has("u_z") ? "u_z" : "u");
  p.x_mis = seg(layout.has("x_mis_z") ? "x_mis_z" : "x_mis");
  if (layout.has("gamma_x") || layout.has("gamma_x_q")) {
    const bool q = layout.has("gamma_x_q");
    p.gamma_x = seg(q ? "gamma_x_q" : "gamma_x");
    p.gamma_y = seg(q ? "gamma_y_q" : "gamma_y");
  }
  if (layout.has("alpha_mother")) {
    p.alpha_mother = interval_value(layout.block("alpha_mother"), scalar("alpha_mother"));
    p.alpha_father = interval_value(layout.block("alpha_father"), scalar("alpha_father"));
  }
  if (layout.has("correction")) p.correction = seg("correction");
  if (layout.has("correction_z")) p.correction = seg("correction_z");
  return p;
}

Eigen::VectorXd to_unconstrained(const Layout& layout, const ParamBlock& p) {
  Eigen::VectorXd v(layout.dim());
  auto put = [&](std::string_view name, const Eigen::VectorXd& values) {
    const auto& b = layout.block(name);
    if (static_cast<std::size_t>(values.size()) != b.size) throw ValidationError("block '" + b.name + "' has wrong size");
    v.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size)) = values;
  };
  auto put1 = [&](std::string_view name, double value) { v(static_cast<Eigen::Index>(layout.block(name).offset)) = value; };
  put1("theta", p.theta);
  put1("omega_y", p.omega_y);
  put1("delta_x", p.delta_x);
  put1("sigma_x", std::log(p.sigma_x));
  put1("sigma_alpha", std::log(p.sigma_alpha));
  const char* pf = layout.has("pleio_frac_u") ? "pleio_frac_u" : "pleio_frac";
  put1(pf, interval_inverse(layout.block(pf), p.pleio_frac));
  put("alpha", p.alpha);
  put("z", p.z_aux);
  put("r1_local", p.r1_local.array().log().matrix());
  put("r2_local", p.r2_local.array().log().matrix());
  put1("r1_global", std::log(p.r1_global));
  put1("r2_global", std::log(p.r2_global));
  put(layout.has("u_z") ? "u_z" : "u", p.u);
  put(layout.has("x_mis_z") ? "x_mis_z" : "x_mis", p.x_mis);
  if (layout.has("gamma_x") || layout.has("gamma_x_q")) {
    const bool q = layout.has("gamma_x_q");
    put(q ? "gamma_x_q" : "gamma_x", p.gamma_x);
    put(q ? "gamma_y_q" : "gamma_y", p.gamma_y);
  }
  if (layout.has("alpha_mother")) {
    put1("alpha_mother", interval_inverse(layout.block("alpha_mother"), p.alpha_mother));
    put1("alpha_father", interval_inverse(layout.block("alpha_father"), p.alpha_father));
  }
  if (layout.has("correction")) put("correction", p.correction);
  if (layout.has("correction_z")) put("correction_z", p.correction);
  return v;
}

BlockCholesky::BlockCholesky(const Eigen::MatrixXd& lower) : n_(static_cast<std::size_t>(lower.rows())) {
  if (lower.rows() != lower.cols()) throw ValidationError("Cholesky factor must be square");
  const auto n = lower.rows();
  // Union-find over the nonzero pattern of the strictly lower triangle.
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), Eigen::Index{0});
  auto find = [&](Eigen::Index i) {
    while (parent[static_cast<std::size_t>(i)] != i) {
      parent[static_cast<std::size_t>(i)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
      i = parent[static_cast<std::size_t>(i)];
    }
    return i;
  };
  for (Eigen::Index c = 0; c < n; ++c)
    for (Eigen::Index r = c + 1; r < n; ++r)
      if (lower(r, c) != 0.0) {
        auto a = find(r), b = find(c);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
      }
  std::vector<std::vector<Eigen::Index>> groups(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) groups[static_cast<std::size_t>(find(i))].push_back(i);
  for (auto& g : groups) {
    if (g.empty()) continue;
    Part part;
    part.index = std::move(g);
    part.lower = lower(part.index, part.index).triangularView<Eigen::Lower>();
    if ((part.lower.diagonal().array() <= 0.0).any()) throw NotPositiveDefiniteError("Cholesky factor has non-positive diagonal");
    part.log_det_half = part.lower.diagonal().array().log().sum();
    blocks_.push_back(std::move(part));
  }
}

Eigen::VectorXd BlockCholesky::multiply(const Eigen::VectorXd& e) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
  for (const auto& part : blocks_) out(part.index) = part.lower.triangularView<Eigen::Lower>() * Eigen::VectorXd(e(part.index));
  return out;
}

Eigen::VectorXd BlockCholesky::multiply_transpose(const Eigen::VectorXd& g) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
  for (const auto& part : blocks_)
    out(part.index) = part.lower.triangularView<Eigen::Lower>().transpose() * Eigen::VectorXd(g(part.index));
  return out;
}

double BlockCholesky::log_density(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
  double lp = -0.5 * static_cast<double>(n_) * kLog2Pi;
  for (const auto& part : blocks_) {
    Eigen::VectorXd xs = x(part.index);
    const auto l = part.lower.triangularView<Eigen::Lower>();
    Eigen::VectorXd w = l.solve(xs);
    lp += -0.5 * w.squaredNorm() - part.log_det_half;
    if (grad) {
      Eigen::VectorXd g = l.transpose().solve(w);
      for (std::size_t k = 0; k < part.index.size(); ++k) (*grad)(part.index[k]) -= g(static_cast<Eigen::Index>(k));
    }
  }
  return lp;
}

PosteriorModel::PosteriorModel(dataset::MRDataset data, const Eigen::MatrixXd& relationship_cholesky, ModelConfig cfg)
    : data_(std::move(data)), cfg_(cfg) {
  cfg_.validate();
  data_.validate();
  if (!data_.scaling) throw ValidationError("posterior model requires a standardized dataset");
  if (!data_.is_partitioned()) throw ValidationError("posterior model requires observed exposures first");
  n_obs_ = data_.n_obs();
  layout_ = Layout::create(cfg_, data_.n(), data_.j(), data_.m(), data_.n_mis());
  if (cfg_.level != Level::independence) {
    if (relationship_cholesky.rows() != static_cast<Eigen::Index>(data_.n()))
      throw ValidationError("relationship Cholesky factor does not match dataset size");
    correction_prior_ = BlockCholesky(relationship_cholesky);
  }
  x_obs_ = data_.x.head(static_cast<Eigen::Index>(n_obs_));
  y_ = data_.y.cast<double>();
  if (data_.family_design.rows() != static_cast<Eigen::Index>(data_.n()))
    data_.family_design = dataset::family_design(data_.family, data_.m());
  if (layout_.has("pleio_frac_u")) {
    // pleio_frac acts only through m0, so the density is flat on each
    // interval of constant m0 and the global-scale prior is a finite mixture.
    const double lo = cfg_.pleio_frac_lower, hi = cfg_.pleio_frac_upper;
    const double jd = static_cast<double>(data_.j());
    for (double k = std::floor(jd * lo); k < jd * hi; k += 1.0) {
      const double left = std::max(lo, k / jd), right = std::min(hi, (k + 1.0) / jd);
      if (!(right > left) || k == 0.0) continue;
      const double scale = 2.0 * k / (std::sqrt(static_cast<double>(data_.n())) * (jd - k));
      pleio_mix_.push_back({left, right - left, std::log((right - left) / (hi - lo)), scale});
    }
  }
  if (layout_.has("gamma_x_q")) {
    // Eigenbasis of F'F: the direction the centered indicators cannot see
    // becomes a single coordinate.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(data_.family_design.transpose() * data_.family_design);
    family_rotation_ = es.eigenvectors();
  }
}

double PosteriorModel::log_density(const Eigen::VectorXd& v) const { return evaluate(v, nullptr, nullptr); }

double PosteriorModel::log_density_gradient(const Eigen::VectorXd& v, Eigen::VectorXd& grad) const {
  grad.setZero(static_cast<Eigen::Index>(layout_.dim()));
  return evaluate(v, &grad, nullptr);
}

PosteriorModel::Terms PosteriorModel::terms(const Eigen::VectorXd& v) const {
  Terms t;
  evaluate(v, nullptr, &t);
  return t;
}

Eigen::VectorXd PosteriorModel::complete_exposure(const ParamBlock& p) const {
  Eigen::VectorXd x(static_cast<Eigen::Index>(data_.n()));
  x.head(static_cast<Eigen::Index>(n_obs_)) = x_obs_;
  x.tail(static_cast<Eigen::Index>(data_.n_mis())) = p.x_mis;
  return x;
}

Eigen::VectorXd PosteriorModel::outcome_linear_predictor(const ParamBlock& p) const {
  Eigen::VectorXd eta = (data_.z * p.beta()).array() + p.omega_y;
  eta += p.theta * complete_exposure(p) + p.u;
  if (p.gamma_y.size() > 0) eta += data_.family_design * p.gamma_y;
  if (p.correction.size() > 0) eta += p.correction;
  return eta;
}

Eigen::VectorXd PosteriorModel::exposure_mean_without_confounder(const ParamBlock& p) const {
  Eigen::VectorXd nu0 = data_.z * p.alpha;
  if (p.gamma_x.size() > 0) nu0 += data_.family_design * p.gamma_x;
  if (layout_.has("alpha_mother")) nu0 += p.alpha_mother * data_.mother_x + p.alpha_father * data_.father_x;
  return nu0;
}

ParamBlock PosteriorModel::natural(const Eigen::VectorXd& v) const {
  ParamBlock p = to_natural(layout_, v);
  if (layout_.has("pleio_frac_u")) p.pleio_frac = pleio_from_uniform(p.pleio_frac, p.r1_global);
  if (family_rotation_.size() > 0) {
    p.gamma_x = family_rotation_ * p.gamma_x;
    p.gamma_y = family_rotation_ * p.gamma_y;
  }
  if (layout_.has("correction_z")) p.correction = correction_prior_.multiply(p.correction);
  if (layout_.has("u_z")) {
    const auto nobs = static_cast<Eigen::Index>(n_obs_);
    const auto nmis = static_cast<Eigen::Index>(data_.n_mis());
    const Eigen::VectorXd nu0 = exposure_mean_without_confounder(p);
    const double var = p.delta_x * p.delta_x + p.sigma_x * p.sigma_x;
    const double c = p.delta_x / var, s = p.sigma_x / std::sqrt(var);
    const Eigen::VectorXd w = p.u, e = p.x_mis;
    p.u.head(nobs) = c * (x_obs_ - nu0.head(nobs)) + s * w.head(nobs);
    p.x_mis = nu0.tail(nmis) + p.delta_x * w.tail(nmis) + p.sigma_x * e;
  }
  return p;
}

Eigen::VectorXd PosteriorModel::correction(const Eigen::VectorXd& v) const { return natural(v).correction; }

double PosteriorModel::evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad, Terms* terms) const {
  if (static_cast<std::size_t>(v.size()) != layout_.dim()) throw ValidationError("parameter vector has wrong dimension");
  if (!v.allFinite()) return kNegInf;
  const auto n = static_cast<Eigen::Index>(data_.n());
  const auto j = static_cast<Eigen::Index>(data_.j());
  const auto nobs = static_cast<Eigen::Index>(n_obs_);
  const auto nmis = n - nobs;
  const bool family = layout_.has("gamma_x") || layout_.has("gamma_x_q");
  const bool rotated = family_rotation_.size() > 0;
  const bool parental = layout_.has("alpha_mother");
  const bool kin = cfg_.level != Level::independence;
  const bool nc_correction = layout_.has("correction_z");
  const bool nc_latent = layout_.has("u_z");

  auto off = [&](std::string_view name) { return static_cast<Eigen::Index>(layout_.block(name).offset); };
  const Eigen::Index o_theta = off("theta"), o_omega = off("omega_y"), o_delta = off("delta_x");
  const Eigen::Index o_sx = off("sigma_x"), o_sa = off("sigma_alpha"), o_pf = off(layout_.has("pleio_frac_u") ? "pleio_frac_u" : "pleio_frac");
  const Eigen::Index o_alpha = off("alpha"), o_z = off("z"), o_r1l = off("r1_local"), o_r2l = off("r2_local");
  const Eigen::Index o_r1g = off("r1_global"), o_r2g = off("r2_global");
  const Eigen::Index o_u = off(nc_latent ? "u_z" : "u"), o_xm = off(nc_latent ? "x_mis_z" : "x_mis");
  const Eigen::Index o_corr = kin ? off(nc_correction ? "correction_z" : "correction") : 0;

  Terms t;
  const double theta = v(o_theta), omega = v(o_omega), delta = v(o_delta);
  const double sigma_x = std::exp(v(o_sx)), sigma_alpha = std::exp(v(o_sa));
  t.jacobian += v(o_sx) + v(o_sa);

  const bool mixed_scale = !pleio_mix_.empty() || layout_.has("pleio_frac_u");
  const double pf_raw = v(o_pf);
  const double pf_width = mixed_scale ? 1.0 : cfg_.pleio_frac_upper - cfg_.pleio_frac_lower;
  const double pleio = cfg_.pleio_frac_lower + pf_width * logistic(pf_raw);
  t.jacobian += std::log(pf_width) - softplus(-pf_raw) - softplus(pf_raw);

  const auto alpha = v.segment(o_alpha, j);
  const auto zaux = v.segment(o_z, j);
  const Eigen::ArrayXd r1l = v.segment(o_r1l, j).array().exp();
  const Eigen::ArrayXd r2l = v.segment(o_r2l, j).array().exp();
  const double r1g = std::exp(v(o_r1g)), r2g = std::exp(v(o_r2g));
  t.jacobian += v.segment(o_r1l, j).sum() + v.segment(o_r2l, j).sum() + v(o_r1g) + v(o_r2g);

  const double scale_global = mixed_scale ? 1.0 : global_scale(data_.n(), data_.j(), pleio);
  if (!(scale_global > 0.0) || (mixed_scale && pleio_mix_.empty())) return kNegInf;  // m0 == 0

  const Eigen::ArrayXd lambda = r1l * r2l.sqrt();
  const double tau = r1g * std::sqrt(r2g);
  const Eigen::VectorXd beta = (zaux.array() * lambda * tau).matrix();

  // Priors.
  const double cs = cfg_.cauchy_sd;
  t.prior += cauchy_lpdf(theta, cs);
  t.prior += -std::log(pf_width);
  t.prior += -static_cast<double>(j) * std::log(2.0 * sigma_alpha) - alpha.cwiseAbs().sum() / sigma_alpha;
  t.prior += -0.5 * static_cast<double>(j) * kLog2Pi - 0.5 * zaux.squaredNorm();
  t.prior += static_cast<double>(j) * (kLog2 - 0.5 * kLog2Pi) - 0.5 * r1l.square().sum();
  const double a_loc = 0.5 * cfg_.nu_local, a_glob = 0.5 * cfg_.nu_global;
  for (Eigen::Index k = 0; k < j; ++k) t.prior += inv_gamma_lpdf(r2l(k), a_loc, a_loc);
  double dlog_r1g = 0.0;  // r1g * d/dr1g of the global-scale prior
  if (mixed_scale) {
    t.prior += global_scale_mixture(r1g, &dlog_r1g);
  } else {
    t.prior += kLog2 - 0.5 * kLog2Pi - std::log(scale_global) - 0.5 * (r1g / scale_global) * (r1g / scale_global);
    dlog_r1g = -(r1g * r1g) / (scale_global * scale_global);
  }
  t.prior += inv_gamma_lpdf(r2g, a_glob, a_glob);

  // Exposure mean apart from the confounder term.
  Eigen::VectorXd nu0 = data_.z * alpha;
  Eigen::VectorXd gamma_x, gamma_y;
  double a_mo_raw = 0.0, a_fa_raw = 0.0;
  if (family) {
    const auto m = static_cast<Eigen::Index>(data_.m());
    gamma_x = v.segment(off(rotated ? "gamma_x_q" : "gamma_x"), m);
    gamma_y = v.segment(off(rotated ? "gamma_y_q" : "gamma_y"), m);
    if (rotated) {
      gamma_x = family_rotation_ * gamma_x;
      gamma_y = family_rotation_ * gamma_y;
    }
    nu0 += data_.family_design * gamma_x;
    for (Eigen::Index f = 0; f < gamma_x.size(); ++f) t.prior += cauchy_lpdf(gamma_x(f), cs) + cauchy_lpdf(gamma_y(f), cs);
  }
  if (parental) {
    a_mo_raw = v(off("alpha_mother"));
    a_fa_raw = v(off("alpha_father"));
    const double a_mo = -1.0 + 2.0 * logistic(a_mo_raw);
    const double a_fa = -1.0 + 2.0 * logistic(a_fa_raw);
    t.prior += -2.0 * kLog2;
    t.jacobian += 2.0 * kLog2 - softplus(-a_mo_raw) - softplus(a_mo_raw) - softplus(-a_fa_raw) - softplus(a_fa_raw);
    nu0 += a_mo * data_.mother_x + a_fa * data_.father_x;
  }

  // Latent confounder and missing exposures on the natural scale.
  const auto w = v.segment(o_u, n);
  const auto xz = v.segment(o_xm, nmis);
  Eigen::VectorXd u(n), xc(n);
  xc.head(nobs) = x_obs_;
  const double var = delta * delta + sigma_x * sigma_x;
  const double c = delta / var, s = sigma_x / std::sqrt(var);
  Eigen::VectorXd r, ex;
  if (nc_latent) {
    // Observed rows: x ~ N(nu0, var) with u | x as the shifted conditional;
    // missing rows: u and the exposure residual are standard normal.
    r = x_obs_ - nu0.head(nobs);
    u.head(nobs) = c * r + s * w.head(nobs);
    u.tail(nmis) = w.tail(nmis);
    xc.tail(nmis) = nu0.tail(nmis) + delta * w.tail(nmis) + sigma_x * xz;
    t.prior += -0.5 * static_cast<double>(n) * kLog2Pi - 0.5 * w.squaredNorm();
    t.exposure = -0.5 * static_cast<double>(nobs) * (kLog2Pi + std::log(var)) - 0.5 * r.squaredNorm() / var -
                 0.5 * static_cast<double>(nmis) * kLog2Pi - 0.5 * xz.squaredNorm();
  } else {
    u = w;
    xc.tail(nmis) = xz;
    t.prior += -0.5 * static_cast<double>(n) * kLog2Pi - 0.5 * u.squaredNorm();
    ex = xc - nu0 - delta * u;
    t.exposure = -static_cast<double>(n) * (0.5 * kLog2Pi + std::log(sigma_x)) - 0.5 * ex.squaredNorm() / (sigma_x * sigma_x);
  }

  // Outcome.
  Eigen::VectorXd eta = data_.z * beta;
  eta.array() += omega;
  eta += theta * xc + u;
  if (family) eta += data_.family_design * gamma_y;
  Eigen::VectorXd correction;
  if (kin) {
    correction = v.segment(o_corr, n);
    eta += nc_correction ? correction_prior_.multiply(correction) : correction;
  }
  Eigen::VectorXd resid_y(n);  // y - p
  double ll_y = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    ll_y += y_(i) * eta(i) - softplus(eta(i));
    resid_y(i) = y_(i) - logistic(eta(i));
  }
  t.outcome = ll_y;

  if (kin && nc_correction) {
    t.correction = -0.5 * static_cast<double>(n) * kLog2Pi - 0.5 * correction.squaredNorm();
    if (grad) grad->segment(o_corr, n) += -correction + correction_prior_.multiply_transpose(resid_y);
  } else if (kin) {
    Eigen::VectorXd corr_grad;
    if (grad) corr_grad = Eigen::VectorXd::Zero(n);
    t.correction = correction_prior_.log_density(correction, grad ? &corr_grad : nullptr);
    if (grad) grad->segment(o_corr, n) += corr_grad + resid_y;
  }

  if (terms) *terms = t;
  const double total = t.total();
  if (!std::isfinite(total)) return kNegInf;
  if (!grad) return total;

  auto& g = *grad;
  g(o_theta) += cauchy_dlpdf(theta, cs) + xc.dot(resid_y);
  g(o_omega) += resid_y.sum();

  Eigen::VectorXd g_nu0(n);
  double g_delta = 0.0, g_sigma = 0.0;
  if (nc_latent) {
    const double v32 = var * std::sqrt(var);
    const double dc_ddelta = (sigma_x * sigma_x - delta * delta) / (var * var);
    const double dc_dsigma = -2.0 * delta * sigma_x / (var * var);
    const double ds_ddelta = -sigma_x * delta / v32;
    const double ds_dsigma = delta * delta / v32;
    const auto w_obs = w.head(nobs);
    const auto g_u = resid_y.head(nobs);
    g_nu0.head(nobs) = r / var - c * g_u;
    g.segment(o_u, nobs) += -w_obs + s * g_u;
    const double dvar = 0.5 * (r.squaredNorm() / var - static_cast<double>(nobs)) / var;  // d/d(var)
    g_delta += 2.0 * delta * dvar + g_u.dot(dc_ddelta * r + ds_ddelta * w_obs);
    g_sigma += 2.0 * sigma_x * dvar + g_u.dot(dc_dsigma * r + ds_dsigma * w_obs);

    const auto w_mis = w.tail(nmis);
    const Eigen::VectorXd g_x = theta * resid_y.tail(nmis);
    g_nu0.tail(nmis) = g_x;
    g.segment(o_u + nobs, nmis) += -w_mis + resid_y.tail(nmis) + delta * g_x;
    g.segment(o_xm, nmis) += -xz + sigma_x * g_x;
    g_delta += g_x.dot(w_mis);
    g_sigma += g_x.dot(xz);
  } else {
    // Partial derivatives holding u and the completed exposure fixed.
    const Eigen::VectorXd rx = ex / (sigma_x * sigma_x);
    g_nu0 = rx;
    g_delta = u.dot(rx);
    g_sigma = (-static_cast<double>(n) + ex.squaredNorm() / (sigma_x * sigma_x)) / sigma_x;
    g.segment(o_u, n) += -u + delta * rx + resid_y;
    g.segment(o_xm, nmis) += -rx.tail(nmis) + theta * resid_y.tail(nmis);
  }
  g(o_delta) += g_delta;
  g(o_sx) += sigma_x * g_sigma + 1.0;

  // alpha: Laplace prior and exposure mean
  const Eigen::VectorXd zt_nu0 = data_.z.transpose() * g_nu0;
  double abs_sum = 0.0;
  for (Eigen::Index k = 0; k < j; ++k) {
    const double a = alpha(k);
    const double sgn = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
    g(o_alpha + k) += zt_nu0(k) - sgn / sigma_alpha;
    abs_sum += std::abs(a);
  }
  g(o_sa) += -static_cast<double>(j) + abs_sum / sigma_alpha + 1.0;

  // pleiotropy through beta = z * lambda * tau; m0 is piecewise constant in pleio_frac
  const Eigen::VectorXd dbeta = data_.z.transpose() * resid_y;
  const Eigen::ArrayXd dbeta_beta = dbeta.array() * beta.array();
  g.segment(o_z, j) += (-zaux.array() + dbeta.array() * lambda * tau).matrix();
  g.segment(o_r1l, j) += (-r1l.square() + 1.0 + dbeta_beta).matrix();
  g.segment(o_r2l, j) += (-(a_loc + 1.0) + a_loc / r2l + 1.0 + 0.5 * dbeta_beta).matrix();
  g(o_r1g) += dlog_r1g + 1.0 + dbeta_beta.sum();
  g(o_r2g) += -(a_glob + 1.0) + a_glob / r2g + 1.0 + 0.5 * dbeta_beta.sum();
  g(o_pf) += 1.0 - 2.0 * logistic(pf_raw);

  if (family) {
    const auto m = static_cast<Eigen::Index>(data_.m());
    Eigen::VectorXd fx = data_.family_design.transpose() * g_nu0;
    Eigen::VectorXd fy = data_.family_design.transpose() * resid_y;
    for (Eigen::Index f = 0; f < m; ++f) {
      fx(f) += cauchy_dlpdf(gamma_x(f), cs);
      fy(f) += cauchy_dlpdf(gamma_y(f), cs);
    }
    if (rotated) {
      fx = family_rotation_.transpose() * fx;
      fy = family_rotation_.transpose() * fy;
    }
    g.segment(off(rotated ? "gamma_x_q" : "gamma_x"), m) += fx;
    g.segment(off(rotated ? "gamma_y_q" : "gamma_y"), m) += fy;
  }
  if (parental) {
    // d a / d raw = 2 s (1 - s); the Jacobian contributes 1 - 2 s.
    const double s_mo = logistic(a_mo_raw), s_fa = logistic(a_fa_raw);
    g(off("alpha_mother")) += data_.mother_x.dot(g_nu0) * 2.0 * s_mo * (1.0 - s_mo) + 1.0 - 2.0 * s_mo;
    g(off("alpha_father")) += data_.father_x.dot(g_nu0) * 2.0 * s_fa * (1.0 - s_fa) + 1.0 - 2.0 * s_fa;
  }
  if (!g.allFinite()) return kNegInf;
  return total;
}

std::vector<std::string> PosteriorModel::quantity_names() const {
  std::vector<std::string> names;
  for (const auto& b : layout_.blocks()) {
    std::string name = b.name;
    if (name == "u_z") name = "u";
    else if (name == "x_mis_z") name = "x_mis";
    else if (name == "correction_z") name = "correction";
    else if (name == "pleio_frac_u") name = "pleio_frac";
    else if (name == "gamma_x_q") name = "gamma_x";
    else if (name == "gamma_y_q") name = "gamma_y";
    if (b.size == 1 && name != "alpha" && name != "z" && name != "u" && name != "x_mis" && name != "correction" &&
        name.find("_local") == std::string::npos && name.find("gamma_") == std::string::npos)
      names.push_back(name);
    else
      for (std::size_t k = 0; k < b.size; ++k) names.push_back(name + "[" + std::to_string(k + 1) + "]");
  }
  const auto j = data_.j();
  for (std::size_t k = 0; k < j; ++k) names.push_back("beta[" + std::to_string(k + 1) + "]");
  for (std::size_t k = 0; k < j; ++k) names.push_back("lambda[" + std::to_string(k + 1) + "]");
  names.push_back("tau");
  names.push_back("m0");
  names.push_back("scale_global");
  if (family_rotation_.size() > 0 || layout_.has("gamma_x"))
    for (std::size_t f = 0; f < data_.m(); ++f) names.push_back("indirect[" + std::to_string(f + 1) + "]");
  return names;
}

Eigen::VectorXd PosteriorModel::quantities(const Eigen::VectorXd& v) const {
  const auto p = natural(v);
  Eigen::VectorXd q(static_cast<Eigen::Index>(layout_.dim() + 2 * data_.j() + 3 + (data_.m() * (layout_.has("gamma_x") || layout_.has("gamma_x_q")))));
  Eigen::Index pos = 0;
  auto put = [&](const Eigen::VectorXd& x) {
    q.segment(pos, x.size()) = x;
    pos += x.size();
  };
  auto put1 = [&](double x) { q(pos++) = x; };
  for (const auto& b : layout_.blocks()) {
    const auto& name = b.name;
    if (name == "theta") put1(p.theta);
    else if (name == "omega_y") put1(p.omega_y);
    else if (name == "delta_x") put1(p.delta_x);
    else if (name == "sigma_x") put1(p.sigma_x);
    else if (name == "sigma_alpha") put1(p.sigma_alpha);
    else if (name == "pleio_frac" || name == "pleio_frac_u") put1(p.pleio_frac);
    else if (name == "alpha") put(p.alpha);
    else if (name == "z") put(p.z_aux);
    else if (name == "r1_local") put(p.r1_local);
    else if (name == "r2_local") put(p.r2_local);
    else if (name == "r1_global") put1(p.r1_global);
    else if (name == "r2_global") put1(p.r2_global);
    else if (name == "u" || name == "u_z") put(p.u);
    else if (name == "x_mis" || name == "x_mis_z") put(p.x_mis);
    else if (name == "gamma_x" || name == "gamma_x_q") put(p.gamma_x);
    else if (name == "gamma_y" || name == "gamma_y_q") put(p.gamma_y);
    else if (name == "alpha_mother") put1(p.alpha_mother);
    else if (name == "alpha_father") put1(p.alpha_father);
    else if (name == "correction" || name == "correction_z") put(p.correction);
  }
  put(p.beta());
  put(p.lambda());
  put1(p.tau());
  put1(expected_pleiotropic(data_.j(), p.pleio_frac));
  put1(global_scale(data_.n(), data_.j(), p.pleio_frac));
  if (p.gamma_x.size() > 0) put(p.gamma_x * p.theta);
  return q;
}

double PosteriorModel::global_scale_mixture(double r1g, double* r1g_dlog) const {
  double top = kNegInf;
  std::vector<double> terms(pleio_mix_.size());
  for (std::size_t k = 0; k < pleio_mix_.size(); ++k) {
    const auto& c = pleio_mix_[k];
    terms[k] = c.log_weight + kLog2 - 0.5 * kLog2Pi - std::log(c.scale) - 0.5 * (r1g / c.scale) * (r1g / c.scale);
    top = std::max(top, terms[k]);
  }
  if (!std::isfinite(top)) return kNegInf;
  double sum = 0.0, d = 0.0;
  for (std::size_t k = 0; k < pleio_mix_.size(); ++k) {
    const double w = std::exp(terms[k] - top);
    sum += w;
    d += w * -(r1g * r1g) / (pleio_mix_[k].scale * pleio_mix_[k].scale);
  }
  if (r1g_dlog) *r1g_dlog = d / sum;
  return top + std::log(sum);
}

double PosteriorModel::pleio_from_uniform(double u, double r1g) const {
  if (pleio_mix_.empty()) return cfg_.pleio_frac_lower + u * (cfg_.pleio_frac_upper - cfg_.pleio_frac_lower);
  const double total = global_scale_mixture(r1g, nullptr);
  double cum = 0.0;
  for (const auto& c : pleio_mix_) {
    const double mass = std::exp(c.log_weight + kLog2 - 0.5 * kLog2Pi - std::log(c.scale) -
                                 0.5 * (r1g / c.scale) * (r1g / c.scale) - total);
    if (u <= cum + mass || &c == &pleio_mix_.back()) {
      const double within = mass > 0.0 ? std::clamp((u - cum) / mass, 0.0, 1.0) : 0.5;
      return c.left + within * c.width;
    }
    cum += mass;
  }
  return pleio_mix_.back().left;
}

double log_posterior(const Eigen::VectorXd& v, const dataset::MRDataset& d, const Eigen::MatrixXd& relationship_cholesky,
                     const ModelConfig& cfg) {
  return PosteriorModel(d, relationship_cholesky, cfg).log_density(v);
}

Eigen::VectorXd grad_log_posterior(const Eigen::VectorXd& v, const dataset::MRDataset& d,
                                   const Eigen::MatrixXd& relationship_cholesky, const ModelConfig& cfg) {
  Eigen::VectorXd g;
  PosteriorModel(d, relationship_cholesky, cfg).log_density_gradient(v, g);
  return g;
}

Eigen::VectorXd init_params(const Layout& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::normal_distribution<double> small(0.0, 0.1);
  Eigen::VectorXd v(static_cast<Eigen::Index>(layout.dim()));
  for (const auto& b : layout.blocks()) {
    for (std::size_t k = 0; k < b.size; ++k) {
      const auto i = static_cast<Eigen::Index>(b.offset + k);
      if (b.name == "x_mis" || b.name == "x_mis_z") v(i) = 0.0;
      else if (b.name == "u" || b.name == "u_z" || b.name == "correction" || b.name == "correction_z") v(i) = small(rng);
      else v(i) = unif(rng);
    }
  }
  return v;
}

Eigen::VectorXd init_params(const ModelConfig& cfg, const dataset::MRDataset& d, std::uint64_t seed) {
  return init_params(Layout::create(cfg, d.n(), d.j(), d.m(), d.n_mis()), seed);
}

}  // namespace pedmr::bayes
