#pragma once

#include "guidance_lab/analytic_models.hpp"
#include "guidance_lab/cfgig.hpp"
#include "guidance_lab/guidance.hpp"
#include "guidance_lab/schedule.hpp"
#include "guidance_lab/solvers.hpp"

#include "json.hpp"

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace guidance_lab {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

namespace config_detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, "unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  require(j.contains(key), "missing key '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error("key '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

inline Vec to_vec(const json& j, const std::string& where) {
  require(j.is_array() && !j.empty() && j.size() <= static_cast<std::size_t>(kMaxDim), where + " must be a vector of length 1..3");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), where + " entries must be numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Mat to_mat(const json& j, const std::string& where) {
  require(j.is_array() && !j.empty() && j.size() <= static_cast<std::size_t>(kMaxDim), where + " must be a matrix with 1..3 rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  require(cols >= 1 && cols <= static_cast<std::size_t>(kMaxDim), where + " must be a matrix with 1..3 columns");
  Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    require(j[r].is_array() && j[r].size() == cols, where + " rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c) {
      require(j[r][c].is_number(), where + " entries must be numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

/// Covariance given as a scalar (isotropic), a vector (diagonal) or a matrix.
inline Mat to_cov(const json& j, int dim, const std::string& where) {
  if (j.is_number()) return Mat::Identity(dim, dim) * j.get<double>();
  if (j.is_array() && !j.empty() && j[0].is_number()) {
    const Vec d = to_vec(j, where);
    require(d.size() == dim, where + " diagonal length must match the dimension");
    return d.asDiagonal();
  }
  return to_mat(j, where);
}

inline GaussianMixture parse_mixture(const json& j, const std::string& where) {
  check_keys(j, {"weights", "means", "covariances"}, where);
  const auto weights = get<std::vector<double>>(j, "weights", where);
  const json& means = j.at("means");
  const json& covs = j.at("covariances");
  require(means.is_array() && covs.is_array(), where + ": means and covariances must be arrays");
  require(means.size() == weights.size() && covs.size() == weights.size(),
          where + ": weights, means and covariances must have equal length");
  std::vector<Vec> mu;
  std::vector<Mat> cov;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    mu.push_back(means[k].is_number() ? scalar_vec(means[k].get<double>()) : to_vec(means[k], where + ".means"));
    cov.push_back(to_cov(covs[k], static_cast<int>(mu.back().size()), where + ".covariances"));
  }
  return GaussianMixture(weights, std::move(mu), std::move(cov));
}

}  // namespace config_detail

/// Target from {"prior": mixture, "classifier": {...}}.
inline AnalyticTarget parse_target(const json& j) {
  using namespace config_detail;
  check_keys(j, {"prior", "classifier"}, "target");
  const json& cls = j.at("classifier");
  const auto type = get<std::string>(cls, "type", "target.classifier");
  if (type == "linear_gaussian") {
    check_keys(cls, {"type", "A", "gamma"}, "target.classifier");
    require(j.contains("prior"), "a linear-Gaussian target needs a prior");
    GaussianMixture prior = parse_mixture(j.at("prior"), "target.prior");
    const Mat A = cls.contains("A") ? to_mat(cls.at("A"), "target.classifier.A") : Mat::Identity(prior.dim(), prior.dim());
    return AnalyticTarget(std::move(prior), LinearGaussianClassifier{A, get<double>(cls, "gamma", "target.classifier")});
  }
  if (type == "class_mixture") {
    check_keys(cls, {"type", "class_priors", "class_conditionals"}, "target.classifier");
    require(!j.contains("prior"), "a class-mixture target derives its prior; remove target.prior");
    ClassMixtureClassifier cm;
    cm.class_priors = get<std::vector<double>>(cls, "class_priors", "target.classifier");
    const json& conds = cls.at("class_conditionals");
    require(conds.is_array(), "class_conditionals must be an array");
    for (std::size_t i = 0; i < conds.size(); ++i) {
      cm.class_conditionals.push_back(parse_mixture(conds[i], "class_conditionals[" + std::to_string(i) + "]"));
    }
    return AnalyticTarget(std::move(cm));
  }
  throw config_error("unknown classifier type '" + type + "' (expected linear_gaussian or class_mixture)");
}

inline Context parse_context(const json& j, const AnalyticTarget& target) {
  Context c;
  if (j.is_number_integer() && target.class_mixture() != nullptr) {
    c = j.get<int>();
  } else if (j.is_number()) {
    c = scalar_vec(j.get<double>());
  } else {
    c = config_detail::to_vec(j, "context");
  }
  target.check_context(c);
  return c;
}

inline GuidanceSpec parse_guidance(const json& j) {
  using namespace config_detail;
  check_keys(j, {"kind", "w", "sigma_lo", "sigma_hi", "lambda", "delta"}, "guidance");
  GuidanceSpec g;
  g.kind = parse_guidance_kind(get<std::string>(j, "kind", "guidance"));
  g.w = get_or(j, "w", 1.0, "guidance");
  g.sigma_lo = get_or(j, "sigma_lo", 0.0, "guidance");
  g.sigma_hi = get_or(j, "sigma_hi", 0.0, "guidance");
  g.lambda = get_or(j, "lambda", 0.0, "guidance");
  g.delta = get_or(j, "delta", 0.0, "guidance");
  g.validate();
  return g;
}

struct ScheduleSpec {
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  int steps = 64;
  double rho = 7.0;

  NoiseSchedule build() const { return karras_sigmas(sigma_min, sigma_max, steps, rho); }
};

inline ScheduleSpec parse_schedule(const json& j, bool needs_steps) {
  using namespace config_detail;
  check_keys(j, {"sigma_min", "sigma_max", "steps", "rho"}, "schedule");
  ScheduleSpec s;
  s.sigma_min = get_or(j, "sigma_min", s.sigma_min, "schedule");
  s.sigma_max = get_or(j, "sigma_max", s.sigma_max, "schedule");
  s.rho = get_or(j, "rho", s.rho, "schedule");
  if (needs_steps) {
    s.steps = get<int>(j, "steps", "schedule");
    (void)s.build();  // validates
  } else {
    require(!j.contains("steps"), "the CFGiG schedule takes its step counts from T, T0 and R; remove schedule.steps");
  }
  return s;
}

inline json schedule_to_json(const NoiseSchedule& s) { return json(s.sigmas()); }

enum class SamplerType { ode, cfgig, smc, reference };

struct SamplerSpec {
  SamplerType type = SamplerType::ode;
  SolverMethod method = SolverMethod::heun;
  ScheduleSpec schedule;
  CfgigConfig cfgig;
  bool exact_gaussian_flow = false;
};

struct MetricsSpec {
  bool enabled = true;
  std::size_t reference_samples = 0;  // 0: as many as the ensemble
  double mode_threshold = 0.0;
  int prdc_k = 3;
};

struct OutputSpec {
  bool trajectory = false;
  std::size_t trajectory_chains = 1000;
  std::size_t trajectory_cap = 1000000;
  bool iterates = false;
};

struct ExperimentConfig {
  json raw;
  AnalyticTarget target;
  Context context;
  std::optional<GuidanceSpec> guidance;
  SamplerSpec sampler;
  std::size_t chains = 1000;
  std::uint64_t seed = 0;
  MetricsSpec metrics;
  OutputSpec output;
};

struct GaussianTheoryConfig {
  json raw;
  double gamma = 1.0;
  double w = 2.0;
  std::vector<double> sigma_star;
  std::vector<long> R;
};

namespace config_detail {

inline std::vector<double> parse_grid(const json& j, const std::string& where) {
  if (j.is_array()) return j.get<std::vector<double>>();
  check_keys(j, {"from", "to", "count"}, where);
  const double from = get<double>(j, "from", where);
  const double to = get<double>(j, "to", where);
  const int count = get<int>(j, "count", where);
  require(count >= 2 && to > from, where + " needs count >= 2 and to > from");
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = from + (to - from) * i / (count - 1);
  return g;
}

inline void check_gaussian_case(const ExperimentConfig& c) {
  const auto* lg = c.target.linear_gaussian();
  const GaussianMixture& p = c.target.prior();
  const bool standard_prior = p.dim() == 1 && p.size() == 1 && p.means()[0](0) == 0.0 && p.covariances()[0](0, 0) == 1.0;
  require(lg != nullptr && standard_prior && lg->A.size() == 1 && lg->A(0, 0) == 1.0,
          "exact_gaussian_flow needs prior N(0, 1) and a scalar linear-Gaussian classifier with A = 1");
  require(std::get<Vec>(c.context)(0) == 0.0, "exact_gaussian_flow needs context 0");
}

}  // namespace config_detail

inline std::string experiment_kind(const json& j) {
  return j.contains("experiment") ? j.at("experiment").get<std::string>() : std::string("sample");
}

inline ExperimentConfig parse_experiment(const json& j) {
  using namespace config_detail;
  check_keys(j, {"schema_version", "experiment", "description", "target", "context", "guidance", "sampler", "chains",
                 "seed", "metrics", "output"},
             "experiment config");
  require(get<int>(j, "schema_version", "experiment config") == kSchemaVersion,
          "unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
  require(experiment_kind(j) == "sample", "this is not a sampling experiment config");
  AnalyticTarget target = parse_target(j.at("target"));
  Context context = parse_context(j.at("context"), target);
  ExperimentConfig cfg{j, std::move(target), std::move(context), std::nullopt, SamplerSpec{}, 1000, 0, MetricsSpec{}, OutputSpec{}};
  cfg.chains = get_or<std::size_t>(j, "chains", cfg.chains, "experiment config");
  require(cfg.chains >= 1, "chains must be >= 1");
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0, "experiment config");

  const json& s = j.at("sampler");
  const auto type = get<std::string>(s, "type", "sampler");
  if (type == "ode") {
    check_keys(s, {"type", "method", "schedule"}, "sampler");
    cfg.sampler.type = SamplerType::ode;
    cfg.sampler.method = parse_solver_method(get_or<std::string>(s, "method", "heun", "sampler"));
    cfg.sampler.schedule = parse_schedule(s.at("schedule"), true);
    require(j.contains("guidance"), "an ode sampler needs a guidance block");
    cfg.guidance = parse_guidance(j.at("guidance"));
  } else if (type == "cfgig") {
    check_keys(s, {"type", "method", "schedule", "w0", "w", "R", "T", "T0", "sigma_star", "exact_gaussian_flow"},
               "sampler");
    cfg.sampler.type = SamplerType::cfgig;
    cfg.sampler.method = parse_solver_method(get_or<std::string>(s, "method", "heun", "sampler"));
    const ScheduleSpec sched = parse_schedule(s.value("schedule", json::object()), false);
    CfgigConfig& c = cfg.sampler.cfgig;
    c.w0 = get_or(s, "w0", 1.0, "sampler");
    c.w = get<double>(s, "w", "sampler");
    c.R = get<int>(s, "R", "sampler");
    c.T = get<int>(s, "T", "sampler");
    c.T0 = get<int>(s, "T0", "sampler");
    c.sigma_star = get<double>(s, "sigma_star", "sampler");
    c.sigma_min = sched.sigma_min;
    c.sigma_max = sched.sigma_max;
    c.rho = sched.rho;
    c.method = cfg.sampler.method;
    c.validate();
    cfg.sampler.exact_gaussian_flow = get_or(s, "exact_gaussian_flow", false, "sampler");
    if (cfg.sampler.exact_gaussian_flow) check_gaussian_case(cfg);
    require(!j.contains("guidance"), "the CFGiG sampler takes its scales from sampler.w0 and sampler.w; remove guidance");
  } else if (type == "smc") {
    check_keys(s, {"type", "schedule", "w"}, "sampler");
    cfg.sampler.type = SamplerType::smc;
    cfg.sampler.schedule = parse_schedule(s.at("schedule"), true);
    cfg.guidance = GuidanceSpec::cfg(get<double>(s, "w", "sampler"));
    require(cfg.chains >= 2, "the SMC sampler needs chains (particles) >= 2");
    require(!j.contains("guidance"), "the SMC sampler takes its scale from sampler.w; remove guidance");
  } else if (type == "reference") {
    check_keys(s, {"type", "w"}, "sampler");
    cfg.sampler.type = SamplerType::reference;
    cfg.guidance = GuidanceSpec::ideal(get<double>(s, "w", "sampler"));
  } else {
    throw config_error("unknown sampler type '" + type + "' (expected ode, cfgig, smc or reference)");
  }

  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    check_keys(m, {"enabled", "reference_samples", "mode_threshold", "prdc_k"}, "metrics");
    cfg.metrics.enabled = get_or(m, "enabled", true, "metrics");
    cfg.metrics.reference_samples = get_or<std::size_t>(m, "reference_samples", 0, "metrics");
    cfg.metrics.mode_threshold = get_or(m, "mode_threshold", 0.0, "metrics");
    cfg.metrics.prdc_k = get_or(m, "prdc_k", 3, "metrics");
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    check_keys(o, {"trajectory", "trajectory_chains", "trajectory_cap", "iterates"}, "output");
    cfg.output.trajectory = get_or(o, "trajectory", false, "output");
    cfg.output.trajectory_chains = get_or<std::size_t>(o, "trajectory_chains", 1000, "output");
    cfg.output.trajectory_cap = get_or<std::size_t>(o, "trajectory_cap", 1000000, "output");
    cfg.output.iterates = get_or(o, "iterates", false, "output");
  }
  return cfg;
}

inline GaussianTheoryConfig parse_gaussian_theory(const json& j) {
  using namespace config_detail;
  check_keys(j, {"schema_version", "experiment", "description", "gamma", "w", "sigma_star", "R"}, "gaussian-theory config");
  require(get<int>(j, "schema_version", "gaussian-theory config") == kSchemaVersion, "unsupported schema_version");
  GaussianTheoryConfig g;
  g.raw = j;
  g.gamma = get_or(j, "gamma", 1.0, "gaussian-theory config");
  g.w = get_or(j, "w", 2.0, "gaussian-theory config");
  require_positive(g.gamma, "gamma");
  require(std::isfinite(g.w) && g.w > 1.0, "gaussian-theory needs w > 1");
  g.sigma_star = j.contains("sigma_star") ? parse_grid(j.at("sigma_star"), "sigma_star")
                                          : parse_grid(json{{"from", 0.05}, {"to", 3.0}, {"count", 60}}, "sigma_star");
  for (double s : g.sigma_star) require_positive(s, "sigma_star grid value");
  g.R = get_or<std::vector<long>>(j, "R", {1, 2, 5, 10, 50, 1000}, "gaussian-theory config");
  for (long r : g.R) require(r >= 0, "R values must be >= 0");
  return g;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw config_error("config '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace guidance_lab
