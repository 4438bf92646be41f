#pragma once

#include "guidance_lab/analytic_models.hpp"
#include "guidance_lab/cfgig.hpp"
#include "guidance_lab/config.hpp"
#include "guidance_lab/gaussian_theory.hpp"
#include "guidance_lab/guidance.hpp"
#include "guidance_lab/io.hpp"
#include "guidance_lab/metrics.hpp"
#include "guidance_lab/parallel.hpp"
#include "guidance_lab/presets.hpp"
#include "guidance_lab/smc.hpp"
#include "guidance_lab/solvers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace guidance_lab {

struct RunOptions {
  std::filesystem::path out_dir = "out";
  unsigned threads = 1;
  std::optional<std::uint64_t> seed;
};

/// What a run leaves behind: the summary written to metrics.json and the
/// manifest that reproduces it.
struct RunReport {
  json summary;
  json manifest;
};

namespace experiment_detail {

inline json versions() {
  return {{"guidance_lab", std::string(kVersion)},
          {"schema_version", kSchemaVersion},
          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
          {"fmt", FMT_VERSION},
          {"compiler", __VERSION__}};
}

/// Manifest for `config`; `artifacts` maps file names to FNV-1a hashes.
inline json make_manifest(const json& config, std::uint64_t seed, const json& artifacts) {
  return {{"manifest_version", 1},
          {"tool", "guidance-lab"},
          {"config", config},
          {"config_hash", config_hash(config)},
          {"seed", seed},
          {"versions", versions()},
          {"artifacts", artifacts}};
}

/// Probability mass of the 1D tilt below `t`, or nullopt when not computable.
inline std::optional<double> oracle_mass_below(const AnalyticTarget& target, const Context& c, double w, double t) {
  if (target.dim() != 1) return std::nullopt;
  if (w == 0.0 || target.linear_gaussian() != nullptr || w == 1.0) {
    const GaussianMixture g = w == 0.0 ? target.prior() : tilted_gmm(target, c, w);
    double mass = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double sd = std::sqrt(g.covariances()[k](0, 0));
      mass += g.weights()[k] * 0.5 * std::erfc(-(t - g.means()[k](0)) / (sd * std::sqrt(2.0)));
    }
    return mass;
  }
  const DensityOnBox tilt = tilted_density(target, c, w);
  const double lo = tilt.support.lo(0);
  if (t <= lo) return 0.0;
  const double hi = std::min(t, tilt.support.hi(0));
  return integrate_adaptive([&](double y) { return tilt.density(scalar_vec(y)); }, lo, hi).value;
}

/// Independent draws from the law a sampler aims at: the prior for w = 0,
/// the normalized tilt otherwise.
inline ReferenceSample reference_draws(const AnalyticTarget& target, const Context& c, double w, std::size_t n,
                                       std::uint64_t seed) {
  if (w == 0.0) {
    ReferenceSample out;
    out.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      StreamRng rng(seed, i);
      out.points[i] = target.prior().sample(rng);
    }
    out.ess = static_cast<double>(n);
    return out;
  }
  return sample_reference(target, c, w, n, seed);
}

inline json moments_json(const SampleSet& s, int j) {
  const Moments m = moments(s, j);
  return {{"mean", m.mean}, {"variance", m.variance}};
}

}  // namespace experiment_detail

/// The tilt exponent a configuration is meant to sample.
inline double target_scale(const ExperimentConfig& cfg) {
  switch (cfg.sampler.type) {
    case SamplerType::cfgig:
      return cfg.sampler.cfgig.w;
    case SamplerType::ode:
      switch (cfg.guidance->kind) {
        case GuidanceKind::unconditional:
          return 0.0;
        case GuidanceKind::conditional:
        case GuidanceKind::cfg_pp:
          return 1.0;
        default:
          return cfg.guidance->w;
      }
    default:
      return cfg.guidance->w;
  }
}

/// Sample-quality metrics of `samples` against fresh reference draws from the
/// tilt with exponent `w`.
inline json sample_metrics(const AnalyticTarget& target, const Context& c, double w, const std::vector<Vec>& samples,
                           const MetricsSpec& spec, std::uint64_t seed, unsigned threads, json& warnings) {
  using namespace experiment_detail;
  const std::size_t m = spec.reference_samples > 0 ? spec.reference_samples : samples.size();
  const ReferenceSample ref = reference_draws(target, c, w, m, StreamRng::derive(seed, 0x7265666572656e63ULL, 0));
  if (ref.low_ess) warnings.push_back(fmt::format("reference sampler ESS {:.1f} is below n/10", ref.ess));
  const SampleSet gen{samples, "samples"};
  const SampleSet oracle{ref.points, "reference"};
  gen.validate();

  json out;
  out["tilt_w"] = w;
  out["reference"] = {{"n", m}, {"ess", ref.ess}, {"low_ess", ref.low_ess}};
  json coords = json::array();
  for (int j = 0; j < gen.dim(); ++j) {
    const SampleSet a = SampleSet::from_scalars(gen.coordinate(j));
    const SampleSet b = SampleSet::from_scalars(oracle.coordinate(j));
    const double ks = ks_statistic(a, b);
    coords.push_back({{"coordinate", j + 1},
                      {"samples", moments_json(gen, j)},
                      {"reference", moments_json(oracle, j)},
                      {"w2", wasserstein2_1d(a, b)},
                      {"ks", ks},
                      {"ks_pvalue", ks_pvalue(ks, a.size(), b.size())}});
  }
  out["coordinates"] = coords;

  if (w == 0.0 || target.linear_gaussian() != nullptr || w == 1.0) {
    const GaussianMixture g = w == 0.0 ? target.prior() : tilted_gmm(target, c, w);
    const Vec mu = g.mean();
    const Mat cov = g.covariance();
    json exact = json::array();
    for (int j = 0; j < gen.dim(); ++j) exact.push_back({{"mean", mu(j)}, {"variance", cov(j, j)}});
    out["exact"] = exact;
  }

  json mass = {{"threshold", spec.mode_threshold},
               {"samples", mode_mass_below(gen, spec.mode_threshold)},
               {"reference", mode_mass_below(oracle, spec.mode_threshold)}};
  if (auto exact = oracle_mass_below(target, c, w, spec.mode_threshold)) mass["exact"] = *exact;
  out["mass_below"] = mass;

  if (spec.prdc_k >= 1 && static_cast<std::size_t>(spec.prdc_k) < std::min(gen.size(), oracle.size())) {
    const Prdc p = prdc(oracle, gen, spec.prdc_k, NeighborSearch::grid, threads);
    out["prdc"] = {{"k", spec.prdc_k},
                   {"precision", p.precision},
                   {"recall", p.recall},
                   {"density", p.density},
                   {"coverage", p.coverage}};
  } else {
    warnings.push_back("prdc skipped: k must be below both sample sizes");
  }
  return out;
}

/// Runs a sampling experiment and writes its artifacts into opt.out_dir.
/// Returns the summary; `artifacts` collects file name -> hash.
inline json run_sample_experiment(const ExperimentConfig& cfg, const RunOptions& opt, json& artifacts) {
  const std::filesystem::path dir = opt.out_dir;
  const std::size_t n = cfg.chains;
  const int d = cfg.target.dim();
  json info;
  json warnings = json::array();
  std::vector<Vec> samples(n);
  std::uint64_t iteration = 0;

  switch (cfg.sampler.type) {
    case SamplerType::ode: {
      const GuidanceSpec& g = *cfg.guidance;
      const std::optional<double> tilt = g.kind == GuidanceKind::ideal ? std::optional<double>(g.w) : std::nullopt;
      const TargetDenoisers src(cfg.target, cfg.context, tilt);
      const GuidedDenoiser<const TargetDenoisers&> den(src, g);
      const NoiseSchedule sched = cfg.sampler.schedule.build();
      const std::size_t n_traj = cfg.output.trajectory ? std::min(n, cfg.output.trajectory_chains) : 0;
      std::vector<std::vector<TrajectoryPoint>> paths(n_traj);
      std::vector<std::size_t> calls(n);
      parallel_for(n, opt.threads, [&](std::size_t i) {
        StreamRng rng(cfg.seed, i, 0);
        const SolverRun<const GuidedDenoiser<const TargetDenoisers&>&> run{
            sched, den, cfg.sampler.method, i < n_traj, cfg.output.trajectory_cap};
        FlowResult r = integrate_flow(sched.sigma_max() * rng.normal_vec(d), run);
        samples[i] = std::move(r.x);
        calls[i] = r.denoiser_calls;
        if (i < n_traj) paths[i] = std::move(r.trajectory);
      });
      if (n_traj > 0) artifacts["trajectory.csv"] = hash_hex(write_trajectory_csv(dir / "trajectory.csv", paths));
      info = {{"steps", sched.size()}, {"denoiser_calls_per_chain", calls.front()}, {"schedule", schedule_to_json(sched)}};
      break;
    }
    case SamplerType::cfgig: {
      CfgigConfig c = cfg.sampler.cfgig;
      c.seed = cfg.seed;
      const bool record = cfg.output.iterates;
      std::vector<ChainResult> chains;
      if (cfg.sampler.exact_gaussian_flow) {
        const ExactGaussianFlow flow{cfg.target.linear_gaussian()->gamma, c.w0, c.w};
        chains = cfgig_ensemble(flow, c, d, n, opt.threads, record);
      } else {
        const TargetDenoisers src(cfg.target, cfg.context);
        chains = cfgig_ensemble(make_cfg_flow(src, c), c, d, n, opt.threads, record);
      }
      for (std::size_t i = 0; i < n; ++i) samples[i] = chains[i].x;
      iteration = static_cast<std::uint64_t>(c.R);
      if (record) {
        std::vector<std::vector<Vec>> its(n);
        for (std::size_t i = 0; i < n; ++i) its[i] = std::move(chains[i].iterates);
        artifacts["iterates.csv"] = hash_hex(write_iterates_csv(dir / "iterates.csv", its));
      }
      info = {{"initial_steps", c.initial_steps()},
              {"refine_steps", c.refine_steps()},
              {"remainder", c.remainder()},
              {"total_steps", c.total_steps()},
              {"steps_per_chain", chains.front().steps},
              {"initial_schedule", schedule_to_json(c.initial_schedule())},
              {"refine_schedule", schedule_to_json(c.refine_schedule())}};
      break;
    }
    case SamplerType::smc: {
      const TargetDenoisers src(cfg.target, cfg.context);
      const NoiseSchedule sched = cfg.sampler.schedule.build();
      SmcConfig sc;
      sc.particles = n;
      sc.w = cfg.guidance->w;
      sc.seed = cfg.seed;
      sc.threads = opt.threads;
      const SmcResult r = fk_smc_sample(src, sched, sc);
      samples = r.resampled;
      iteration = sched.size();
      CsvWriter particles(dir / "particles.csv", coordinate_columns({"chain_id", "log_weight"}, d));
      for (std::size_t i = 0; i < n; ++i) particles.row({i}, {r.ensemble.log_weights[i]}, r.ensemble.states[i]);
      artifacts["particles.csv"] = hash_hex(particles.close());
      CsvWriter trace(dir / "ess_trace.csv", {"step", "sigma_from", "sigma_to", "ess", "resampled"});
      std::size_t next = 0;
      for (std::size_t s = 0; s < r.ess_trace.size(); ++s) {
        const bool res = next < r.resample_steps.size() && r.resample_steps[next] == s;
        if (res) ++next;
        trace.line({std::to_string(s), format_double(sched[s]), format_double(sched[s + 1]),
                    format_double(r.ess_trace[s]), res ? "1" : "0"});
      }
      artifacts["ess_trace.csv"] = hash_hex(trace.close());
      info = {{"steps", sched.size()},
              {"resample_count", r.resample_steps.size()},
              {"final_ess", r.ensemble.effective_size()},
              {"weighted_mean", json(std::vector<double>(r.ensemble.weighted_mean().data(),
                                                         r.ensemble.weighted_mean().data() + d))}};
      break;
    }
    case SamplerType::reference: {
      ReferenceSample ref = sample_reference(cfg.target, cfg.context, cfg.guidance->w, n, cfg.seed);
      samples = std::move(ref.points);
      if (ref.low_ess) warnings.push_back(fmt::format("reference sampler ESS {:.1f} is below n/10", ref.ess));
      info = {{"ess", ref.ess}, {"low_ess", ref.low_ess}};
      break;
    }
  }

  artifacts["samples.csv"] = hash_hex(write_samples_csv(dir / "samples.csv", samples, iteration));

  json summary = {{"experiment", "sample"},
                  {"sampler", cfg.raw.at("sampler").at("type")},
                  {"chains", n},
                  {"seed", cfg.seed},
                  {"info", info}};
  if (cfg.metrics.enabled) {
    summary["metrics"] = sample_metrics(cfg.target, cfg.context, target_scale(cfg), samples, cfg.metrics, cfg.seed,
                                        opt.threads, warnings);
  }
  summary["warnings"] = warnings;
  return summary;
}

/// (sigma*, R) grid of the Gaussian refinement chain: columns gamma, w,
/// sigma_star, R, c, V, V_inf, V_R, bias with bias = |V_R - V|.
inline json run_gaussian_theory(const GaussianTheoryConfig& g, const std::filesystem::path& dir, json& artifacts) {
  namespace gt = gaussian;
  const double v = gt::tilted_variance(g.gamma, g.w);
  CsvWriter csv(dir / "gaussian_theory.csv", {"gamma", "w", "sigma_star", "R", "c", "V", "V_inf", "V_R", "bias"});
  json best_r1;
  double best_bias = INFINITY;
  for (double s : g.sigma_star) {
    const double c = gt::flow_contraction(g.gamma, g.w, s);
    const double v_inf = gt::stationary_variance(g.gamma, g.w, s);
    for (long r : g.R) {
      const double v_r = gt::finite_r_variance(g.gamma, g.w, s, r);
      const double bias = std::abs(v_r - v);
      csv.line({format_double(g.gamma), format_double(g.w), format_double(s), std::to_string(r), format_double(c),
                format_double(v), format_double(v_inf), format_double(v_r), format_double(bias)});
      if (r == 1 && bias < best_bias) {
        best_bias = bias;
        best_r1 = {{"sigma_star", s}, {"bias", bias}};
      }
    }
  }
  artifacts["gaussian_theory.csv"] = hash_hex(csv.close());
  json summary = {{"experiment", "gaussian-theory"},
                  {"gamma", g.gamma},
                  {"w", g.w},
                  {"V", v},
                  {"rows", g.sigma_star.size() * g.R.size()}};
  if (!best_r1.is_null()) summary["best_sigma_star_R1"] = best_r1;
  return summary;
}

// ---------------------------------------------------------------------------
// Bimodal CFG-versus-tilt comparison

struct Figure2Params {
  std::uint64_t seed = 0;
  std::size_t samples = 10000;
  std::size_t trajectory_chains = 1000;
  int steps = 64;
  /// Exact draws from the tilt; large so W2 noise comes from the samplers only.
  std::size_t reference_samples = 1000000;
};

inline Figure2Params parse_figure2(const json& j) {
  using namespace config_detail;
  check_keys(j,
             {"schema_version", "experiment", "description", "seed", "samples", "trajectory_chains", "steps",
              "reference_samples"},
             "figure2 config");
  require(get<int>(j, "schema_version", "figure2 config") == kSchemaVersion, "unsupported schema_version");
  Figure2Params p;
  p.seed = get_or<std::uint64_t>(j, "seed", 0, "figure2 config");
  p.samples = get_or<std::size_t>(j, "samples", p.samples, "figure2 config");
  p.trajectory_chains = get_or<std::size_t>(j, "trajectory_chains", p.trajectory_chains, "figure2 config");
  p.steps = get_or(j, "steps", p.steps, "figure2 config");
  p.reference_samples = get_or<std::size_t>(j, "reference_samples", p.reference_samples, "figure2 config");
  require(p.reference_samples >= p.samples, "figure2 reference_samples cannot be below samples");
  require(p.samples >= 4, "figure2 needs samples >= 4");
  require(p.trajectory_chains <= p.samples, "figure2 trajectory_chains cannot exceed samples");
  require(p.steps >= 2, "figure2 needs steps >= 2");
  return p;
}

inline json figure2_default_config() {
  return {{"schema_version", kSchemaVersion},
          {"experiment", "figure2"},
          {"seed", 0},
          {"samples", 10000},
          {"trajectory_chains", 1000},
          {"steps", 64},
          {"reference_samples", 1000000}};
}

struct Figure2Result {
  std::vector<Vec> cfg, ideal, cfgig, reference;
  std::vector<std::vector<TrajectoryPoint>> cfg_paths, ideal_paths;
  double w2_cfg = 0.0, w2_ideal = 0.0, w2_cfgig = 0.0;
  double minor_cfg = 0.0, minor_ideal = 0.0, minor_cfgig = 0.0, minor_exact = 0.0;
};

/// CFG, ideal-tilt ODE and CFGiG samples on the bimodal toy against exact
/// draws from the tilt.
inline Figure2Result compute_figure2(const Figure2Params& p, unsigned threads) {
  const AnalyticTarget target = presets::canonical_bimodal();
  const Context c = scalar_vec(presets::Bimodal::context);
  const double w = presets::Bimodal::w;
  const TargetDenoisers src(target, c, w);
  const NoiseSchedule sched = karras_sigmas(0.002, 80.0, p.steps, 7.0);
  const GuidedDenoiser<const TargetDenoisers&> cfg_den(src, GuidanceSpec::cfg(w));
  const GuidedDenoiser<const TargetDenoisers&> ideal_den(src, GuidanceSpec::ideal(w));

  Figure2Result r;
  r.cfg.resize(p.samples);
  r.ideal.resize(p.samples);
  r.cfg_paths.resize(p.trajectory_chains);
  r.ideal_paths.resize(p.trajectory_chains);
  parallel_for(p.samples, threads, [&](std::size_t i) {
    StreamRng rng(p.seed, i, 0);
    const Vec x0 = sched.sigma_max() * rng.normal_vec(1);
    const bool rec = i < p.trajectory_chains;
    FlowResult a = integrate_flow(x0, SolverRun<const GuidedDenoiser<const TargetDenoisers&>&>{
                                          sched, cfg_den, SolverMethod::heun, rec});
    FlowResult b = integrate_flow(x0, SolverRun<const GuidedDenoiser<const TargetDenoisers&>&>{
                                          sched, ideal_den, SolverMethod::heun, rec});
    r.cfg[i] = a.x;
    r.ideal[i] = b.x;
    if (rec) {
      r.cfg_paths[i] = std::move(a.trajectory);
      r.ideal_paths[i] = std::move(b.trajectory);
    }
  });

  CfgigConfig gibbs = presets::bimodal_cfgig();
  gibbs.seed = p.seed;
  const std::vector<ChainResult> chains = cfgig_ensemble(make_cfg_flow(src, gibbs), gibbs, 1, p.samples, threads);
  r.cfgig.reserve(p.samples);
  for (const ChainResult& ch : chains) r.cfgig.push_back(ch.x);

  r.reference =
      sample_reference(target, c, w, p.reference_samples, StreamRng::derive(p.seed, 0x7265666572656e63ULL, 0)).points;

  const SampleSet ref{r.reference, "reference"};
  r.w2_cfg = wasserstein2_1d(SampleSet{r.cfg, "cfg"}, ref);
  r.w2_ideal = wasserstein2_1d(SampleSet{r.ideal, "ideal"}, ref);
  r.w2_cfgig = wasserstein2_1d(SampleSet{r.cfgig, "cfgig"}, ref);
  const double split = presets::Bimodal::mode_split;
  r.minor_cfg = mode_mass_below(SampleSet{r.cfg, "cfg"}, split);
  r.minor_ideal = mode_mass_below(SampleSet{r.ideal, "ideal"}, split);
  r.minor_cfgig = mode_mass_below(SampleSet{r.cfgig, "cfgig"}, split);
  r.minor_exact = *experiment_detail::oracle_mass_below(target, c, w, split);
  return r;
}

inline json run_figure2(const Figure2Params& p, const std::filesystem::path& dir, unsigned threads, json& artifacts) {
  const Figure2Result r = compute_figure2(p, threads);

  CsvWriter side(dir / "trajectories.csv", {"chain_id", "step_index", "sigma", "x_cfg", "x_ideal"});
  for (std::size_t i = 0; i < r.cfg_paths.size(); ++i) {
    for (std::size_t k = 0; k < r.cfg_paths[i].size(); ++k) {
      const TrajectoryPoint& a = r.cfg_paths[i][k];
      side.row({i, a.step}, {a.sigma, a.x(0), r.ideal_paths[i][k].x(0)}, Vec());
    }
  }
  artifacts["trajectories.csv"] = hash_hex(side.close());
  artifacts["trajectory_cfg.csv"] = hash_hex(write_trajectory_csv(dir / "trajectory_cfg.csv", r.cfg_paths));
  artifacts["trajectory_ideal.csv"] = hash_hex(write_trajectory_csv(dir / "trajectory_ideal.csv", r.ideal_paths));
  artifacts["samples_cfg.csv"] = hash_hex(write_samples_csv(dir / "samples_cfg.csv", r.cfg, 0));
  artifacts["samples_ideal.csv"] = hash_hex(write_samples_csv(dir / "samples_ideal.csv", r.ideal, 0));
  artifacts["samples_cfgig.csv"] =
      hash_hex(write_samples_csv(dir / "samples_cfgig.csv", r.cfgig, static_cast<std::uint64_t>(presets::bimodal_cfgig().R)));
  // The first `samples` reference draws; metrics use all of them.
  const std::vector<Vec> ref_head(r.reference.begin(), r.reference.begin() + static_cast<std::ptrdiff_t>(p.samples));
  artifacts["samples_reference.csv"] = hash_hex(write_samples_csv(dir / "samples_reference.csv", ref_head, 0));

  // Scores on a (sigma, x) grid: what CFG follows versus the tilt's own score.
  const AnalyticTarget target = presets::canonical_bimodal();
  const Context c = scalar_vec(presets::Bimodal::context);
  const double w = presets::Bimodal::w;
  CsvWriter scores(dir / "scores.csv", {"sigma", "x", "cfg_score", "tilted_score", "renyi_gradient"});
  for (double sigma : {0.05, 0.2, 0.5, 1.0, 2.0, 5.0}) {
    for (int k = 0; k <= 160; ++k) {
      const Vec x = scalar_vec(-4.0 + 0.05 * k);
      scores.line({format_double(sigma), format_double(x(0)), format_double(cfg_marginal_score(target, c, w, x, sigma)(0)),
                   format_double(tilted_smoothed_score(target, c, w, x, sigma)(0)),
                   format_double(renyi_gradient(target, c, w, x, sigma)(0))});
    }
  }
  artifacts["scores.csv"] = hash_hex(scores.close());

  return {{"experiment", "figure2"},
          {"samples", p.samples},
          {"reference_samples", p.reference_samples},
          {"trajectory_chains", p.trajectory_chains},
          {"w", w},
          {"w2", {{"cfg", r.w2_cfg}, {"ideal", r.w2_ideal}, {"cfgig", r.w2_cfgig}}},
          {"minor_mode_mass", {{"exact", r.minor_exact}, {"cfg", r.minor_cfg}, {"ideal", r.minor_ideal}, {"cfgig", r.minor_cfgig}}}};
}

// ---------------------------------------------------------------------------
// Dispatch

/// Accepts a config or a manifest (whose embedded config is used).
inline json resolve_config(const json& j) {
  if (j.is_object() && j.contains("manifest_version")) {
    require(j.contains("config"), "manifest has no embedded config");
    return j.at("config");
  }
  return j;
}

/// Runs any experiment kind, writing artifacts, metrics.json and manifest.json.
inline RunReport run_config(json config, const RunOptions& opt) {
  config = resolve_config(config);
  require(config.is_object(), "config must be a JSON object");
  const std::string kind = experiment_kind(config);
  if (opt.seed) {
    require(kind != "gaussian-theory", "gaussian-theory is deterministic and takes no seed");
    config["seed"] = *opt.seed;
  }
  // Validate before touching the file system.
  std::optional<ExperimentConfig> sample;
  std::optional<GaussianTheoryConfig> theory;
  std::optional<Figure2Params> fig;
  if (kind == "sample") {
    sample = parse_experiment(config);
  } else if (kind == "gaussian-theory") {
    theory = parse_gaussian_theory(config);
  } else if (kind == "figure2") {
    fig = parse_figure2(config);
  } else {
    throw config_error("unknown experiment '" + kind + "' (expected sample, gaussian-theory or figure2)");
  }

  ensure_directory(opt.out_dir);
  json artifacts = json::object();
  RunReport report;
  std::uint64_t seed = 0;
  if (sample) {
    seed = sample->seed;
    report.summary = run_sample_experiment(*sample, opt, artifacts);
  } else if (theory) {
    report.summary = run_gaussian_theory(*theory, opt.out_dir, artifacts);
  } else {
    seed = fig->seed;
    report.summary = run_figure2(*fig, opt.out_dir, opt.threads, artifacts);
  }
  artifacts["metrics.json"] = hash_hex(write_json(opt.out_dir / "metrics.json", report.summary));
  report.manifest = experiment_detail::make_manifest(config, seed, artifacts);
  write_json(opt.out_dir / "manifest.json", report.manifest);
  return report;
}

// ---------------------------------------------------------------------------
// Sweeps

/// Resolves a sweep parameter to a JSON pointer. Accepts a pointer
/// ("/sampler/R"), a dotted path ("sampler.R") or a bare key that occurs in
/// exactly one of the config's blocks.
inline json::json_pointer sweep_pointer(const json& config, const std::string& name) {
  require(!name.empty(), "sweep parameter name is empty");
  std::string path = name;
  if (path.front() != '/') {
    if (path.find('.') == std::string::npos) {
      std::vector<std::string> hits;
      for (const char* block : {"", "/sampler", "/guidance", "/target/classifier", "/sampler/schedule", "/metrics"}) {
        const json::json_pointer p(std::string(block) + "/" + name);
        if (config.contains(p)) hits.push_back(p.to_string());
      }
      require(!hits.empty(), "unknown sweep parameter '" + name + "'");
      require(hits.size() == 1, "sweep parameter '" + name + "' is ambiguous; use a dotted path");
      path = hits.front();
    } else {
      std::string p = "/";
      for (char ch : name) p.push_back(ch == '.' ? '/' : ch);
      path = p;
    }
  }
  json::json_pointer ptr;
  try {
    ptr = json::json_pointer(path);
  } catch (const json::exception&) {
    throw config_error("malformed sweep parameter '" + name + "'");
  }
  require(config.contains(ptr), "unknown sweep parameter '" + name + "'");
  return ptr;
}

namespace experiment_detail {

inline void flatten_numbers(const json& j, const std::string& prefix, std::vector<std::pair<std::string, double>>& out) {
  if (j.is_number()) {
    out.emplace_back(prefix, j.get<double>());
  } else if (j.is_boolean()) {
    out.emplace_back(prefix, j.get<bool>() ? 1.0 : 0.0);
  } else if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten_numbers(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array() && !j.empty() && j.size() <= 3) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten_numbers(j[i], prefix + "." + std::to_string(i + 1), out);
  }
}

}  // namespace experiment_detail

/// Runs `base` once per value of `parameter` into out_dir/<index>/ and writes
/// an aggregate sweep.csv (one row per value, numeric summary fields).
inline json run_sweep(json base, const std::string& parameter, const std::vector<json>& values, const RunOptions& opt) {
  base = resolve_config(base);
  require(!values.empty(), "sweep needs at least one value");
  const json::json_pointer ptr = sweep_pointer(base, parameter);

  // Validate every variant first so a bad value fails before any output.
  std::vector<json> configs;
  for (const json& v : values) {
    json c = base;
    c[ptr] = v;
    if (opt.seed && experiment_kind(c) != "gaussian-theory") c["seed"] = *opt.seed;
    const std::string kind = experiment_kind(c);
    if (kind == "sample") {
      (void)parse_experiment(c);
    } else if (kind == "gaussian-theory") {
      (void)parse_gaussian_theory(c);
    } else if (kind == "figure2") {
      (void)parse_figure2(c);
    } else {
      throw config_error("unknown experiment '" + kind + "'");
    }
    configs.push_back(std::move(c));
  }

  ensure_directory(opt.out_dir);
  std::vector<std::vector<std::pair<std::string, double>>> rows;
  json runs = json::array();
  for (std::size_t i = 0; i < configs.size(); ++i) {
    RunOptions sub = opt;
    sub.seed.reset();
    sub.out_dir = opt.out_dir / fmt::format("run_{:03d}", i);
    const RunReport rep = run_config(configs[i], sub);
    std::vector<std::pair<std::string, double>> flat;
    experiment_detail::flatten_numbers(rep.summary, "", flat);
    rows.push_back(std::move(flat));
    runs.push_back({{"dir", sub.out_dir.filename().string()}, {"value", values[i]}, {"config_hash", rep.manifest.at("config_hash")}});
  }

  std::vector<std::string> columns;
  for (const auto& row : rows) {
    for (const auto& [k, _] : row) {
      if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
    }
  }
  std::vector<std::string> header{"run", "parameter", "value"};
  header.insert(header.end(), columns.begin(), columns.end());
  CsvWriter csv(opt.out_dir / "sweep.csv", header);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> cells{std::to_string(i), ptr.to_string(),
                                   values[i].is_number() ? format_double(values[i].get<double>()) : values[i].dump()};
    for (const std::string& col : columns) {
      auto it = std::find_if(rows[i].begin(), rows[i].end(), [&](const auto& kv) { return kv.first == col; });
      cells.push_back(it == rows[i].end() ? std::string() : format_double(it->second));
    }
    csv.line(cells);
  }
  json artifacts = {{"sweep.csv", hash_hex(csv.close())}};
  json manifest = {{"manifest_version", 1},
                   {"tool", "guidance-lab"},
                   {"sweep", {{"parameter", ptr.to_string()}, {"values", values}}},
                   {"base_config", base},
                   {"config_hash", config_hash(base)},
                   {"versions", experiment_detail::versions()},
                   {"runs", runs},
                   {"artifacts", artifacts}};
  write_json(opt.out_dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace guidance_lab
