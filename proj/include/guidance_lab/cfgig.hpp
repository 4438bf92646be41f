#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/gaussian_theory.hpp"
#include "guidance_lab/guidance.hpp"
#include "guidance_lab/parallel.hpp"
#include "guidance_lab/rng.hpp"
#include "guidance_lab/schedule.hpp"
#include "guidance_lab/solvers.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace guidance_lab {

struct CfgigConfig {
  double w0 = 1.0;
  double w = 2.0;
  int R = 1;
  int T = 64;
  int T0 = 32;
  double sigma_star = 1.0;
  double sigma_max = 80.0;
  double sigma_min = 0.002;
  double rho = 7.0;
  SolverMethod method = SolverMethod::heun;
  std::uint64_t seed = 0;

  void validate() const {
    require(std::isfinite(w0) && w0 >= 1.0, "initial guidance scale w0 must be >= 1");
    require(std::isfinite(w) && w > w0, "refinement guidance scale w must exceed w0");
    require(R >= 1, "R must be >= 1");
    require(T0 >= 2 && T0 <= T, "need 2 <= T0 <= T");
    require(sigma_min > 0.0 && sigma_min < sigma_star && sigma_star < sigma_max,
            "need sigma_min < sigma_star < sigma_max");
    require(refine_steps() >= 2, "each repetition needs floor((T - T0) / R) >= 2 steps");
    require(std::isfinite(rho) && rho >= 1.0, "rho must be >= 1");
  }

  /// (T - T0) mod R, added to the initial run.
  int remainder() const { return (T - T0) % R; }
  int initial_steps() const { return T0 + remainder(); }
  int refine_steps() const { return (T - T0) / R; }
  int total_steps() const { return initial_steps() + R * refine_steps(); }

  NoiseSchedule initial_schedule() const { return karras_sigmas(sigma_min, sigma_max, initial_steps(), rho); }
  NoiseSchedule refine_schedule() const { return sub_schedule(sigma_star, refine_steps(), sigma_min, rho); }
};

/// Flow maps for the two stages of a chain, solved numerically with guided denoisers.
template <TransitionDenoiser D0, TransitionDenoiser D1>
struct NumericFlow {
  D0 initial;
  D1 refine;
  SolverMethod method = SolverMethod::heun;

  FlowResult run_initial(const Vec& x, const NoiseSchedule& s) const {
    return integrate_flow(x, SolverRun<const D0&>{s, initial, method});
  }
  FlowResult run_refine(const Vec& x, const NoiseSchedule& s) const {
    return integrate_flow(x, SolverRun<const D1&>{s, refine, method});
  }
};

/// CFG at w0 for the initial run and at w for the refinements.
template <DenoiserSource S>
auto make_cfg_flow(const S& base, const CfgigConfig& config) {
  using G = GuidedDenoiser<const S&>;
  return NumericFlow<G, G>{G(base, GuidanceSpec::cfg(config.w0)), G(base, GuidanceSpec::cfg(config.w)), config.method};
}

/// Exact CFG flow of the scalar Gaussian model (context 0): no discretization error.
struct ExactGaussianFlow {
  double gamma = 1.0;
  double w0 = 1.0;
  double w = 2.0;

  FlowResult run_initial(const Vec& x, const NoiseSchedule& s) const { return run(x, s, w0); }
  FlowResult run_refine(const Vec& x, const NoiseSchedule& s) const { return run(x, s, w); }

 private:
  FlowResult run(const Vec& x, const NoiseSchedule& s, double scale) const {
    FlowResult out;
    out.x = scalar_vec(gaussian::exact_flow(gamma, scale, x(0), s.sigma_max(), 0.0));
    out.steps = s.size();
    return out;
  }
};

template <class F>
concept ChainFlow = requires(const F& f, const Vec& x, const NoiseSchedule& s) {
  { f.run_initial(x, s) } -> std::same_as<FlowResult>;
  { f.run_refine(x, s) } -> std::same_as<FlowResult>;
};

/// One refinement: renoise to sigma_star, then flow back to sigma = 0 over `refine`.
template <ChainFlow F>
FlowResult gibbs_iteration(const Vec& x0, const F& flow, const NoiseSchedule& refine, StreamRng& rng) {
  const Vec noisy = x0 + refine.sigma_max() * rng.normal_vec(static_cast<int>(x0.size()));
  return flow.run_refine(noisy, refine);
}

/// Single refinement with CFG at scale w on a fresh sub-schedule.
template <DenoiserSource S>
Vec gibbs_iteration(const Vec& x0, const S& base, double w, double sigma_star, int steps, double sigma_min, double rho,
                    SolverMethod method, StreamRng& rng) {
  const NoiseSchedule refine = sub_schedule(sigma_star, steps, sigma_min, rho);
  const GuidedDenoiser<const S&> guided(base, GuidanceSpec::cfg(w));
  const Vec noisy = x0 + sigma_star * rng.normal_vec(static_cast<int>(x0.size()));
  return integrate_flow(noisy, refine, guided, method);
}

struct ChainResult {
  Vec x;
  std::vector<Vec> iterates;  // r = 0 (initial run) .. R, when recorded
  std::size_t steps = 0;
};

/// One chain of the refinement sampler. Streams: (seed, chain, 0) for the
/// initial draw, (seed, chain, r) for the r-th renoising.
template <ChainFlow F>
ChainResult cfgig_chain(const F& flow, const CfgigConfig& config, int dim, std::uint64_t chain, bool record,
                        const NoiseSchedule& initial, const NoiseSchedule& refine) {
  ChainResult out;
  StreamRng init_rng(config.seed, chain, 0);
  FlowResult r0 = flow.run_initial(config.sigma_max * init_rng.normal_vec(dim), initial);
  out.x = r0.x;
  out.steps = r0.steps;
  if (record) out.iterates.push_back(out.x);
  for (int r = 1; r <= config.R; ++r) {
    StreamRng rng(config.seed, chain, static_cast<std::uint64_t>(r));
    FlowResult step = gibbs_iteration(out.x, flow, refine, rng);
    out.x = step.x;
    out.steps += step.steps;
    if (!out.x.allFinite()) throw numerical_error("non-finite state after refinement", r);
    if (record) out.iterates.push_back(out.x);
  }
  return out;
}

template <ChainFlow F>
ChainResult cfgig_sample(const F& flow, const CfgigConfig& config, int dim, std::uint64_t chain = 0,
                         bool record = false) {
  config.validate();
  return cfgig_chain(flow, config, dim, chain, record, config.initial_schedule(), config.refine_schedule());
}

/// Independent chains 0..n-1; output does not depend on `threads`.
template <ChainFlow F>
std::vector<ChainResult> cfgig_ensemble(const F& flow, const CfgigConfig& config, int dim, std::size_t n,
                                        unsigned threads = 1, bool record = false) {
  config.validate();
  const NoiseSchedule initial = config.initial_schedule();
  const NoiseSchedule refine = config.refine_schedule();
  std::vector<ChainResult> out(n);
  parallel_for(n, threads, [&](std::size_t i) { out[i] = cfgig_chain(flow, config, dim, i, record, initial, refine); });
  return out;
}

}  // namespace guidance_lab
