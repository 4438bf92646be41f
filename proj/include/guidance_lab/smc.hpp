#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/guidance.hpp"
#include "guidance_lab/parallel.hpp"
#include "guidance_lab/particles.hpp"
#include "guidance_lab/rng.hpp"
#include "guidance_lab/schedule.hpp"
#include "guidance_lab/solvers.hpp"

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

namespace guidance_lab {

struct SmcConfig {
  std::size_t particles = 1024;
  double w = 2.0;
  /// Resample when ESS / N drops below this fraction.
  double resample_fraction = 0.5;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    require(particles >= 2, "SMC needs at least 2 particles");
    require(std::isfinite(w) && w >= 0.0, "guidance scale w must be >= 0");
    require(resample_fraction > 0.0 && resample_fraction <= 1.0, "resample fraction must lie in (0, 1]");
  }
};

struct SmcResult {
  ParticleEnsemble ensemble;        // weighted, at the last schedule level
  std::vector<Vec> resampled;       // unweighted draws from the final ensemble
  std::vector<double> ess_trace;    // ESS after each weight update
  std::vector<std::size_t> resample_steps;
};

/// Log-weight increment for the transition sigma_from -> sigma_to, given the
/// conditional and unconditional denoisers evaluated at the noisier level.
inline double fk_log_weight_increment(double w, double sigma_from, double sigma_to, const Vec& d_cond,
                                      const Vec& d_uncond) {
  const double a2 = sigma_from * sigma_from;
  const double b2 = sigma_to * sigma_to;
  return w * (w - 1.0) * (a2 - b2) / (2.0 * a2 * b2) * (d_cond - d_uncond).squaredNorm();
}

namespace detail {

/// Marker for the default proposal: CFG built from the weight evaluations.
struct CfgProposal {
  Vec operator()(const Vec& x, double, double) const { return x; }
};

template <DenoiserSource S, TransitionDenoiser P>
SmcResult fk_smc_run(const S& base, const NoiseSchedule& schedule, const SmcConfig& config, const P& proposal) {
  config.validate();
  const std::size_t n = config.particles;
  const int d = base.dim();
  constexpr std::uint64_t kResampleStream = 0x8000000000000000ULL;

  SmcResult out;
  ParticleEnsemble& ens = out.ensemble;
  ens.states.resize(n);
  ens.log_weights.assign(n, 0.0);
  ens.sigma = schedule.sigma_max();
  for (std::size_t i = 0; i < n; ++i) {
    StreamRng rng(config.seed, i, 0);
    ens.states[i] = schedule.sigma_max() * rng.normal_vec(d);
  }

  std::vector<Vec> means(n);
  for (std::size_t step = 0; step + 1 < schedule.size(); ++step) {
    const double from = schedule[step];
    const double to = schedule[step + 1];
    const double ratio2 = (to * to) / (from * from);
    const double kernel_sd = std::sqrt(to * to * (from * from - to * to) / (from * from));

    parallel_for(n, config.threads, [&](std::size_t i) {
      const Vec& x = ens.states[i];
      const Vec dc = base.conditional(x, from);
      const Vec du = base.unconditional(x, from);
      ens.log_weights[i] += fk_log_weight_increment(config.w, from, to, dc, du);
      Vec target_mean;
      if constexpr (std::is_same_v<P, CfgProposal>) {
        target_mean = cfg_combine(dc, du, config.w);
      } else {
        target_mean = proposal(x, from, to);
      }
      means[i] = ratio2 * x + (1.0 - ratio2) * target_mean;
      if (!means[i].allFinite() || !std::isfinite(ens.log_weights[i])) {
        throw numerical_error("non-finite particle in SMC", static_cast<long>(step));
      }
    });

    const double current_ess = ens.effective_size();
    out.ess_trace.push_back(current_ess);
    if (current_ess < 2.0) throw numerical_error("SMC effective sample size collapsed below 2", static_cast<long>(step));
    if (current_ess < config.resample_fraction * static_cast<double>(n)) {
      StreamRng rng(config.seed, kResampleStream, step);
      const std::vector<std::size_t> idx = systematic_resample(ens.log_weights, rng);
      std::vector<Vec> picked(n);
      for (std::size_t i = 0; i < n; ++i) picked[i] = means[idx[i]];
      means = std::move(picked);
      std::fill(ens.log_weights.begin(), ens.log_weights.end(), 0.0);
      out.resample_steps.push_back(step);
    }

    parallel_for(n, config.threads, [&](std::size_t i) {
      StreamRng rng(config.seed, i, step + 1);
      ens.states[i] = means[i] + kernel_sd * rng.normal_vec(d);
    });
    ens.sigma = to;
  }

  StreamRng rng(config.seed, kResampleStream, schedule.size());
  const std::vector<std::size_t> idx = systematic_resample(ens.log_weights, rng);
  out.resampled.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.resampled[i] = ens.states[idx[i]];
  return out;
}

}  // namespace detail

/// Feynman-Kac corrected SMC targeting the tilted path. Each particle moves
/// with the Gaussian kernel whose mean blends x and `proposal`.
template <DenoiserSource S, TransitionDenoiser P>
SmcResult fk_smc_sample(const S& base, const NoiseSchedule& schedule, const SmcConfig& config, const P& proposal) {
  return detail::fk_smc_run(base, schedule, config, proposal);
}

/// Default proposal: plain CFG at the run's scale.
template <DenoiserSource S>
SmcResult fk_smc_sample(const S& base, const NoiseSchedule& schedule, const SmcConfig& config) {
  return detail::fk_smc_run(base, schedule, config, detail::CfgProposal{});
}

}  // namespace guidance_lab
