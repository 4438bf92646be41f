#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace guidance_lab {

/// Normalized weights exp(lw - max) / sum. Rejects an all -inf input.
inline std::vector<double> normalized_weights(const std::vector<double>& log_weights) {
  require(!log_weights.empty(), "weights must be nonempty");
  double best = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) {
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity()) {
      throw numerical_error("log-weights must not be NaN or +inf");
    }
    best = std::max(best, lw);
  }
  if (!std::isfinite(best)) throw numerical_error("all log-weights are -inf");
  std::vector<double> w(log_weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(log_weights[i] - best);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

/// Effective sample size (sum w)^2 / sum w^2 of the normalized weights.
inline double ess(const std::vector<double>& log_weights) {
  const std::vector<double> w = normalized_weights(log_weights);
  double sq = 0.0;
  for (double v : w) sq += v * v;
  return 1.0 / sq;
}

/// Systematic resampling: one uniform offset, N evenly spaced pointers.
inline std::vector<std::size_t> systematic_resample(const std::vector<double>& log_weights, StreamRng& rng,
                                                    std::size_t count = 0) {
  const std::vector<double> w = normalized_weights(log_weights);
  const std::size_t n = count == 0 ? w.size() : count;
  std::vector<std::size_t> idx(n);
  const double u0 = rng.uniform();
  double cumulative = w[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (u0 + static_cast<double>(i)) / static_cast<double>(n);
    while (u > cumulative && j + 1 < w.size()) cumulative += w[++j];
    idx[i] = j;
  }
  return idx;
}

/// Weighted particle set at a single noise level.
struct ParticleEnsemble {
  std::vector<Vec> states;
  std::vector<double> log_weights;
  double sigma = 0.0;

  std::size_t size() const noexcept { return states.size(); }
  double effective_size() const { return ess(log_weights); }
  std::vector<double> weights() const { return normalized_weights(log_weights); }

  Vec weighted_mean() const {
    const std::vector<double> w = weights();
    Vec m = Vec::Zero(states.front().size());
    for (std::size_t i = 0; i < size(); ++i) m += w[i] * states[i];
    return m;
  }

  /// Replace the population by a systematic resample with uniform weights.
  void resample(StreamRng& rng) {
    const std::vector<std::size_t> idx = systematic_resample(log_weights, rng);
    std::vector<Vec> next(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) next[i] = states[idx[i]];
    states = std::move(next);
    std::fill(log_weights.begin(), log_weights.end(), 0.0);
  }
};

}  // namespace guidance_lab
