#pragma once

#include "guidance_lab/core.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace guidance_lab {

/// Decreasing sequence of strictly positive noise levels, sigma_max first.
///
/// The last level is sigma_min > 0; solvers close a run with one explicit
/// denoiser jump to sigma = 0, so zero never appears in a schedule.
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> sigmas, double rho) : sigmas_(std::move(sigmas)), rho_(rho) {
    require(sigmas_.size() >= 2, "a noise schedule needs at least two levels");
    for (std::size_t i = 0; i < sigmas_.size(); ++i) {
      require(std::isfinite(sigmas_[i]) && sigmas_[i] > 0.0, "noise levels must be positive and finite");
      if (i > 0) require(sigmas_[i] < sigmas_[i - 1], "noise levels must be strictly decreasing");
    }
    require(rho_ >= 1.0, "schedule warp exponent rho must be >= 1");
  }

  const std::vector<double>& sigmas() const noexcept { return sigmas_; }
  std::size_t size() const noexcept { return sigmas_.size(); }
  double operator[](std::size_t i) const { return sigmas_[i]; }
  double sigma_max() const noexcept { return sigmas_.front(); }
  double sigma_min() const noexcept { return sigmas_.back(); }
  double rho() const noexcept { return rho_; }

  /// Level that follows index i in a full run, 0 after the last entry.
  double next_level(std::size_t i) const { return i + 1 < sigmas_.size() ? sigmas_[i + 1] : 0.0; }

 private:
  std::vector<double> sigmas_;
  double rho_;
};

/// EDM/Karras rho-warped schedule: sigma_t^(1/rho) is affine in t.
inline NoiseSchedule karras_sigmas(double sigma_min, double sigma_max, int steps, double rho) {
  require(steps >= 2, "karras_sigmas needs at least 2 steps");
  require_positive(sigma_min, "sigma_min");
  require_positive(sigma_max, "sigma_max");
  require(sigma_min < sigma_max, "sigma_min must be smaller than sigma_max");
  require(std::isfinite(rho) && rho >= 1.0, "rho must be >= 1");

  const double lo = std::pow(sigma_min, 1.0 / rho);
  const double hi = std::pow(sigma_max, 1.0 / rho);
  std::vector<double> sigmas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const int t = steps - 1 - i;
    const double frac = static_cast<double>(t) / static_cast<double>(steps - 1);
    sigmas[static_cast<std::size_t>(i)] = std::pow(lo + frac * (hi - lo), rho);
  }
  sigmas.front() = sigma_max;
  sigmas.back() = sigma_min;
  return NoiseSchedule(std::move(sigmas), rho);
}

/// Schedule for one Gibbs refinement, restarted from sigma_star.
inline NoiseSchedule sub_schedule(double sigma_star, int steps, double sigma_min, double rho) {
  return karras_sigmas(sigma_min, sigma_star, steps, rho);
}

/// Schedule from an explicit sigma(t) table over diffusion steps (VP-style
/// models): `steps` indices spaced uniformly over the table, highest t first.
/// The table is indexed by increasing diffusion time; entry 0 may be zero and
/// is then skipped in favour of the first positive level.
inline NoiseSchedule table_sigmas(std::span<const double> sigma_of_t, int steps) {
  require(steps >= 2, "table_sigmas needs at least 2 steps");
  std::size_t first = 0;
  while (first < sigma_of_t.size() && !(sigma_of_t[first] > 0.0)) ++first;
  require(sigma_of_t.size() >= first + static_cast<std::size_t>(steps),
          "sigma table has fewer positive entries than requested steps");
  const double last = static_cast<double>(sigma_of_t.size() - 1);
  const double span = last - static_cast<double>(first);
  std::vector<double> sigmas;
  sigmas.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double pos = last - span * static_cast<double>(i) / static_cast<double>(steps - 1);
    sigmas.push_back(sigma_of_t[static_cast<std::size_t>(std::llround(pos))]);
  }
  return NoiseSchedule(std::move(sigmas), 1.0);
}

}  // namespace guidance_lab
