#pragma once

// Closed forms for the scalar model: prior N(0, 1), likelihood N(c; x, gamma^2).

#include "guidance_lab/core.hpp"

#include <cmath>
#include <utility>

namespace guidance_lab::gaussian {

struct Case {
  double gamma = 1.0;
  double w = 2.0;
  double c = 0.0;
  double sigma_star = 1.0;

  void validate() const {
    require_positive(gamma, "gamma");
    require(std::isfinite(w) && w >= 0.0, "guidance scale w must be >= 0");
    require(std::isfinite(c), "context must be finite");
    require_positive(sigma_star, "sigma_star");
  }
};

inline double unconditional_denoiser(double x, double sigma) { return x / (1.0 + sigma * sigma); }

inline double conditional_denoiser(double gamma, double c, double x, double sigma) {
  const double g2 = gamma * gamma;
  const double s2 = sigma * sigma;
  return (g2 * x + s2 * c) / (g2 * (1.0 + s2) + s2);
}

inline double cfg_denoiser(double gamma, double w, double c, double x, double sigma) {
  return w * conditional_denoiser(gamma, c, x, sigma) + (1.0 - w) * unconditional_denoiser(x, sigma);
}

/// Variance of the density whose score is the CFG marginal score at level sigma.
inline double cfg_marginal_variance(double gamma, double w, double sigma) {
  require_positive(gamma, "gamma");
  require(sigma >= 0.0, "sigma must be nonnegative");
  const double g2 = gamma * gamma;
  const double s2 = sigma * sigma;
  return (1.0 + s2) * ((1.0 + s2) * g2 + s2) / (w + g2 * (1.0 + s2) + s2);
}

/// Same quantity written as a ratio of per-level precisions (used to cross-check).
inline double cfg_marginal_variance_ratio_form(double gamma, double w, double sigma) {
  const double g2 = gamma * gamma;
  const double s2 = sigma * sigma;
  return ((1.0 + s2) * g2 + s2) / (w / (1.0 + s2) + g2 + s2 / (1.0 + s2));
}

/// Variance gamma^2 / (gamma^2 + w) of the tilt.
inline double tilted_variance(double gamma, double w) { return gamma * gamma / (gamma * gamma + w); }

/// (mean, variance) of the normalized tilt N(c; x, gamma^2)^w N(x; 0, 1).
inline std::pair<double, double> tilted_posterior(double gamma, double w, double c) {
  require_positive(gamma, "gamma");
  require(std::isfinite(w) && w >= 1.0, "tilted posterior needs w >= 1");
  const double denom = w + gamma * gamma;
  return {w * c / denom, gamma * gamma / denom};
}

struct InequalityResult {
  bool holds;
  double margin;
};

/// Gap between the variance a valid diffusion would have at level sigma,
/// sigma^2 + V(w), and the CFG marginal variance. Positive for w > 1.
inline InequalityResult example1_inequality(double gamma, double w, double sigma) {
  require(w > 1.0, "the inequality is stated for w > 1");
  require_positive(sigma, "sigma");
  const double margin = sigma * sigma + tilted_variance(gamma, w) - cfg_marginal_variance(gamma, w, sigma);
  return {margin > 0.0, margin};
}

/// log of the exact CFG flow contraction between 0 and sigma_star.
inline double log_flow_contraction(double gamma, double w, double sigma_star) {
  require_positive(gamma, "gamma");
  require(std::isfinite(w) && w >= 0.0, "guidance scale w must be >= 0");
  require_positive(sigma_star, "sigma_star");
  const double g2 = gamma * gamma;
  const double s2 = sigma_star * sigma_star;
  return w * std::log(gamma) + 0.5 * (w - 1.0) * std::log1p(s2) - 0.5 * w * std::log(g2 + (1.0 + g2) * s2);
}

/// Factor c such that the exact CFG flow maps x at sigma_star to c * x at 0 (context 0).
inline double flow_contraction(double gamma, double w, double sigma_star) {
  return std::exp(log_flow_contraction(gamma, w, sigma_star));
}

/// Exact CFG flow (context 0) from sigma_a down to sigma_b >= 0.
inline double exact_flow(double gamma, double w, double x, double sigma_a, double sigma_b) {
  const double g2 = gamma * gamma;
  auto antiderivative = [&](double s) {
    const double s2 = s * s;
    return 0.5 * w * std::log(g2 + (1.0 + g2) * s2) + 0.5 * (1.0 - w) * std::log1p(s2);
  };
  return x * std::exp(antiderivative(sigma_b) - antiderivative(sigma_a));
}

/// Stationary variance of X_r = c (X_{r-1} + sigma_star Z).
inline double stationary_variance(double gamma, double w, double sigma_star) {
  require(std::isfinite(w) && w >= 1.0, "stationary variance needs w >= 1");
  const double log_c = log_flow_contraction(gamma, w, sigma_star);
  if (!(log_c < 0.0)) throw config_error("stationary variance needs flow contraction < 1 (w > 1)");
  const double c2 = std::exp(2.0 * log_c);
  return sigma_star * sigma_star * c2 / (-std::expm1(2.0 * log_c));
}

/// Chain variance after R refinements started from the conditional posterior.
inline double finite_r_variance(double gamma, double w, double sigma_star, long R) {
  require(R >= 0, "R must be >= 0");
  const double v0 = gamma * gamma / (gamma * gamma + 1.0);
  const double log_c = log_flow_contraction(gamma, w, sigma_star);
  const double c2 = std::exp(2.0 * log_c);
  const double c2r = std::exp(2.0 * static_cast<double>(R) * log_c);
  if (R == 0) return v0;
  // (1 - c^{2R}) / (1 - c^2) -> R as c -> 1
  const double geometric =
      std::abs(log_c) < 1e-300 ? static_cast<double>(R) : std::expm1(2.0 * R * log_c) / std::expm1(2.0 * log_c);
  return c2r * v0 + c2 * sigma_star * sigma_star * geometric;
}

}  // namespace guidance_lab::gaussian
