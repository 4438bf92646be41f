#include "guidance_lab/analytic_models.hpp"
#include "guidance_lab/gaussian_theory.hpp"
#include "guidance_lab/presets.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace guidance_lab;
using namespace guidance_lab::gaussian;

namespace {

long double contraction_ld(long double g, long double w, long double s) {
  return std::pow(g, w) * std::pow(1.0L + s * s, (w - 1.0L) / 2.0L) / std::pow(g * g + (1.0L + g * g) * s * s, w / 2.0L);
}

}  // namespace

TEST(GaussianTheory, CfgMarginalVarianceValues) {
  EXPECT_NEAR(cfg_marginal_variance(1.0, 1.0, 0.0), 0.5, 1e-15);
  EXPECT_NEAR(cfg_marginal_variance(1.0, 2.0, 1.0), 1.2, 1e-15);
}

TEST(GaussianTheory, VarianceFormsAgree) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ug(0.3, 3.0), uw(0.0, 6.0), us(0.0, 4.0);
  for (int i = 0; i < 200; ++i) {
    const double g = ug(rng), w = uw(rng), s = us(rng);
    const double a = cfg_marginal_variance(g, w, s);
    EXPECT_NEAR(a, cfg_marginal_variance_ratio_form(g, w, s), 1e-12 * std::max(1.0, a));
  }
}

TEST(GaussianTheory, Example1Gap) {
  const InequalityResult r = example1_inequality(1.0, 2.0, 1.0);
  EXPECT_TRUE(r.holds);
  EXPECT_NEAR(r.margin, 2.0 / 15.0, 1e-12);
  const InequalityResult near_one = example1_inequality(1.0, 1.0 + 1e-8, 1.0);
  EXPECT_GT(near_one.margin, 0.0);
  EXPECT_LT(near_one.margin, 1e-6);
  for (double w : {1.1, 2.0, 3.0, 5.0})
    for (double s : {0.1, 0.5, 1.0, 2.0, 3.0})
      for (double g : {0.5, 1.0, 2.0}) EXPECT_TRUE(example1_inequality(g, w, s).holds) << w << " " << s << " " << g;
}

TEST(GaussianTheory, TiltedPosterior) {
  const auto [m, v] = tilted_posterior(1.0, 2.0, 3.0);
  EXPECT_NEAR(m, 2.0, 1e-15);
  EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto [m1, v1] = tilted_posterior(1.5, 1.0, 2.0);
  EXPECT_NEAR(m1, 2.0 / (1.0 + 2.25), 1e-15);
  EXPECT_NEAR(v1, 2.25 / 3.25, 1e-15);
  EXPECT_THROW(tilted_posterior(1.0, 0.5, 0.0), config_error);
}

TEST(GaussianTheory, TiltedPosteriorMatchesQuadratureNormalization) {
  const AnalyticTarget t = presets::gaussian_case(1.0);
  const Context c = scalar_vec(3.0);
  const double z = std::exp(tilted_log_normalizer(t, c, 2.0));
  const auto f0 = [&](double y) { return tilted_unnormalized_density(t, c, 2.0, scalar_vec(y)); };
  const double mass = integrate_adaptive(f0, -15.0, 15.0).value;
  const double m1 = integrate_adaptive([&](double y) { return y * f0(y); }, -15.0, 15.0).value / mass;
  const double m2 = integrate_adaptive([&](double y) { return (y - m1) * (y - m1) * f0(y); }, -15.0, 15.0).value / mass;
  EXPECT_NEAR(z, mass, 1e-10);
  EXPECT_NEAR(m1, 2.0, 1e-10);
  EXPECT_NEAR(m2, 1.0 / 3.0, 1e-10);
}

TEST(GaussianTheory, TiltedVarianceMatchesAnalyticLayer) {
  for (double g : {0.5, 1.0, 2.0})
    for (double w : {1.0, 2.0, 7.5}) {
      const GaussianMixture tilt = tilted_gmm(presets::gaussian_case(g), scalar_vec(0.4), w);
      EXPECT_NEAR(tilt.covariances()[0](0, 0), tilted_variance(g, w), 1e-13);
    }
}

TEST(GaussianTheory, FlowContractionValues) {
  EXPECT_NEAR(flow_contraction(1.0, 0.0, 1.0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(flow_contraction(1.0, 1.0, 1.0), 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_NEAR(flow_contraction(1.0, 2.0, 0.1), 0.985282, 5e-7);
  EXPECT_NEAR(flow_contraction(1.0, 2.0, 0.1), static_cast<double>(contraction_ld(1.0L, 2.0L, 0.1L)), 1e-15);
  // Large exponents stay finite in the log domain.
  EXPECT_TRUE(std::isfinite(flow_contraction(0.5, 800.0, 2.0)));
  EXPECT_GT(flow_contraction(0.5, 800.0, 2.0), 0.0);
}

TEST(GaussianTheory, ExactFlowSolvesTheOde) {
  // Finite-difference derivative of the exact flow equals (x - D) / sigma.
  const double g = 0.8, w = 2.5, s = 0.9, h = 1e-6;
  const double x = exact_flow(g, w, 1.0, 2.0, s);
  const double deriv = (exact_flow(g, w, 1.0, 2.0, s + h) - exact_flow(g, w, 1.0, 2.0, s - h)) / (2.0 * h);
  EXPECT_NEAR(deriv, (x - cfg_denoiser(g, w, 0.0, x, s)) / s, 1e-7);
  EXPECT_NEAR(exact_flow(g, w, 1.7, 1.3, 0.0), 1.7 * flow_contraction(g, w, 1.3), 1e-14);
}

TEST(GaussianTheory, ContractionDecreasesInSigmaStar) {
  for (double w : {1.5, 2.0, 4.0}) {
    double prev = 1.0;
    for (double s = 0.05; s <= 5.0; s += 0.05) {
      const double c = flow_contraction(1.0, w, s);
      EXPECT_LT(c, prev);
      prev = c;
    }
  }
}

TEST(GaussianTheory, StationaryVariance) {
  // Exactly 0.0101 / 0.0304 = 101 / 304 at these parameters.
  EXPECT_NEAR(stationary_variance(1.0, 2.0, 0.1), 101.0 / 304.0, 1e-15);
  const long double c = contraction_ld(1.0L, 2.0L, 0.1L);
  EXPECT_NEAR(stationary_variance(1.0, 2.0, 0.1), static_cast<double>(0.01L * c * c / (1.0L - c * c)), 1e-13);
  for (double s = 0.01; s <= 0.3 + 1e-12; s += 0.01) {
    EXPECT_LE(std::abs(stationary_variance(1.0, 2.0, s) - 1.0 / 3.0) / (s * s), 1.0);
  }
  EXPECT_NEAR(stationary_variance(1.0, 2.0, 1e-4), 1.0 / 3.0, 1e-8);
  EXPECT_THROW(stationary_variance(1.0, 0.5, 0.5), config_error);
  // At w = 1 the exact kernel keeps the Bayes posterior invariant.
  for (double g : {0.5, 1.0, 2.0})
    for (double s : {0.1, 1.0, 3.0}) EXPECT_NEAR(stationary_variance(g, 1.0, s), g * g / (1.0 + g * g), 1e-13);
}

TEST(GaussianTheory, StationaryVarianceSecondOrderCoefficient) {
  // V_inf = 1/3 - sigma*^2 / 9 + o(sigma*^2) at gamma = 1, w = 2.
  for (double s : {1e-2, 3e-3}) {
    EXPECT_NEAR((stationary_variance(1.0, 2.0, s) - 1.0 / 3.0) / (s * s), -1.0 / 9.0, 1e-3);
  }
}

TEST(GaussianTheory, FiniteRVariance) {
  EXPECT_NEAR(finite_r_variance(1.0, 2.0, 0.5, 0), 0.5, 1e-15);
  EXPECT_NEAR(finite_r_variance(1.0, 2.0, 0.5, 10000), stationary_variance(1.0, 2.0, 0.5), 1e-12);
  // Recursion V_r = c^2 (V_{r-1} + sigma*^2).
  const double c = flow_contraction(1.0, 2.0, 0.5);
  double v = 0.5;
  for (long r = 1; r <= 6; ++r) {
    v = c * c * (v + 0.25);
    EXPECT_NEAR(finite_r_variance(1.0, 2.0, 0.5, r), v, 1e-14);
  }
}

TEST(GaussianTheory, BiasMinimizerIsInteriorForSmallR) {
  double best = INFINITY, best_s = 0.0;
  for (double s = 0.01; s <= 5.0; s += 0.01) {
    const double bias = std::abs(finite_r_variance(1.0, 2.0, s, 1) - tilted_variance(1.0, 2.0));
    if (bias < best) {
      best = bias;
      best_s = s;
    }
  }
  EXPECT_GT(best_s, 0.02);
  EXPECT_LT(best_s, 4.99);
}
