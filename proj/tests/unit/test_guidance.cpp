#include "guidance_lab/gaussian_theory.hpp"
#include "guidance_lab/guidance.hpp"
#include "guidance_lab/presets.hpp"
#include "guidance_lab/solvers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace guidance_lab;

namespace {

TargetDenoisers gaussian_source(double c, std::optional<double> tilt = std::nullopt) {
  return TargetDenoisers(presets::gaussian_case(1.0), scalar_vec(c), tilt);
}

TargetDenoisers bimodal_source() {
  return TargetDenoisers(presets::canonical_bimodal(), scalar_vec(presets::Bimodal::context), presets::Bimodal::w);
}

}  // namespace

TEST(Guidance, KindNamesRoundTrip) {
  for (const auto& [kind, name] : kGuidanceNames) {
    EXPECT_EQ(parse_guidance_kind(name), kind);
    EXPECT_EQ(to_string(kind), name);
  }
  EXPECT_THROW(parse_guidance_kind("autoguidance"), config_error);
}

TEST(Guidance, CfgEndpointsAreExact) {
  const TargetDenoisers src = bimodal_source();
  const Vec x = scalar_vec(0.6);
  EXPECT_EQ(cfg_denoiser(src, 1.0, x, 0.9), src.conditional(x, 0.9));
  EXPECT_EQ(cfg_denoiser(src, 0.0, x, 0.9), src.unconditional(x, 0.9));
}

TEST(Guidance, CfgGaussianExampleValue) {
  const TargetDenoisers src = gaussian_source(3.0);
  EXPECT_NEAR(cfg_denoiser(src, 2.0, scalar_vec(3.0), 1.0)(0), 2.5, 1e-14);
  EXPECT_NEAR(gaussian::cfg_denoiser(1.0, 2.0, 3.0, 3.0, 1.0), 2.5, 1e-14);
}

TEST(Guidance, CfgIsAffineInScale) {
  const TargetDenoisers src = bimodal_source();
  for (double x : {-1.2, 0.1, 2.0}) {
    const Vec xv = scalar_vec(x);
    const Vec a = cfg_denoiser(src, 1.0, xv, 0.5);
    const Vec b = cfg_denoiser(src, 2.5, xv, 0.5);
    const Vec c = cfg_denoiser(src, 4.0, xv, 0.5);
    EXPECT_NEAR(((b - a) / 1.5 - (c - b) / 1.5).norm(), 0.0, 1e-12);
  }
}

TEST(Guidance, LiCfgGate) {
  const TargetDenoisers src = bimodal_source();
  const Vec x = scalar_vec(0.4);
  EXPECT_EQ(li_cfg_denoiser(src, 3.0, 0.5, 2.0, x, 0.3), src.conditional(x, 0.3));
  EXPECT_EQ(li_cfg_denoiser(src, 3.0, 0.5, 2.0, x, 2.5), src.conditional(x, 2.5));
  EXPECT_EQ(li_cfg_denoiser(src, 3.0, 0.5, 2.0, x, 1.0), cfg_denoiser(src, 3.0, x, 1.0));
  // Boundaries are inclusive.
  EXPECT_EQ(li_cfg_denoiser(src, 3.0, 0.5, 2.0, x, 0.5), cfg_denoiser(src, 3.0, x, 0.5));
  EXPECT_EQ(li_cfg_denoiser(src, 3.0, 0.5, 2.0, x, 2.0), cfg_denoiser(src, 3.0, x, 2.0));
  EXPECT_THROW(li_cfg_denoiser(src, 3.0, 2.0, 2.0, x, 1.0), config_error);
}

TEST(Guidance, LiCfgFullIntervalReproducesCfgTrajectory) {
  const TargetDenoisers src = bimodal_source();
  const NoiseSchedule sched = karras_sigmas(0.002, 80.0, 24, 7.0);
  const GuidedDenoiser<const TargetDenoisers&> cfg(src, GuidanceSpec::cfg(3.0));
  const GuidedDenoiser<const TargetDenoisers&> gated(src, GuidanceSpec{GuidanceKind::li_cfg, 3.0, 0.002, 80.0});
  for (double x0 : {-40.0, 3.0, 95.0}) {
    const FlowResult a = integrate_flow(scalar_vec(x0), SolverRun<decltype(cfg)>{sched, cfg, SolverMethod::heun, true});
    const FlowResult b =
        integrate_flow(scalar_vec(x0), SolverRun<decltype(gated)>{sched, gated, SolverMethod::heun, true});
    ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
    for (std::size_t i = 0; i < a.trajectory.size(); ++i) EXPECT_EQ(a.trajectory[i].x, b.trajectory[i].x);
  }
}

TEST(Guidance, LiCfgDegenerateIntervalIsConditional) {
  const TargetDenoisers src = bimodal_source();
  const GuidedDenoiser<const TargetDenoisers&> gated(src, GuidanceSpec{GuidanceKind::li_cfg, 3.0, 500.0, 600.0});
  const GuidedDenoiser<const TargetDenoisers&> cond(src, GuidanceSpec{GuidanceKind::conditional});
  const NoiseSchedule sched = karras_sigmas(0.002, 80.0, 16, 7.0);
  EXPECT_EQ(integrate_flow(scalar_vec(7.0), sched, gated), integrate_flow(scalar_vec(7.0), sched, cond));
}

TEST(Guidance, CfgPlusPlusScale) {
  EXPECT_EQ(cfg_pp_scale(0.0, 2.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(cfg_pp_scale(1.0, 2.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(cfg_pp_scale(0.4, 3.0, 0.0), 0.4);
  EXPECT_THROW(cfg_pp_scale(0.5, 1.0, 1.0), config_error);
  EXPECT_THROW(cfg_pp_scale(1.5, 2.0, 1.0), config_error);
}

TEST(Guidance, CfgPlusPlusDdimMatchesRenoisedUpdateForm) {
  // DDIM with the dynamic scale equals D_lambda + (sigma_to / sigma_from)(x - D_uncond).
  const TargetDenoisers src = gaussian_source(1.5);
  const double lambda = 0.6;
  const NoiseSchedule sched = karras_sigmas(0.002, 80.0, 32, 7.0);
  const GuidedDenoiser<const TargetDenoisers&> pp(src, GuidanceSpec{GuidanceKind::cfg_pp, 0.0, 0.0, 0.0, lambda});
  Vec x = scalar_vec(12.0);
  Vec y = x;
  for (std::size_t i = 0; i < sched.size(); ++i) {
    const double from = sched[i];
    const double to = sched.next_level(i);
    x = ddim_update(x, pp(x, from, to), from, to);
    const Vec du = src.unconditional(y, from);
    const Vec dl = cfg_combine(src.conditional(y, from), du, lambda);
    y = dl + (to / from) * (y - du);
    EXPECT_NEAR((x - y).norm(), 0.0, 1e-12 * std::max(1.0, y.norm())) << "step " << i;
  }
}

TEST(Guidance, DelayedLevels) {
  const auto [minus, plus] = delayed_levels(2.0, 0.9, 1.0);
  EXPECT_NEAR(plus, 1.05409, 5e-6);
  EXPECT_NEAR(minus, 1.02598, 5e-6);
  const auto [m1, p1] = delayed_levels(3.0, 2.0, 0.7);
  EXPECT_NEAR(m1, 0.7, 1e-15);
  EXPECT_NEAR(p1, 0.7, 1e-15);
  EXPECT_THROW(delayed_levels(1.0, 0.5, 1.0), config_error);
  EXPECT_THROW(delayed_levels(2.0, 0.0, 1.0), config_error);
}

TEST(Guidance, DelayedReducesToCfg) {
  const TargetDenoisers src = bimodal_source();
  for (double x : {-2.0, 0.0, 1.4}) {
    for (double s : {0.01, 0.5, 10.0}) {
      const Vec xv = scalar_vec(x);
      EXPECT_NEAR((delayed_denoiser(src, 3.0, 2.0, xv, s) - cfg_denoiser(src, 3.0, xv, s)).norm(), 0.0, 1e-13);
    }
  }
}

TEST(Guidance, DelayedMatchesHandComposedGaussianDenoisers) {
  const TargetDenoisers src = gaussian_source(3.0);
  const double w = 2.0, delta = 0.9, s = 1.0, x = 3.0;
  const double minus = s * std::sqrt(w / (1.0 + delta));
  const double plus = s * std::sqrt((w - 1.0) / delta);
  const double expected = w * gaussian::conditional_denoiser(1.0, 3.0, x, minus) +
                          (1.0 - w) * gaussian::unconditional_denoiser(x, plus);
  EXPECT_NEAR(delayed_denoiser(src, w, delta, scalar_vec(x), s)(0), expected, 1e-12);
}

TEST(Guidance, DelayedWithConstantClassifierIsTwoLevelUnconditional) {
  // g = const: conditional equals unconditional, leaving w D(sigma-) + (1 - w) D(sigma+).
  const AnalyticTarget t = presets::canonical_bimodal();
  const FunctionDenoisers flat{[&](const Vec& x, double s) { return t.prior().denoiser(x, s); },
                               [&](const Vec& x, double s) { return t.prior().denoiser(x, s); }, nullptr, 1};
  const auto [minus, plus] = delayed_levels(2.5, 0.8, 0.6);
  const Vec x = scalar_vec(0.9);
  const Vec expected = 2.5 * t.prior().denoiser(x, minus) - 1.5 * t.prior().denoiser(x, plus);
  EXPECT_NEAR((delayed_denoiser(flat, 2.5, 0.8, x, 0.6) - expected).norm(), 0.0, 1e-14);
}

TEST(Guidance, IdealDenoiserGaussianAndScoreDecomposition) {
  const TargetDenoisers src = gaussian_source(0.0, 2.0);
  for (double s : {0.1, 1.0, 2.0}) {
    EXPECT_NEAR(ideal_denoiser(src, scalar_vec(1.3), s)(0), 1.3 * (1.0 / 3.0) / (1.0 / 3.0 + s * s), 1e-13);
  }
  const TargetDenoisers bi = bimodal_source();
  const AnalyticTarget& t = bi.target();
  const Context c = scalar_vec(presets::Bimodal::context);
  const double w = presets::Bimodal::w;
  for (double x : {-1.8, -0.2, 0.9, 2.2}) {
    for (double s : {0.05, 0.4, 3.0}) {
      const Vec xv = scalar_vec(x);
      const Vec gap = ideal_denoiser(bi, xv, s) - cfg_denoiser(bi, w, xv, s) -
                      s * s * (w - 1.0) * renyi_gradient(t, c, w, xv, s);
      EXPECT_LE(gap.norm(), 1e-10);
    }
  }
}

TEST(Guidance, IdealMinusCfgDecaysQuadratically) {
  const TargetDenoisers bi = bimodal_source();
  const Vec x = scalar_vec(0.3);
  const double a = (ideal_denoiser(bi, x, 1e-3) - cfg_denoiser(bi, 3.0, x, 1e-3)).norm();
  const double b = (ideal_denoiser(bi, x, 1e-2) - cfg_denoiser(bi, 3.0, x, 1e-2)).norm();
  // ideal - cfg = sigma^2 (w - 1) grad R, with grad R = O(sigma^2): slope 4 in sigma.
  EXPECT_NEAR(std::log10(b / a), 4.0, 0.2);
}

TEST(Guidance, SpecValidation) {
  const TargetDenoisers src = bimodal_source();
  using G = GuidedDenoiser<const TargetDenoisers&>;
  EXPECT_THROW(G(src, GuidanceSpec{GuidanceKind::cfg, -1.0}), config_error);
  EXPECT_THROW(G(src, GuidanceSpec{GuidanceKind::li_cfg, 2.0, 1.0, 0.5}), config_error);
  EXPECT_THROW(G(src, GuidanceSpec{GuidanceKind::cfg_pp, 0.0, 0.0, 0.0, 1.5}), config_error);
  EXPECT_THROW(G(src, GuidanceSpec{GuidanceKind::delayed, 2.0, 0.0, 0.0, 0.0, 0.0}), config_error);
  EXPECT_THROW(G(src, GuidanceSpec{GuidanceKind::ideal, 0.5}), config_error);
  const G pp(src, GuidanceSpec{GuidanceKind::cfg_pp, 0.0, 0.0, 0.0, 0.5});
  EXPECT_THROW(pp(scalar_vec(0.0), 1.0), config_error);
}

TEST(Guidance, IdealWithoutTiltIsRejected) {
  const TargetDenoisers src(presets::canonical_bimodal(), scalar_vec(1.0));
  EXPECT_THROW(src.ideal(scalar_vec(0.0), 1.0), config_error);
}
