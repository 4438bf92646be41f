#include "guidance_lab/analytic_models.hpp"
#include "guidance_lab/metrics.hpp"
#include "guidance_lab/presets.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace guidance_lab;

namespace {

const Context kZero = scalar_vec(0.0);

// Central differences of a scalar function of a point.
template <class F>
Vec finite_difference_gradient(F&& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Plain trapezoid rule on a fine uniform grid: an integrator independent of
// the adaptive Gauss-Legendre code.
template <class F>
double trapezoid(F&& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = 0.5 * (f(a) + f(b));
  for (int i = 1; i < n; ++i) s += f(a + i * h);
  return s * h;
}

double relative_gap(const Vec& a, const Vec& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

}  // namespace

TEST(GaussianMixture, ValidatesInvariants) {
  EXPECT_THROW(GaussianMixture::scalar({0.5, 0.4}, {0.0, 1.0}, {1.0, 1.0}), config_error);
  EXPECT_THROW(GaussianMixture::scalar({1.0}, {0.0}, {-1.0}), config_error);
  Mat bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(GaussianMixture::gaussian(Vec::Zero(2), bad), config_error);
  Mat asym(2, 2);
  asym << 1.0, 0.1, 0.0, 1.0;
  EXPECT_THROW(GaussianMixture::gaussian(Vec::Zero(2), asym), config_error);
  EXPECT_THROW(GaussianMixture::gaussian(Vec::Zero(4), Mat::Identity(3, 3)), std::exception);
}

TEST(GaussianMixture, SmoothedDensityMatchesDirectFormula) {
  const GaussianMixture g = GaussianMixture::scalar({0.3, 0.7}, {-1.0, 2.0}, {0.5, 0.2});
  const double x = 0.4, s = 0.6;
  const auto n = [](double x, double m, double v) {
    return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
  };
  const double expected = 0.3 * n(x, -1.0, 0.5 + s * s) + 0.7 * n(x, 2.0, 0.2 + s * s);
  EXPECT_NEAR(g.density(scalar_vec(x), s), expected, 1e-15);
}

TEST(GaussianMixture, LogSumExpSurvivesFarTails) {
  const GaussianMixture g = GaussianMixture::scalar({0.5, 0.5}, {-1.5, 1.5}, {0.49, 0.49});
  const Vec s = g.score(scalar_vec(400.0), 1e-3);
  EXPECT_TRUE(s.allFinite());
  EXPECT_NEAR(s(0), -(400.0 - 1.5) / (0.49 + 1e-6), 1e-6);
}

TEST(AnalyticModels, GaussianScoreAndDenoiser) {
  const AnalyticTarget t = presets::gaussian_case(1.0);
  EXPECT_NEAR(smoothed_prior_score(t, scalar_vec(2.0), 1.0)(0), -1.0, 1e-15);
  EXPECT_NEAR(smoothed_prior_denoiser(t, scalar_vec(2.0), 1.0)(0), 1.0, 1e-15);
}

TEST(AnalyticModels, SymmetricMixtureScoreVanishesAtOrigin) {
  const AnalyticTarget t = presets::canonical_bimodal();
  EXPECT_EQ(smoothed_prior_score(t, scalar_vec(0.0), 0.7)(0), 0.0);
}

TEST(AnalyticModels, RejectsNonFiniteInput) {
  const AnalyticTarget t = presets::canonical_bimodal();
  EXPECT_THROW(smoothed_prior_score(t, scalar_vec(std::nan("")), 1.0), config_error);
  EXPECT_THROW(smoothed_prior_score(t, scalar_vec(0.0), 0.0), config_error);
  EXPECT_THROW(smoothed_prior_score(t, make_vec({0.0, 1.0}), 1.0), config_error);
}

TEST(AnalyticModels, BimodalScoreMatchesFiniteDifferences) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Vec x = scalar_vec(0.7);
  const double s = 0.5;
  const Vec fd = finite_difference_gradient([&](const Vec& y) { return t.prior().log_density(y, s); }, x, 1e-5);
  EXPECT_NEAR(smoothed_prior_score(t, x, s)(0), fd(0), 1e-6);
}

TEST(AnalyticModels, DenoiserApproachesIdentityAtVanishingNoise) {
  const AnalyticTarget t = presets::canonical_bimodal();
  for (double x : {-2.0, -1.5, -0.5, 0.3, 1.1, 2.4}) {
    EXPECT_NEAR(smoothed_prior_denoiser(t, scalar_vec(x), 1e-6)(0), x, 1e-4);
  }
}

TEST(AnalyticModels, BimodalDenoiserMatchesQuadrature) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const DensityOnBox prior{[&](const Vec& y) { return t.prior().density(y); }, t.prior().support_box()};
  const Vec x = scalar_vec(0.3);
  const OracleMoments m = oracle_moments(prior, x, 0.8);
  EXPECT_NEAR(smoothed_prior_denoiser(t, x, 0.8)(0), m.posterior_mean()(0), 1e-8);
}

TEST(AnalyticModels, ConditionalDenoiserClosedForms) {
  const AnalyticTarget t = presets::gaussian_case(1.0);
  EXPECT_NEAR(conditional_denoiser(t, scalar_vec(0.0), scalar_vec(3.0), 1.0)(0), 1.0, 1e-14);
  EXPECT_NEAR(conditional_denoiser(t, scalar_vec(3.0), scalar_vec(3.0), 1.0)(0), 2.0, 1e-14);
}

TEST(AnalyticModels, UninformativeLikelihoodRecoversUnconditional) {
  const AnalyticTarget wide(presets::canonical_bimodal().prior(), LinearGaussianClassifier{presets::identity(1), 1e6});
  for (double x : {-2.0, 0.1, 1.7}) {
    const Vec xv = scalar_vec(x);
    EXPECT_NEAR(conditional_denoiser(wide, scalar_vec(1.0), xv, 0.9)(0), smoothed_prior_denoiser(wide, xv, 0.9)(0), 1e-6);
  }
}

TEST(AnalyticModels, ContextValidation) {
  const AnalyticTarget lg = presets::gaussian_case(1.0);
  const AnalyticTarget cm = presets::class_mixture_1d();
  EXPECT_THROW(conditional_denoiser(lg, Context{1}, scalar_vec(0.0), 1.0), config_error);
  EXPECT_THROW(conditional_denoiser(cm, Context{2}, scalar_vec(0.0), 1.0), config_error);
  EXPECT_THROW(conditional_denoiser(cm, Context{-1}, scalar_vec(0.0), 1.0), config_error);
  EXPECT_THROW(conditional_denoiser(cm, kZero, scalar_vec(0.0), 1.0), config_error);
  EXPECT_THROW(conditional_denoiser(lg, make_vec({0.0, 1.0}), scalar_vec(0.0), 1.0), config_error);
}

TEST(AnalyticModels, GaussianTiltParameters) {
  const AnalyticTarget t = presets::gaussian_case(1.0);
  const GaussianMixture tilt = tilted_gmm(t, scalar_vec(3.0), 2.0);
  ASSERT_EQ(tilt.size(), 1u);
  EXPECT_NEAR(tilt.means()[0](0), 2.0, 1e-14);
  EXPECT_NEAR(tilt.covariances()[0](0, 0), 1.0 / 3.0, 1e-14);
  const GaussianMixture bayes = tilted_gmm(t, scalar_vec(3.0), 1.0);
  EXPECT_NEAR(bayes.means()[0](0), 1.5, 1e-14);
  EXPECT_NEAR(bayes.covariances()[0](0, 0), 0.5, 1e-14);
}

TEST(AnalyticModels, TiltRejectsExponentBelowOne) {
  const AnalyticTarget t = presets::gaussian_case(1.0);
  EXPECT_THROW(tilted_gmm(t, kZero, 0.5), config_error);
  EXPECT_THROW(tilted_unnormalized_density(t, kZero, 0.99, scalar_vec(0.0)), config_error);
  EXPECT_THROW(renyi_gradient(t, kZero, 1.0, scalar_vec(0.0), 1.0), config_error);
  EXPECT_THROW(cfg_marginal_score(t, kZero, -0.1, scalar_vec(0.0), 1.0), config_error);
}

TEST(AnalyticModels, LinearGaussianTiltNormalizerMatchesTrapezoid) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Context c = scalar_vec(1.0);
  const double z = trapezoid([&](double y) { return tilted_unnormalized_density(t, c, 3.0, scalar_vec(y)); }, -15.0,
                             15.0, 60000);
  EXPECT_NEAR(std::exp(tilted_log_normalizer(t, c, 3.0)), z, 1e-10);
}

TEST(AnalyticModels, ClassMixtureTiltNormalizerMatchesTrapezoid) {
  const AnalyticTarget t = presets::class_mixture_1d();
  for (int label : {0, 1}) {
    const double z = trapezoid([&](double y) { return tilted_unnormalized_density(t, label, 2.5, scalar_vec(y)); },
                               -15.0, 15.0, 60000);
    EXPECT_NEAR(std::exp(tilted_log_normalizer(t, label, 2.5)), z, 1e-8) << "class " << label;
  }
  // w = 1: the normalizer is the class prior.
  EXPECT_NEAR(std::exp(tilted_log_normalizer(t, 1, 1.0)), 0.6, 1e-10);
}

TEST(AnalyticModels, GaussianTiltedSmoothedScore) {
  const AnalyticTarget t = presets::gaussian_case(1.0);
  for (double x : {-1.0, 0.5, 2.0}) {
    for (double s : {0.1, 1.0, 3.0}) {
      EXPECT_NEAR(tilted_smoothed_score(t, kZero, 2.0, scalar_vec(x), s)(0), -x / (1.0 / 3.0 + s * s), 1e-13);
    }
  }
}

TEST(AnalyticModels, ClassMixtureTiltedScoreMatchesFiniteDifferenceOfQuadrature) {
  const AnalyticTarget t = presets::class_mixture_1d();
  const DensityOnBox tilt = tilted_density(t, 1, 2.0);
  for (double x : {-0.5, 0.9, 1.8}) {
    const double s = 0.6;
    const Vec xv = scalar_vec(x);
    const Vec fd = finite_difference_gradient(
        [&](const Vec& y) { return std::log(quadrature_oracle(tilt, y, s, 0)(0)); }, xv, 1e-4);
    EXPECT_NEAR(tilted_smoothed_score(t, 1, 2.0, xv, s)(0), fd(0), 1e-5) << "x=" << x;
  }
}

TEST(AnalyticModels, TiltAtUnitExponentIsConditional) {
  for (const AnalyticTarget& t : {presets::canonical_bimodal(), presets::class_mixture_1d()}) {
    const Context c = t.linear_gaussian() ? Context{scalar_vec(1.0)} : Context{1};
    for (double x : {-1.0, 0.2, 1.3}) {
      const Vec xv = scalar_vec(x);
      EXPECT_NEAR(tilted_smoothed_score(t, c, 1.0, xv, 0.4)(0), conditional_smoothed_score(t, c, xv, 0.4)(0), 1e-13);
    }
  }
}

TEST(AnalyticModels, CfgMarginalScoreEndpoints) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Context c = scalar_vec(1.0);
  const Vec x = scalar_vec(0.4);
  EXPECT_NEAR(cfg_marginal_score(t, c, 1.0, x, 0.5)(0), conditional_smoothed_score(t, c, x, 0.5)(0), 1e-14);
  EXPECT_NEAR(cfg_marginal_score(t, c, 0.0, x, 0.5)(0), smoothed_prior_score(t, x, 0.5)(0), 1e-14);
}

TEST(AnalyticModels, GaussianCfgMarginalVariance) {
  // With context 0 the CFG marginal score is -x / v; compare against the
  // product-of-Gaussians variance computed independently here.
  const AnalyticTarget t = presets::gaussian_case(1.0);
  const double w = 2.0, s = 1.0;
  const double v = -1.0 / cfg_marginal_score(t, kZero, w, scalar_vec(1.0), s)(0);
  const double prior_var = 1.0 + s * s;
  const double cond_var = 0.5 + s * s;  // posterior variance 1/2 plus noise
  EXPECT_NEAR(v, 1.0 / (w / cond_var + (1.0 - w) / prior_var), 1e-13);
  EXPECT_NEAR(v, 1.2, 1e-13);
}

TEST(AnalyticModels, RenyiGradientDecaysBetweenUnitAndSmallNoise) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Context c = scalar_vec(1.0);
  for (double x : {-0.7, 0.3, 1.2}) {
    const double big = renyi_gradient(t, c, 3.0, scalar_vec(x), 1.0).norm();
    const double small = renyi_gradient(t, c, 3.0, scalar_vec(x), 1e-3).norm();
    EXPECT_LT(small, 1e-4 * big) << "x=" << x;
  }
}

TEST(AnalyticModels, RenyiGradientLogLogSlopeIsTwo) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Context c = scalar_vec(1.0);
  for (double x : {-0.7, 0.3, 1.2}) {
    std::vector<double> ls, lg;
    for (int i = 0; i <= 8; ++i) {
      const double s = std::pow(10.0, -3.0 + 2.0 * i / 8.0);
      ls.push_back(std::log(s));
      lg.push_back(std::log(renyi_gradient(t, c, 3.0, scalar_vec(x), s).norm()));
    }
    const double mx = std::accumulate(ls.begin(), ls.end(), 0.0) / ls.size();
    const double my = std::accumulate(lg.begin(), lg.end(), 0.0) / lg.size();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ls.size(); ++i) {
      num += (ls[i] - mx) * (lg[i] - my);
      den += (ls[i] - mx) * (ls[i] - mx);
    }
    EXPECT_NEAR(num / den, 2.0, 0.2) << "x=" << x;
  }
}

TEST(AnalyticModels, RenyiGradientHasFiniteLimitAtUnitExponent) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Context c = scalar_vec(1.0);
  for (double x : {-0.7, 0.3, 1.2}) {
    const Vec xv = scalar_vec(x);
    const double near_one = renyi_gradient(t, c, 1.0 + 1e-6, xv, 0.5)(0);
    const double a = renyi_gradient(t, c, 1.01, xv, 0.5)(0);
    const double b = renyi_gradient(t, c, 1.02, xv, 0.5)(0);
    const double extrapolated = 2.0 * a - b;  // linear extrapolation to w = 1
    EXPECT_TRUE(std::isfinite(near_one));
    EXPECT_NEAR(near_one, extrapolated, 1e-3 * std::max(1.0, std::abs(extrapolated)) + 1e-5) << "x=" << x;
  }
}

TEST(AnalyticModels, TiltedScoreDecompositionHoldsToRoundoff) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Context c = scalar_vec(1.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(-3.0, 3.0), ls(-2.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Vec x = scalar_vec(ux(rng));
    const double s = std::pow(10.0, ls(rng));
    const Vec lhs = tilted_smoothed_score(t, c, 3.0, x, s);
    const Vec rhs = 2.0 * renyi_gradient(t, c, 3.0, x, s) + cfg_marginal_score(t, c, 3.0, x, s);
    EXPECT_LE(relative_gap(lhs, rhs), 1e-13);
  }
}

TEST(AnalyticModels, ClosedFormScoresMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(-2.5, 2.5), us(0.2, 2.0);
  for (const AnalyticTarget& t : {presets::canonical_bimodal(), presets::linear_gaussian_2d(),
                                  presets::linear_gaussian_3d(), presets::class_mixture_2d()}) {
    const int d = t.dim();
    const Context c = t.linear_gaussian() ? Context{Vec::Constant(t.linear_gaussian()->A.rows(), 0.8)} : Context{1};
    const GaussianMixture cond = t.conditional(c);
    const std::optional<GaussianMixture> tilt =
        t.linear_gaussian() ? std::optional(tilted_gmm(t, c, 2.5)) : std::nullopt;
    for (int i = 0; i < 50; ++i) {
      Vec x(d);
      for (int j = 0; j < d; ++j) x(j) = ux(rng);
      const double s = us(rng);
      const auto check = [&](const Vec& analytic, const GaussianMixture& g) {
        const Vec fd = finite_difference_gradient([&](const Vec& y) { return g.log_density(y, s); }, x, 1e-5);
        EXPECT_LE(relative_gap(analytic, fd), 1e-5);
      };
      check(smoothed_prior_score(t, x, s), t.prior());
      check(conditional_smoothed_score(t, c, x, s), cond);
      if (tilt) check(tilted_smoothed_score(t, c, 2.5, x, s), *tilt);
      // Score-denoiser consistency.
      EXPECT_LE((smoothed_prior_denoiser(t, x, s) - x - s * s * smoothed_prior_score(t, x, s)).norm(), 1e-12);
      EXPECT_LE((conditional_denoiser(t, c, x, s) - x - s * s * conditional_smoothed_score(t, c, x, s)).norm(), 1e-12);
    }
  }
}

TEST(AnalyticModels, ClassConditionalsReconstructPrior) {
  const AnalyticTarget t1 = presets::class_mixture_1d();
  const auto& cm1 = *t1.class_mixture();
  for (double x = -5.0; x <= 5.0; x += 0.05) {
    const Vec xv = scalar_vec(x);
    const double recon = cm1.class_priors[0] * cm1.class_conditionals[0].density(xv) +
                         cm1.class_priors[1] * cm1.class_conditionals[1].density(xv);
    EXPECT_NEAR(recon, t1.prior().density(xv), 1e-8);
  }
  const AnalyticTarget t2 = presets::class_mixture_2d();
  const auto& cm2 = *t2.class_mixture();
  for (double a = -4.0; a <= 4.0; a += 0.25) {
    for (double b = -4.0; b <= 4.0; b += 0.25) {
      const Vec xv = make_vec({a, b});
      const double recon = cm2.class_priors[0] * cm2.class_conditionals[0].density(xv) +
                           cm2.class_priors[1] * cm2.class_conditionals[1].density(xv);
      EXPECT_NEAR(recon, t2.prior().density(xv), 1e-8);
    }
  }
}

TEST(AnalyticModels, ClassMixtureTiltedScoreUnsupportedInThreeDimensions) {
  const AnalyticTarget t(ClassMixtureClassifier{
      {0.5, 0.5},
      {GaussianMixture::gaussian(Vec::Zero(3), Mat::Identity(3, 3)),
       GaussianMixture::gaussian(Vec::Ones(3), Mat::Identity(3, 3))}});
  EXPECT_THROW(tilted_smoothed_score(t, 0, 2.0, Vec::Zero(3), 1.0), unsupported_error);
  EXPECT_NO_THROW(tilted_smoothed_score(t, 0, 1.0, Vec::Zero(3), 1.0));
}

TEST(AnalyticModels, ReferenceSamplesGaussianTiltMean) {
  const AnalyticTarget t = presets::gaussian_case(1.0);
  const std::size_t n = 1000000;
  const ReferenceSample r = sample_reference(t, scalar_vec(3.0), 2.0, n, 42);
  double mean = 0.0;
  for (const Vec& p : r.points) mean += p(0);
  mean /= static_cast<double>(n);
  EXPECT_NEAR(mean, 2.0, 3.0 * std::sqrt((1.0 / 3.0) / n));
  EXPECT_FALSE(r.low_ess);
}

TEST(AnalyticModels, ReferenceAtUnitExponentMatchesConditionalSampling) {
  const AnalyticTarget t = presets::class_mixture_1d();
  const ReferenceSample r = sample_reference(t, 1, 1.0, 20000, 3);
  const GaussianMixture cond = t.conditional(1);
  SampleSet direct{{}, "conditional"};
  for (std::size_t i = 0; i < 20000; ++i) {
    StreamRng rng(99, i);
    direct.points.push_back(cond.sample(rng));
  }
  const SampleSet ref{r.points, "reference"};
  const double ks = ks_statistic(ref, direct);
  EXPECT_GT(ks_pvalue(ks, ref.size(), direct.size()), 0.01);
}

TEST(AnalyticModels, ReferenceModeMassMatchesQuadrature) {
  const AnalyticTarget t = presets::canonical_bimodal();
  const Context c = scalar_vec(1.0);
  const DensityOnBox tilt = tilted_density(t, c, 3.0);
  const double minor = integrate_adaptive([&](double y) { return tilt.density(scalar_vec(y)); }, -15.0, 0.0).value;
  const ReferenceSample r = sample_reference(t, c, 3.0, 100000, 5);
  EXPECT_NEAR(mode_mass_below(SampleSet{r.points, "ref"}, 0.0), minor, 0.01);
}

TEST(AnalyticModels, ClassMixtureReferenceUsesImportanceSampling) {
  const AnalyticTarget t = presets::class_mixture_1d();
  const ReferenceSample r = sample_reference(t, 0, 2.0, 50000, 8);
  EXPECT_GT(r.ess, 0.0);
  EXPECT_LE(r.ess, 50000.0);
  const DensityOnBox tilt = tilted_density(t, 0, 2.0);
  const double mean = integrate_adaptive([&](double y) { return y * tilt.density(scalar_vec(y)); }, -15.0, 15.0).value;
  const Moments m = moments(SampleSet{r.points, "ref"});
  EXPECT_NEAR(m.mean, mean, 0.02);
}
