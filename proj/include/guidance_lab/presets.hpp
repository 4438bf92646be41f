#pragma once

#include "guidance_lab/analytic_models.hpp"
#include "guidance_lab/cfgig.hpp"

namespace guidance_lab::presets {

inline Mat identity(int d) { return Mat::Identity(d, d); }

/// Prior N(0, 1), likelihood N(c; x, gamma^2).
inline AnalyticTarget gaussian_case(double gamma) {
  return AnalyticTarget(GaussianMixture::scalar({1.0}, {0.0}, {1.0}), LinearGaussianClassifier{identity(1), gamma});
}

/// Canonical bimodal toy: equal modes at -1.5 and 1.5 (sd 0.7), a broad
/// likelihood centred on the positive mode. With w = 3 the tilt keeps a
/// visible negative mode that CFG underweights.
struct Bimodal {
  static constexpr double context = 1.0;
  static constexpr double w = 3.0;
  static constexpr double gamma = 2.0;
  static constexpr double mode_split = 0.0;  // negative side is the minor mode
};

inline AnalyticTarget canonical_bimodal() {
  return AnalyticTarget(GaussianMixture::scalar({0.5, 0.5}, {-1.5, 1.5}, {0.49, 0.49}),
                        LinearGaussianClassifier{identity(1), Bimodal::gamma});
}

/// Refinement settings for the bimodal toy: 32 initial levels, then 8 renoising
/// rounds to sigma* = 1 that share the remaining 64 levels.
inline CfgigConfig bimodal_cfgig() {
  CfgigConfig c;
  c.w0 = 1.0;
  c.w = Bimodal::w;
  c.R = 8;
  c.T = 96;
  c.T0 = 32;
  c.sigma_star = 1.0;
  return c;
}

/// Two classes in 1D: a single Gaussian and a two-component mixture.
inline AnalyticTarget class_mixture_1d() {
  return AnalyticTarget(ClassMixtureClassifier{
      {0.4, 0.6},
      {GaussianMixture::scalar({1.0}, {-1.0}, {0.5}), GaussianMixture::scalar({0.5, 0.5}, {0.8, 2.0}, {0.3, 0.6})}});
}

/// Two classes in 2D with full covariances.
inline AnalyticTarget class_mixture_2d() {
  Mat c0(2, 2), c1(2, 2), c2(2, 2);
  c0 << 0.6, 0.2, 0.2, 0.5;
  c1 << 0.4, -0.1, -0.1, 0.7;
  c2 << 0.5, 0.0, 0.0, 0.3;
  return AnalyticTarget(ClassMixtureClassifier{
      {0.5, 0.5},
      {GaussianMixture::gaussian(make_vec({-1.0, 0.5}), c0),
       GaussianMixture({0.3, 0.7}, {make_vec({1.0, -0.5}), make_vec({0.5, 1.5})}, {c1, c2})}});
}

/// Two-dimensional mixture prior observed through a 1 x 2 linear map.
inline AnalyticTarget linear_gaussian_2d() {
  Mat c0(2, 2), c1(2, 2);
  c0 << 0.5, 0.1, 0.1, 0.4;
  c1 << 0.3, 0.0, 0.0, 0.6;
  Mat A(1, 2);
  A << 1.0, 0.5;
  return AnalyticTarget(GaussianMixture({0.6, 0.4}, {make_vec({-1.0, 0.0}), make_vec({1.0, 1.0})}, {c0, c1}),
                        LinearGaussianClassifier{A, 1.2});
}

/// Three-dimensional mixture (closed-form paths only).
inline AnalyticTarget linear_gaussian_3d() {
  Mat c0 = Mat::Identity(3, 3) * 0.5;
  Mat c1(3, 3);
  c1 << 0.6, 0.1, 0.0, 0.1, 0.4, 0.05, 0.0, 0.05, 0.3;
  return AnalyticTarget(
      GaussianMixture({0.5, 0.5}, {make_vec({-1.0, 0.0, 0.5}), make_vec({1.0, 0.5, -0.5})}, {c0, c1}),
      LinearGaussianClassifier{identity(3), 1.5});
}

}  // namespace guidance_lab::presets
