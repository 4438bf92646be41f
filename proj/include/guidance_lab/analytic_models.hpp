#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/gaussian_mixture.hpp"
#include "guidance_lab/particles.hpp"
#include "guidance_lab/quadrature.hpp"
#include "guidance_lab/rng.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <variant>
#include <vector>

namespace guidance_lab {

/// Likelihood g(c | x0) = N(c; A x0, gamma^2 I).
struct LinearGaussianClassifier {
  Mat A;
  double gamma = 1.0;
};

/// Finite context set: g(c | x0) = p(c) p(x0 | c) / p(x0), with p(x0 | c) a mixture.
struct ClassMixtureClassifier {
  std::vector<double> class_priors;
  std::vector<GaussianMixture> class_conditionals;
};

/// An observation vector (linear-Gaussian) or a class label (class mixture).
using Context = std::variant<Vec, int>;

/// Prior p0 plus a classifier family.
class AnalyticTarget {
 public:
  AnalyticTarget(GaussianMixture prior, LinearGaussianClassifier classifier)
      : prior_(std::move(prior)), classifier_(std::move(classifier)) {
    const auto& lg = std::get<LinearGaussianClassifier>(classifier_);
    require_positive(lg.gamma, "classifier gamma");
    require(lg.A.cols() == prior_.dim(), "classifier matrix must have as many columns as the prior dimension");
    require(lg.A.rows() >= 1 && lg.A.rows() <= kMaxDim, "classifier output dimension must be 1..3");
    require(lg.A.allFinite(), "classifier matrix must be finite");
  }

  /// The prior is the class-prior-weighted mixture of the class conditionals.
  explicit AnalyticTarget(ClassMixtureClassifier classifier)
      : prior_(build_prior(classifier)), classifier_(std::move(classifier)) {}

  const GaussianMixture& prior() const noexcept { return prior_; }
  int dim() const noexcept { return prior_.dim(); }

  const LinearGaussianClassifier* linear_gaussian() const { return std::get_if<LinearGaussianClassifier>(&classifier_); }
  const ClassMixtureClassifier* class_mixture() const { return std::get_if<ClassMixtureClassifier>(&classifier_); }

  void check_context(const Context& c) const {
    if (const auto* lg = linear_gaussian()) {
      const Vec* obs = std::get_if<Vec>(&c);
      require(obs != nullptr, "linear-Gaussian classifier needs a vector context");
      require(obs->size() == lg->A.rows(), "context length must match the classifier output dimension");
      require_finite(*obs, "context");
    } else {
      const int* label = std::get_if<int>(&c);
      require(label != nullptr, "class-mixture classifier needs an integer class label");
      require(*label >= 0 && *label < static_cast<int>(class_mixture()->class_priors.size()), "unknown class label");
    }
  }

  /// log g(c | x0).
  double log_likelihood(const Context& c, const Vec& x0) const {
    check_context(c);
    if (const auto* lg = linear_gaussian()) {
      return log_normal_isotropic(std::get<Vec>(c), lg->A * x0, lg->gamma * lg->gamma);
    }
    const auto& cm = *class_mixture();
    const int k = std::get<int>(c);
    return std::log(cm.class_priors[k]) + cm.class_conditionals[k].log_density(x0) - prior_.log_density(x0);
  }

  /// The conditional p0(x0 | c) as a mixture (closed form for both families).
  GaussianMixture conditional(const Context& c) const {
    check_context(c);
    if (const auto* lg = linear_gaussian()) {
      return prior_.condition_linear_gaussian(lg->A, std::get<Vec>(c), lg->gamma * lg->gamma);
    }
    return class_mixture()->class_conditionals[static_cast<std::size_t>(std::get<int>(c))];
  }

 private:
  static GaussianMixture build_prior(const ClassMixtureClassifier& cm) {
    require(!cm.class_priors.empty(), "class-mixture classifier needs at least one class");
    require(cm.class_priors.size() == cm.class_conditionals.size(), "one class conditional per class prior");
    double total = 0.0;
    for (double p : cm.class_priors) {
      require(std::isfinite(p) && p > 0.0, "class priors must be positive");
      total += p;
    }
    require(std::abs(total - 1.0) <= 1e-12, "class priors must sum to 1");
    for (const auto& g : cm.class_conditionals) {
      require(g.dim() == cm.class_conditionals.front().dim(), "class conditionals must share one dimension");
    }
    return GaussianMixture::concatenate(cm.class_conditionals, cm.class_priors);
  }

  GaussianMixture prior_;
  std::variant<LinearGaussianClassifier, ClassMixtureClassifier> classifier_;
};

namespace detail {

inline void check_sigma(double sigma) { require_positive(sigma, "sigma"); }

inline void check_tilt(double w) {
  require(std::isfinite(w) && w >= 1.0, "tilt exponent w must be >= 1");
}

inline void check_point(const AnalyticTarget& t, const Vec& x) {
  require(x.size() == t.dim(), "point dimension does not match the target");
  require_finite(x, "x");
}

}  // namespace detail

inline Vec smoothed_prior_score(const AnalyticTarget& target, const Vec& x, double sigma) {
  detail::check_sigma(sigma);
  detail::check_point(target, x);
  return target.prior().score(x, sigma);
}

inline Vec smoothed_prior_denoiser(const AnalyticTarget& target, const Vec& x, double sigma) {
  return x + sigma * sigma * smoothed_prior_score(target, x, sigma);
}

inline Vec conditional_smoothed_score(const AnalyticTarget& target, const Context& c, const Vec& x, double sigma) {
  detail::check_sigma(sigma);
  detail::check_point(target, x);
  return target.conditional(c).score(x, sigma);
}

inline Vec conditional_denoiser(const AnalyticTarget& target, const Context& c, const Vec& x, double sigma) {
  return x + sigma * sigma * conditional_smoothed_score(target, c, x, sigma);
}

/// g(c | x0)^w p0(x0).
inline double tilted_unnormalized_density(const AnalyticTarget& target, const Context& c, double w, const Vec& x0) {
  detail::check_tilt(w);
  detail::check_point(target, x0);
  return std::exp(w * target.log_likelihood(c, x0) + target.prior().log_density(x0));
}

/// Normalized tilt as a mixture. Closed form for linear-Gaussian classifiers
/// (g^w is Gaussian in x0 with noise variance gamma^2 / w) and for w = 1.
inline GaussianMixture tilted_gmm(const AnalyticTarget& target, const Context& c, double w) {
  detail::check_tilt(w);
  if (const auto* lg = target.linear_gaussian()) {
    target.check_context(c);
    return target.prior().condition_linear_gaussian(lg->A, std::get<Vec>(c), lg->gamma * lg->gamma / w);
  }
  if (w == 1.0) return target.conditional(c);
  throw unsupported_error("the class-mixture tilt with w > 1 is not a Gaussian mixture");
}

/// log of the integral of g^w p0. Closed form for linear-Gaussian, quadrature (d <= 2) otherwise.
inline double tilted_log_normalizer(const AnalyticTarget& target, const Context& c, double w,
                                    const QuadratureOptions& options = {}) {
  detail::check_tilt(w);
  target.check_context(c);
  if (const auto* lg = target.linear_gaussian()) {
    const double m = static_cast<double>(lg->A.rows());
    const double g2 = lg->gamma * lg->gamma;
    // N(c; Ax, g2)^w = (2 pi g2)^{-m w / 2} (2 pi g2 / w)^{m / 2} N(c; Ax, g2 / w)
    const double scale = -0.5 * m * w * std::log(2.0 * std::numbers::pi * g2) +
                         0.5 * m * std::log(2.0 * std::numbers::pi * g2 / w);
    return scale + target.prior().log_evidence_linear_gaussian(lg->A, std::get<Vec>(c), g2 / w);
  }
  if (target.dim() > 2) throw unsupported_error("tilt normalizer by quadrature needs dimension <= 2");
  const GaussianMixture cond = target.conditional(c);
  auto f = [&](const Vec& x0) { return tilted_unnormalized_density(target, c, w, x0); };
  return std::log(integrate_box(f, cond.support_box(), options).value);
}

/// Normalized tilted density with a box carrying its mass, for the quadrature oracle.
inline DensityOnBox tilted_density(const AnalyticTarget& target, const Context& c, double w) {
  const double log_z = tilted_log_normalizer(target, c, w);
  // tilt = g^(w-1) * g * p0 <= p(c) p0(x0 | c), so the conditional's box holds its mass.
  const Box support = target.linear_gaussian() != nullptr ? tilted_gmm(target, c, w).support_box()
                                                          : target.conditional(c).support_box();
  return DensityOnBox{[target, c, w, log_z](const Vec& x0) {
                        return std::exp(w * target.log_likelihood(c, x0) + target.prior().log_density(x0) - log_z);
                      },
                      support};
}

/// Score of the tilt convolved with N(0, sigma^2 I).
inline Vec tilted_smoothed_score(const AnalyticTarget& target, const Context& c, double w, const Vec& x, double sigma) {
  detail::check_sigma(sigma);
  detail::check_point(target, x);
  detail::check_tilt(w);
  if (target.linear_gaussian() != nullptr || w == 1.0) return tilted_gmm(target, c, w).score(x, sigma);
  if (target.dim() > 2) {
    throw unsupported_error("tilted score for a class-mixture classifier is only available for dimension <= 2");
  }
  // The score ignores normalization, so skip the normalizer quadrature.
  const DensityOnBox unnormalized{
      [&](const Vec& x0) { return std::exp(w * target.log_likelihood(c, x0) + target.prior().log_density(x0)); },
      target.conditional(c).support_box()};
  return oracle_smoothed_score(unnormalized, x, sigma);
}

/// w * conditional score + (1 - w) * prior score, both smoothed at sigma.
inline Vec cfg_marginal_score(const AnalyticTarget& target, const Context& c, double w, const Vec& x, double sigma) {
  require(std::isfinite(w) && w >= 0.0, "guidance scale w must be >= 0");
  return w * conditional_smoothed_score(target, c, x, sigma) + (1.0 - w) * smoothed_prior_score(target, x, sigma);
}

/// Gradient of the order-w Renyi term: (tilted score - CFG score) / (w - 1).
inline Vec renyi_gradient(const AnalyticTarget& target, const Context& c, double w, const Vec& x, double sigma) {
  require(std::isfinite(w) && w > 1.0, "Renyi gradient needs w > 1");
  return (tilted_smoothed_score(target, c, w, x, sigma) - cfg_marginal_score(target, c, w, x, sigma)) / (w - 1.0);
}

struct ReferenceSample {
  std::vector<Vec> points;
  double ess = 0.0;
  bool low_ess = false;
};

/// Draws from the normalized tilt. Exact when it is a mixture; otherwise
/// self-normalized importance sampling from the conditional followed by a
/// systematic resample (ESS reported, flagged below n / 10).
inline ReferenceSample sample_reference(const AnalyticTarget& target, const Context& c, double w, std::size_t n,
                                        std::uint64_t seed) {
  require(n >= 1, "sample_reference needs n >= 1");
  detail::check_tilt(w);
  target.check_context(c);
  ReferenceSample out;
  out.points.resize(n);
  if (target.linear_gaussian() != nullptr || w == 1.0) {
    const GaussianMixture tilt = tilted_gmm(target, c, w);
    for (std::size_t i = 0; i < n; ++i) {
      StreamRng rng(seed, i);
      out.points[i] = tilt.sample(rng);
    }
    out.ess = static_cast<double>(n);
    return out;
  }
  const GaussianMixture proposal = target.conditional(c);
  std::vector<Vec> draws(n);
  std::vector<double> log_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    StreamRng rng(seed, i);
    draws[i] = proposal.sample(rng);
    // g^w p0 / p(x0 | c) = p(c) g^(w-1)
    log_w[i] = (w - 1.0) * target.log_likelihood(c, draws[i]);
  }
  out.ess = ess(log_w);
  out.low_ess = out.ess < static_cast<double>(n) / 10.0;
  StreamRng rng(seed, n);
  const std::vector<std::size_t> idx = systematic_resample(log_w, rng);
  for (std::size_t i = 0; i < n; ++i) out.points[i] = draws[idx[i]];
  return out;
}

}  // namespace guidance_lab
