#pragma once

#include "guidance_lab/analytic_models.hpp"
#include "guidance_lab/core.hpp"

#include <array>
#include <cmath>
#include <concepts>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace guidance_lab {

enum class GuidanceKind { unconditional, conditional, cfg, li_cfg, cfg_pp, delayed, ideal };

inline constexpr std::array<std::pair<GuidanceKind, std::string_view>, 7> kGuidanceNames{{
    {GuidanceKind::unconditional, "uncond"},
    {GuidanceKind::conditional, "cond"},
    {GuidanceKind::cfg, "cfg"},
    {GuidanceKind::li_cfg, "li-cfg"},
    {GuidanceKind::cfg_pp, "cfg++"},
    {GuidanceKind::delayed, "delayed"},
    {GuidanceKind::ideal, "ideal"},
}};

inline std::string_view to_string(GuidanceKind kind) {
  for (const auto& [k, name] : kGuidanceNames) {
    if (k == kind) return name;
  }
  return "?";
}

inline GuidanceKind parse_guidance_kind(std::string_view name) {
  for (const auto& [k, n] : kGuidanceNames) {
    if (n == name) return k;
  }
  throw config_error("unknown guidance kind '" + std::string(name) + "'");
}

/// Anything exposing the unconditional, conditional and tilted denoisers as
/// functions of (x, sigma). `ideal` may throw unsupported_error.
template <class S>
concept DenoiserSource = requires(const S& s, const Vec& x, double sigma) {
  { s.unconditional(x, sigma) } -> std::convertible_to<Vec>;
  { s.conditional(x, sigma) } -> std::convertible_to<Vec>;
  { s.ideal(x, sigma) } -> std::convertible_to<Vec>;
  { s.dim() } -> std::convertible_to<int>;
};

/// Denoisers of an analytic target with the context and tilt exponent frozen.
/// The conditional and tilted mixtures are built once here, not per call.
class TargetDenoisers {
 public:
  TargetDenoisers(const AnalyticTarget& target, const Context& c, std::optional<double> tilt_w = std::nullopt)
      : target_(target), context_(c), conditional_(target.conditional(c)) {
    if (tilt_w) {
      tilt_w_ = *tilt_w;
      if (target.linear_gaussian() != nullptr || *tilt_w == 1.0) tilted_ = tilted_gmm(target, c, *tilt_w);
    }
  }

  int dim() const { return target_.dim(); }
  const AnalyticTarget& target() const { return target_; }
  const Context& context() const { return context_; }

  Vec unconditional(const Vec& x, double sigma) const { return target_.prior().denoiser(x, sigma); }
  Vec conditional(const Vec& x, double sigma) const { return conditional_.denoiser(x, sigma); }

  Vec ideal(const Vec& x, double sigma) const {
    if (!tilt_w_) throw config_error("ideal denoiser requested without a tilt exponent");
    if (tilted_) return tilted_->denoiser(x, sigma);
    return x + sigma * sigma * tilted_smoothed_score(target_, context_, *tilt_w_, x, sigma);
  }

 private:
  AnalyticTarget target_;
  Context context_;
  GaussianMixture conditional_;
  std::optional<GaussianMixture> tilted_;
  std::optional<double> tilt_w_;
};

/// Denoisers supplied as plain callables, for models outside the analytic layer.
struct FunctionDenoisers {
  using Fn = std::function<Vec(const Vec&, double)>;
  Fn uncond;
  Fn cond;
  Fn tilted;
  int dimension = 1;

  int dim() const { return dimension; }
  Vec unconditional(const Vec& x, double sigma) const { return uncond(x, sigma); }
  Vec conditional(const Vec& x, double sigma) const { return cond(x, sigma); }
  Vec ideal(const Vec& x, double sigma) const {
    if (!tilted) throw unsupported_error("no tilted denoiser supplied");
    return tilted(x, sigma);
  }
};

inline Vec cfg_combine(const Vec& d_cond, const Vec& d_uncond, double w) { return w * d_cond + (1.0 - w) * d_uncond; }

/// Dynamic CFG++ scale lambda * sigma_next / (sigma_next - sigma_curr), where
/// sigma_next is the noisier of the two levels of a transition.
inline double cfg_pp_scale(double lambda, double sigma_next, double sigma_curr) {
  require(std::isfinite(lambda) && lambda >= 0.0 && lambda <= 1.0, "CFG++ lambda must lie in [0, 1]");
  require_positive(sigma_next, "sigma_next");
  require(std::isfinite(sigma_curr) && sigma_curr >= 0.0, "sigma_curr must be nonnegative");
  require(sigma_next > sigma_curr, "CFG++ scale needs sigma_next > sigma_curr");
  return lambda * sigma_next / (sigma_next - sigma_curr);
}

/// Noise levels (sigma_minus, sigma_plus) of the two-level delayed denoiser.
inline std::pair<double, double> delayed_levels(double w, double delta, double sigma) {
  require(std::isfinite(w) && w > 1.0, "delayed guidance needs w > 1");
  require_positive(delta, "delta");
  require_positive(sigma, "sigma");
  return {sigma * std::sqrt(w / (1.0 + delta)), sigma * std::sqrt((w - 1.0) / delta)};
}

template <DenoiserSource S>
Vec cfg_denoiser(const S& base, double w, const Vec& x, double sigma) {
  require_positive(sigma, "sigma");
  return cfg_combine(base.conditional(x, sigma), base.unconditional(x, sigma), w);
}

/// CFG inside [sigma_lo, sigma_hi] (inclusive), pure conditional outside.
template <DenoiserSource S>
Vec li_cfg_denoiser(const S& base, double w, double sigma_lo, double sigma_hi, const Vec& x, double sigma) {
  require(sigma_lo < sigma_hi, "LI-CFG interval needs sigma_lo < sigma_hi");
  const bool open = sigma >= sigma_lo && sigma <= sigma_hi;
  return cfg_denoiser(base, open ? w : 1.0, x, sigma);
}

/// w D(x | c) at sigma_minus plus (1 - w) D(x) at sigma_plus.
template <DenoiserSource S>
Vec delayed_denoiser(const S& base, double w, double delta, const Vec& x, double sigma) {
  const auto [minus, plus] = delayed_levels(w, delta, sigma);
  return w * base.conditional(x, minus) + (1.0 - w) * base.unconditional(x, plus);
}

template <DenoiserSource S>
Vec ideal_denoiser(const S& base, const Vec& x, double sigma) {
  require_positive(sigma, "sigma");
  return base.ideal(x, sigma);
}

/// Strategy parameters; only the fields of the selected kind are read.
struct GuidanceSpec {
  GuidanceKind kind = GuidanceKind::cfg;
  double w = 1.0;
  double sigma_lo = 0.0;
  double sigma_hi = 0.0;
  double lambda = 0.0;
  double delta = 0.0;

  void validate() const {
    switch (kind) {
      case GuidanceKind::unconditional:
      case GuidanceKind::conditional:
        break;
      case GuidanceKind::cfg:
        require(std::isfinite(w) && w >= 0.0, "guidance scale w must be >= 0");
        break;
      case GuidanceKind::li_cfg:
        require(std::isfinite(w) && w >= 0.0, "guidance scale w must be >= 0");
        require(sigma_lo >= 0.0 && sigma_lo < sigma_hi, "LI-CFG interval needs 0 <= sigma_lo < sigma_hi");
        break;
      case GuidanceKind::cfg_pp:
        require(std::isfinite(lambda) && lambda >= 0.0 && lambda <= 1.0, "CFG++ lambda must lie in [0, 1]");
        break;
      case GuidanceKind::delayed:
        require(std::isfinite(w) && w > 1.0, "delayed guidance needs w > 1");
        require(std::isfinite(delta) && delta > 0.0, "delayed guidance needs delta > 0");
        break;
      case GuidanceKind::ideal:
        require(std::isfinite(w) && w >= 1.0, "ideal denoiser needs w >= 1");
        break;
    }
  }

  static GuidanceSpec cfg(double w) { return {GuidanceKind::cfg, w}; }
  static GuidanceSpec ideal(double w) { return {GuidanceKind::ideal, w}; }
};

/// A denoiser source plus a strategy. Pure in (x, sigma, sigma_next); the
/// solver passes sigma_next so CFG++ can resolve its per-transition scale.
template <DenoiserSource S>
class GuidedDenoiser {
 public:
  GuidedDenoiser(S base, GuidanceSpec spec) : base_(std::move(base)), spec_(spec) { spec_.validate(); }

  const GuidanceSpec& spec() const noexcept { return spec_; }
  const S& base() const noexcept { return base_; }
  int dim() const { return base_.dim(); }

  /// Guidance scale in effect at a transition sigma -> sigma_next.
  double effective_scale(double sigma, double sigma_next) const {
    switch (spec_.kind) {
      case GuidanceKind::unconditional:
        return 0.0;
      case GuidanceKind::conditional:
        return 1.0;
      case GuidanceKind::li_cfg:
        return sigma >= spec_.sigma_lo && sigma <= spec_.sigma_hi ? spec_.w : 1.0;
      case GuidanceKind::cfg_pp:
        return cfg_pp_scale(spec_.lambda, sigma, sigma_next);
      default:
        return spec_.w;
    }
  }

  Vec operator()(const Vec& x, double sigma, double sigma_next) const {
    switch (spec_.kind) {
      case GuidanceKind::unconditional:
        return base_.unconditional(x, sigma);
      case GuidanceKind::conditional:
        return base_.conditional(x, sigma);
      case GuidanceKind::cfg:
        return cfg_denoiser(base_, spec_.w, x, sigma);
      case GuidanceKind::li_cfg:
        return li_cfg_denoiser(base_, spec_.w, spec_.sigma_lo, spec_.sigma_hi, x, sigma);
      case GuidanceKind::cfg_pp:
        return cfg_denoiser(base_, cfg_pp_scale(spec_.lambda, sigma, sigma_next), x, sigma);
      case GuidanceKind::delayed:
        return delayed_denoiser(base_, spec_.w, spec_.delta, x, sigma);
      case GuidanceKind::ideal:
        return ideal_denoiser(base_, x, sigma);
    }
    throw config_error("unhandled guidance kind");
  }

  /// Schedule-free evaluation; CFG++ has no scale without a transition.
  Vec operator()(const Vec& x, double sigma) const {
    if (spec_.kind == GuidanceKind::cfg_pp) throw config_error("CFG++ needs the next noise level");
    return (*this)(x, sigma, 0.0);
  }

 private:
  S base_;
  GuidanceSpec spec_;
};

}  // namespace guidance_lab
