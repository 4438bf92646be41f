#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/quadrature.hpp"
#include "guidance_lab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace guidance_lab {

/// log(sum exp(t_i)) accumulated one term at a time.
class StreamingLogSum {
 public:
  void add(double t) {
    if (!(t > -std::numeric_limits<double>::infinity())) return;
    if (t > best_) {
      sum_ = sum_ * std::exp(best_ - t) + 1.0;
      best_ = t;
    } else {
      sum_ += std::exp(t - best_);
    }
  }
  double value() const { return sum_ > 0.0 ? best_ + std::log(sum_) : -std::numeric_limits<double>::infinity(); }

 private:
  double best_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

/// Finite mixture of full-covariance Gaussians in dimension 1..3.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<Vec> means, std::vector<Mat> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    require(!weights_.empty(), "a Gaussian mixture needs at least one component");
    require(weights_.size() == means_.size() && means_.size() == covs_.size(),
            "mixture weights, means and covariances must have equal length");
    dim_ = static_cast<int>(means_.front().size());
    require(dim_ >= 1 && dim_ <= kMaxDim, "mixture dimension must be 1, 2 or 3");
    double total = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      require(std::isfinite(weights_[k]) && weights_[k] >= 0.0, "mixture weights must be nonnegative");
      require(means_[k].size() == dim_, "all mixture means must share one dimension");
      require_finite(means_[k], "mixture mean");
      require(covs_[k].rows() == dim_ && covs_[k].cols() == dim_, "covariance shape must be d x d");
      require(covs_[k].allFinite(), "covariance entries must be finite");
      require((covs_[k] - covs_[k].transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + covs_[k].cwiseAbs().maxCoeff()),
              "covariances must be symmetric");
      Eigen::LLT<Mat> llt(covs_[k]);
      require(llt.info() == Eigen::Success, "covariances must be positive definite");
      chol_.push_back(llt);
      log_dets_.push_back(2.0 * llt.matrixLLT().diagonal().array().log().sum());
      total += weights_[k];
    }
    require(std::abs(total - 1.0) <= 1e-12, "mixture weights must sum to 1");
    for (double& w : weights_) w /= total;
    log_weights_.resize(weights_.size());
    std::transform(weights_.begin(), weights_.end(), log_weights_.begin(), [](double w) {
      return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
    });
  }

  /// Single Gaussian N(mean, cov).
  static GaussianMixture gaussian(const Vec& mean, const Mat& cov) { return GaussianMixture({1.0}, {mean}, {cov}); }

  /// 1D mixture with scalar means and variances.
  static GaussianMixture scalar(std::vector<double> weights, const std::vector<double>& means,
                                const std::vector<double>& variances) {
    require(means.size() == variances.size(), "means and variances must have equal length");
    std::vector<Vec> mu;
    std::vector<Mat> cov;
    for (std::size_t k = 0; k < means.size(); ++k) {
      mu.push_back(scalar_vec(means[k]));
      Mat c(1, 1);
      c(0, 0) = variances[k];
      cov.push_back(c);
    }
    return GaussianMixture(std::move(weights), std::move(mu), std::move(cov));
  }

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return weights_.size(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<Vec>& means() const noexcept { return means_; }
  const std::vector<Mat>& covariances() const noexcept { return covs_; }

  /// log p_sigma(x), the mixture convolved with N(0, sigma^2 I).
  double log_density(const Vec& x, double sigma = 0.0) const {
    check_point(x);
    StreamingLogSum acc;
    for (std::size_t k = 0; k < size(); ++k) acc.add(log_weights_[k] + component_log_density(k, x, sigma, nullptr));
    return acc.value();
  }

  double density(const Vec& x, double sigma = 0.0) const { return std::exp(log_density(x, sigma)); }

  /// Gradient of log p_sigma at x (responsibility-weighted component scores).
  Vec score(const Vec& x, double sigma) const {
    check_point(x);
    require(sigma >= 0.0 && std::isfinite(sigma), "sigma must be nonnegative");
    // Streaming log-sum-exp: rescale the running sums whenever the max moves.
    double best = -std::numeric_limits<double>::infinity();
    double norm = 0.0;
    Vec out = Vec::Zero(dim_);
    Vec grad(dim_);
    for (std::size_t k = 0; k < size(); ++k) {
      const double term = log_weights_[k] + component_log_density(k, x, sigma, &grad);
      if (!std::isfinite(term)) continue;
      if (term > best) {
        const double shrink = std::exp(best - term);
        norm *= shrink;
        out *= shrink;
        best = term;
      }
      const double r = std::exp(term - best);
      norm += r;
      out += r * grad;
    }
    return out / norm;
  }

  /// Posterior mean E[X0 | X0 + sigma Z = x], via Tweedie.
  Vec denoiser(const Vec& x, double sigma) const {
    require_positive(sigma, "sigma");
    return x + sigma * sigma * score(x, sigma);
  }

  /// Law of X0 + sigma Z.
  GaussianMixture smoothed(double sigma) const {
    std::vector<Mat> covs = covs_;
    for (Mat& c : covs) c += sigma * sigma * Mat::Identity(dim_, dim_);
    return GaussianMixture(weights_, means_, std::move(covs));
  }

  /// log of the integral of N(obs; A x, obs_var I) p(x) dx.
  double log_evidence_linear_gaussian(const Mat& A, const Vec& obs, double obs_var) const {
    check_observation(A, obs, obs_var);
    const int m = static_cast<int>(A.rows());
    std::vector<double> terms(size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < size(); ++k) {
      const Mat S = A * covs_[k] * A.transpose() + obs_var * Mat::Identity(m, m);
      terms[k] = log_weights_[k] + log_normal(obs, A * means_[k], S);
      best = std::max(best, terms[k]);
    }
    return log_sum_exp(terms, best);
  }

  /// Posterior mixture proportional to N(obs; A x, obs_var I) p(x).
  GaussianMixture condition_linear_gaussian(const Mat& A, const Vec& obs, double obs_var) const {
    check_observation(A, obs, obs_var);
    const int m = static_cast<int>(A.rows());
    std::vector<double> terms(size());
    std::vector<Vec> means(size());
    std::vector<Mat> covs(size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < size(); ++k) {
      const Mat S = A * covs_[k] * A.transpose() + obs_var * Mat::Identity(m, m);
      Eigen::LLT<Mat> llt(S);
      const Mat gain = llt.solve(A * covs_[k]).transpose();  // Sigma A^T S^-1
      means[k] = means_[k] + gain * (obs - A * means_[k]);
      Mat cov = covs_[k] - gain * A * covs_[k];
      covs[k] = 0.5 * (cov + cov.transpose());
      terms[k] = log_weights_[k] + log_normal(obs, A * means_[k], S);
      best = std::max(best, terms[k]);
    }
    const double lse = log_sum_exp(terms, best);
    std::vector<double> weights(size());
    for (std::size_t k = 0; k < size(); ++k) weights[k] = std::exp(terms[k] - lse);
    double total = 0.0;
    for (double w : weights) total += w;
    for (double& w : weights) w /= total;
    return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
  }

  Vec mean() const {
    Vec out = Vec::Zero(dim_);
    for (std::size_t k = 0; k < size(); ++k) out += weights_[k] * means_[k];
    return out;
  }

  Mat covariance() const {
    const Vec mu = mean();
    Mat out = Mat::Zero(dim_, dim_);
    for (std::size_t k = 0; k < size(); ++k) {
      const Vec dm = means_[k] - mu;
      out += weights_[k] * (covs_[k] + dm * dm.transpose());
    }
    return out;
  }

  Vec sample(StreamRng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < size(); ++k) {
      acc += weights_[k];
      if (u < acc) break;
    }
    const Mat L = Eigen::LLT<Mat>(covs_[k]).matrixL();
    return means_[k] + L * rng.normal_vec(dim_);
  }

  /// Box holding every component out to `n_sd` marginal standard deviations.
  Box support_box(double n_sd = 12.0) const {
    Box box{Vec::Constant(dim_, std::numeric_limits<double>::infinity()),
            Vec::Constant(dim_, -std::numeric_limits<double>::infinity())};
    for (std::size_t k = 0; k < size(); ++k) {
      if (weights_[k] <= 0.0) continue;
      const Vec sd = covs_[k].diagonal().cwiseSqrt();
      box.lo = box.lo.cwiseMin(means_[k] - n_sd * sd);
      box.hi = box.hi.cwiseMax(means_[k] + n_sd * sd);
    }
    return box;
  }

  /// Mixture whose components are the union of `parts`, weighted by `part_weights`.
  static GaussianMixture concatenate(const std::vector<GaussianMixture>& parts, const std::vector<double>& part_weights) {
    require(parts.size() == part_weights.size() && !parts.empty(), "concatenate: one weight per part");
    std::vector<double> weights;
    std::vector<Vec> means;
    std::vector<Mat> covs;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      for (std::size_t k = 0; k < parts[p].size(); ++k) {
        weights.push_back(part_weights[p] * parts[p].weights_[k]);
        means.push_back(parts[p].means_[k]);
        covs.push_back(parts[p].covs_[k]);
      }
    }
    double total = 0.0;
    for (double w : weights) total += w;
    for (double& w : weights) w /= total;
    return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
  }

  static double log_normal(const Vec& x, const Vec& mean, const Mat& cov) {
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success) throw numerical_error("covariance lost positive definiteness");
    const Vec diff = x - mean;
    const Vec white = llt.matrixL().solve(diff);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * white.squaredNorm() - 0.5 * log_det - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
  }

 private:
  double component_log_density(std::size_t k, const Vec& x, double sigma, Vec* grad) const {
    // Unsmoothed densities are evaluated in bulk by quadrature; reuse the factor.
    Eigen::LLT<Mat> smoothed;
    if (sigma > 0.0) {
      Mat cov = covs_[k];
      cov.diagonal().array() += sigma * sigma;
      smoothed.compute(cov);
      if (smoothed.info() != Eigen::Success) throw numerical_error("covariance lost positive definiteness");
    }
    const Eigen::LLT<Mat>& llt = sigma > 0.0 ? smoothed : chol_[k];
    const Vec diff = x - means_[k];
    if (grad != nullptr) *grad = -llt.solve(diff);
    const Vec white = llt.matrixL().solve(diff);
    const double log_det =
        sigma > 0.0 ? 2.0 * llt.matrixLLT().diagonal().array().log().sum() : log_dets_[k];
    return -0.5 * white.squaredNorm() - 0.5 * log_det - 0.5 * dim_ * kLog2Pi;
  }

  static double log_sum_exp(const std::vector<double>& terms, double best) {
    if (!std::isfinite(best)) return best;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
  }

  void check_point(const Vec& x) const {
    require(x.size() == dim_, "point dimension does not match the mixture");
    require_finite(x, "x");
  }

  void check_observation(const Mat& A, const Vec& obs, double obs_var) const {
    require(A.cols() == dim_, "observation matrix must have d columns");
    require(A.rows() == obs.size(), "observation matrix rows must match the context length");
    require_positive(obs_var, "observation variance");
    require_finite(obs, "context");
  }

  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<Vec> means_;
  std::vector<Mat> covs_;
  std::vector<Eigen::LLT<Mat>> chol_;
  std::vector<double> log_dets_;
  static constexpr double kLog2Pi = 1.8378770664093454836;
  int dim_ = 1;
};

}  // namespace guidance_lab
