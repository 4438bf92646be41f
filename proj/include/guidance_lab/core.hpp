#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>

namespace guidance_lab {

/// Largest state dimension handled by the closed-form paths.
inline constexpr int kMaxDim = 3;

// Stack-allocated vectors/matrices capped at kMaxDim; no heap traffic in the
// inner loops of the solvers.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Rejected input: bad parameters, inconsistent dimensions, unknown names.
class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value or failed to converge.
class numerical_error : public std::runtime_error {
 public:
  explicit numerical_error(const std::string& what, long step = -1)
      : std::runtime_error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// The requested operation has no implementation for this target/dimension.
class unsupported_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline Vec make_vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline Vec scalar_vec(double x) {
  Vec v(1);
  v(0) = x;
  return v;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void require(bool condition, const std::string& message) {
  if (!condition) throw config_error(message);
}

inline void require_finite(const Vec& x, const char* what) {
  if (!x.allFinite()) throw config_error(std::string(what) + " must be finite");
}

inline void require_positive(double value, const char* what) {
  if (!(value > 0.0) || !std::isfinite(value)) throw config_error(std::string(what) + " must be positive and finite");
}

/// log N(x; mean, var * I) for a scalar variance.
inline double log_normal_isotropic(const Vec& x, const Vec& mean, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * (x - mean).squaredNorm() / var - 0.5 * d * std::log(2.0 * std::numbers::pi * var);
}

}  // namespace guidance_lab
