#pragma once

#include "guidance_lab/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <queue>
#include <vector>

namespace guidance_lab {

struct QuadratureOptions {
  double abs_tol = 1e-10;
  int max_panels = 20000;
  int initial_panels = 8;
};

template <class V>
struct QuadratureResult {
  V value;
  double error = 0.0;
  int panels = 0;
};

namespace detail {

template <int N>
struct GaussLegendreRule {
  std::array<double, N> nodes{};
  std::array<double, N> weights{};

  GaussLegendreRule() {
    // Newton iteration on P_N starting from the Chebyshev-like guess.
    for (int i = 0; i < (N + 1) / 2; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (N + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0;
        double p1 = 0.0;
        for (int j = 1; j <= N; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = N * (z * p0 - p1) / (z * z - 1.0);
        const double dz = p0 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      nodes[i] = -z;
      nodes[N - 1 - i] = z;
      weights[i] = weights[N - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
  }
};

template <int N>
const GaussLegendreRule<N>& gauss_legendre() {
  static const GaussLegendreRule<N> rule;
  return rule;
}

inline double error_norm(double v) { return std::abs(v); }

template <class Derived>
double error_norm(const Eigen::MatrixBase<Derived>& v) {
  return v.template lpNorm<Eigen::Infinity>();
}

template <class V>
V zero_like(const V& v) {
  if constexpr (std::is_same_v<V, double>) {
    return 0.0;
  } else {
    return V::Zero(v.rows(), v.cols());
  }
}

template <class F>
auto panel_estimate(F& f, double a, double b) {
  const auto& lo = gauss_legendre<10>();
  const auto& hi = gauss_legendre<20>();
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  using V = std::decay_t<decltype(f(mid))>;
  V coarse = f(mid + half * lo.nodes[0]) * lo.weights[0];
  for (int i = 1; i < 10; ++i) coarse += f(mid + half * lo.nodes[i]) * lo.weights[i];
  V fine = f(mid + half * hi.nodes[0]) * hi.weights[0];
  for (int i = 1; i < 20; ++i) fine += f(mid + half * hi.nodes[i]) * hi.weights[i];
  coarse *= half;
  fine *= half;
  const double err = error_norm(V(fine - coarse));
  return std::pair<V, double>(std::move(fine), err);
}

}  // namespace detail

/// Globally adaptive Gauss-Legendre (10/20-point pair) on [a, b].
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate drops below abs_tol. F may return double or an Eigen vector.
template <class F>
auto integrate_adaptive(F&& f, double a, double b, const QuadratureOptions& options = {}) {
  using V = std::decay_t<decltype(f(a))>;
  struct Panel {
    double a, b;
    V value;
    double error;
  };
  auto cmp = [](const Panel& l, const Panel& r) { return l.error < r.error; };
  std::priority_queue<Panel, std::vector<Panel>, decltype(cmp)> queue(cmp);

  QuadratureResult<V> result;
  if (!(b > a)) {
    result.value = detail::zero_like(f(a));
    return result;
  }
  const int initial = std::max(1, options.initial_panels);
  V total = detail::zero_like(f(a));
  double total_err = 0.0;
  for (int i = 0; i < initial; ++i) {
    const double lo = a + (b - a) * i / initial;
    const double hi = i + 1 == initial ? b : a + (b - a) * (i + 1) / initial;
    auto [v, e] = detail::panel_estimate(f, lo, hi);
    total += v;
    total_err += e;
    queue.push(Panel{lo, hi, std::move(v), e});
  }
  int panels = initial;
  while (total_err > options.abs_tol) {
    if (panels >= options.max_panels) {
      throw numerical_error("adaptive quadrature did not converge within the panel budget");
    }
    Panel worst = queue.top();
    queue.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      throw numerical_error("adaptive quadrature reached floating-point resolution");
    }
    auto [vl, el] = detail::panel_estimate(f, worst.a, mid);
    auto [vr, er] = detail::panel_estimate(f, mid, worst.b);
    total += vl + vr - worst.value;
    total_err += el + er - worst.error;
    queue.push(Panel{worst.a, mid, std::move(vl), el});
    queue.push(Panel{mid, worst.b, std::move(vr), er});
    ++panels;
  }
  // Re-sum to shed the drift accumulated by incremental updates.
  V sum = detail::zero_like(total);
  double err = 0.0;
  while (!queue.empty()) {
    sum += queue.top().value;
    err += queue.top().error;
    queue.pop();
  }
  result.value = sum;
  result.error = err;
  result.panels = panels;
  return result;
}

/// Axis-aligned integration box in dimension 1 or 2.
struct Box {
  Vec lo;
  Vec hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool empty() const { return (hi.array() <= lo.array()).any(); }

  Box intersect(const Box& other) const { return Box{lo.cwiseMax(other.lo), hi.cwiseMin(other.hi)}; }
};

/// Integral of f over a 1D or 2D box; the 2D case nests adaptive rules.
template <class F>
auto integrate_box(F&& f, const Box& box, const QuadratureOptions& options = {}) {
  const int d = box.dim();
  if (d == 1) {
    auto g = [&](double t) { return f(scalar_vec(t)); };
    return integrate_adaptive(g, box.lo(0), box.hi(0), options);
  }
  if (d != 2) throw unsupported_error("quadrature is implemented for dimension 1 and 2 only");

  QuadratureOptions inner = options;
  const double width = std::max(box.hi(0) - box.lo(0), 1e-300);
  inner.abs_tol = 0.1 * options.abs_tol / width;
  QuadratureOptions outer = options;
  outer.abs_tol = 0.9 * options.abs_tol;
  auto row = [&](double u) {
    auto g = [&](double v) { return f(make_vec({u, v})); };
    return integrate_adaptive(g, box.lo(1), box.hi(1), inner).value;
  };
  return integrate_adaptive(row, box.lo(0), box.hi(0), outer);
}

/// Pointwise-evaluable density together with a box carrying its mass.
struct DensityOnBox {
  std::function<double(const Vec&)> density;
  Box support;
};

/// Zeroth and first moments of density(x0) * N(x; x0, sigma^2 I) over x0.
struct OracleMoments {
  double mass = 0.0;
  Vec first;

  Vec posterior_mean() const { return first / mass; }
};

inline OracleMoments oracle_moments(const DensityOnBox& target, const Vec& x, double sigma,
                                    const QuadratureOptions& options = {}) {
  require_positive(sigma, "sigma");
  require_finite(x, "x");
  const int d = static_cast<int>(x.size());
  require(target.support.dim() == d, "density support dimension does not match x");
  if (d > 2) throw unsupported_error("quadrature oracle supports dimension <= 2");

  const Vec reach = Vec::Constant(d, 12.0 * sigma);
  const Box domain = target.support.intersect(Box{x - reach, x + reach});
  OracleMoments out;
  out.first = Vec::Zero(d);
  if (domain.empty()) return out;

  using Acc = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim + 1, 1>;
  auto integrand = [&](const Vec& x0) {
    const double weight = target.density(x0) * std::exp(log_normal_isotropic(x, x0, sigma * sigma));
    Acc v(d + 1);
    v(0) = weight;
    v.tail(d) = weight * x0;
    return v;
  };
  const auto r = integrate_box(integrand, domain, options);
  out.mass = r.value(0);
  out.first = r.value.tail(d);
  return out;
}

/// Quadrature of the x0-moment `moment` in {0, 1} of density * N(x; x0, sigma^2 I).
/// Returns a length-1 vector for moment 0 and a length-d vector for moment 1.
inline Vec quadrature_oracle(const DensityOnBox& target, const Vec& x, double sigma, int moment,
                             const QuadratureOptions& options = {}) {
  require(moment == 0 || moment == 1, "quadrature_oracle moment must be 0 or 1");
  const OracleMoments m = oracle_moments(target, x, sigma, options);
  return moment == 0 ? scalar_vec(m.mass) : m.first;
}

/// Score of the sigma-smoothed density, (E[x0 | x] - x) / sigma^2, by quadrature.
inline Vec oracle_smoothed_score(const DensityOnBox& target, const Vec& x, double sigma,
                                 const QuadratureOptions& options = {}) {
  const OracleMoments m = oracle_moments(target, x, sigma, options);
  if (!(m.mass > 0.0)) throw numerical_error("quadrature oracle: smoothed density vanishes at x");
  return (m.posterior_mean() - x) / (sigma * sigma);
}

}  // namespace guidance_lab
