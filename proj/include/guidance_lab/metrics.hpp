#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/parallel.hpp"
#include "guidance_lab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace guidance_lab {

struct SampleSet {
  std::vector<Vec> points;
  std::string label;

  int dim() const { return points.empty() ? 0 : static_cast<int>(points.front().size()); }
  std::size_t size() const { return points.size(); }

  void validate() const {
    require(!points.empty(), "sample set '" + label + "' is empty");
    for (const Vec& p : points) {
      require(p.size() == points.front().size(), "sample set '" + label + "' mixes dimensions");
      require(p.allFinite(), "sample set '" + label + "' has non-finite entries");
    }
  }

  /// Coordinate j of every point.
  std::vector<double> coordinate(int j = 0) const {
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = points[i](j);
    return out;
  }

  static SampleSet from_scalars(std::span<const double> xs, std::string label = {}) {
    SampleSet s{{}, std::move(label)};
    s.points.reserve(xs.size());
    for (double x : xs) s.points.push_back(scalar_vec(x));
    return s;
  }
};

namespace detail {

inline std::vector<double> sorted_scalars(const SampleSet& s) {
  s.validate();
  require(s.dim() == 1, "this metric is defined for one-dimensional samples");
  std::vector<double> v = s.coordinate(0);
  std::sort(v.begin(), v.end());
  return v;
}

/// Linear interpolation of sorted order statistics at quantile u in (0, 1).
inline double interpolated_quantile(const std::vector<double>& sorted, double u) {
  const double pos = u * static_cast<double>(sorted.size()) - 0.5;
  if (pos <= 0.0) return sorted.front();
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

/// Empirical W2 between 1D samples by quantile matching. Equal sizes pair the
/// sorted order statistics; unequal sizes interpolate both quantile functions
/// on the midpoints of the finer grid.
inline double wasserstein2_1d(const SampleSet& a, const SampleSet& b) {
  const std::vector<double> sa = detail::sorted_scalars(a);
  const std::vector<double> sb = detail::sorted_scalars(b);
  double acc = 0.0;
  if (sa.size() == sb.size()) {
    for (std::size_t i = 0; i < sa.size(); ++i) acc += (sa[i] - sb[i]) * (sa[i] - sb[i]);
    return std::sqrt(acc / static_cast<double>(sa.size()));
  }
  const std::size_t m = std::max(sa.size(), sb.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    const double d = detail::interpolated_quantile(sa, u) - detail::interpolated_quantile(sb, u);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(m));
}

/// Two-sample Kolmogorov-Smirnov sup-distance between empirical CDFs.
inline double ks_statistic(const SampleSet& a, const SampleSet& b) {
  const std::vector<double> sa = detail::sorted_scalars(a);
  const std::vector<double> sb = detail::sorted_scalars(b);
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < sa.size() && j < sb.size()) {
    const double t = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == t) ++i;
    while (j < sb.size() && sb[j] == t) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return best;
}

/// Asymptotic p-value of a two-sample KS statistic (Kolmogorov distribution
/// with the usual small-sample correction to the effective size).
inline double ks_pvalue(double statistic, std::size_t n, std::size_t m) {
  const double en = std::sqrt(static_cast<double>(n) * static_cast<double>(m) / static_cast<double>(n + m));
  const double lambda = (en + 0.12 + 0.11 / en) * statistic;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double third = 0.0;     // central
  double fourth = 0.0;    // central
};

inline Moments moments(std::span<const double> xs) {
  require(!xs.empty(), "moments of an empty sample");
  const double n = static_cast<double>(xs.size());
  Moments m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double s2 = 0.0, s3 = 0.0, s4 = 0.0;
  for (double x : xs) {
    const double d = x - m.mean;
    s2 += d * d;
    s3 += d * d * d;
    s4 += d * d * d * d;
  }
  m.variance = xs.size() > 1 ? s2 / (n - 1.0) : 0.0;
  m.third = s3 / n;
  m.fourth = s4 / n;
  return m;
}

inline Moments moments(const SampleSet& s, int coordinate = 0) {
  s.validate();
  const std::vector<double> xs = s.coordinate(coordinate);
  return moments(std::span<const double>(xs));
}

inline double weighted_mean(std::span<const double> xs, std::span<const double> w) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += w[i] * xs[i];
    den += w[i];
  }
  return num / den;
}

inline double weighted_variance(std::span<const double> xs, std::span<const double> w) {
  const double mu = weighted_mean(xs, w);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += w[i] * (xs[i] - mu) * (xs[i] - mu);
    den += w[i];
  }
  return num / den;
}

/// Nonparametric bootstrap standard error of a weighted statistic: resample
/// (value, weight) pairs uniformly with replacement, `replicates` times.
inline double bootstrap_se(std::span<const double> xs, std::span<const double> w,
                           const std::function<double(std::span<const double>, std::span<const double>)>& statistic,
                           int replicates, std::uint64_t seed) {
  require(xs.size() == w.size() && !xs.empty(), "bootstrap needs one weight per value");
  require(replicates >= 2, "bootstrap needs at least 2 replicates");
  const std::size_t n = xs.size();
  std::vector<double> stats(static_cast<std::size_t>(replicates));
  std::vector<double> bx(n), bw(n);
  for (int b = 0; b < replicates; ++b) {
    StreamRng rng(seed, static_cast<std::uint64_t>(b));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.index(n);
      bx[i] = xs[j];
      bw[i] = w[j];
    }
    stats[static_cast<std::size_t>(b)] = statistic(bx, bw);
  }
  return std::sqrt(moments(std::span<const double>(stats)).variance);
}

/// Fraction of points whose coordinate lies below `threshold`.
inline double mode_mass_below(const SampleSet& s, double threshold, int coordinate = 0) {
  s.validate();
  std::size_t count = 0;
  for (const Vec& p : s.points) count += p(coordinate) < threshold ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(s.size());
}

struct Prdc {
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
};

enum class NeighborSearch { exact, grid };

namespace detail {

// Both search paths call this on the same pairs, so their comparisons agree bitwise.
inline double dist2(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a(i) - b(i);
    s += d * d;
  }
  return s;
}

/// Uniform hash grid over points in dimension 1..3.
class PointGrid {
 public:
  PointGrid(const std::vector<Vec>& points, double cell) : points_(points), cell_(cell), dim_(static_cast<int>(points.front().size())) {
    lo_ = points.front();
    for (const Vec& p : points) lo_ = lo_.cwiseMin(p);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Key k = key_of(points[i]);
      cells_[hash(k)].push_back(i);
      for (int j = 0; j < dim_; ++j) max_index_[j] = std::max(max_index_[j], k[j]);
    }
  }

  /// Squared distance from points_[i] to its k-th nearest other point.
  double kth_neighbor_dist2(std::size_t i, int k) const { return kth_nearest_dist2(points_[i], k, i); }

  /// Squared distance from q to its k-th nearest grid point, skipping index
  /// `skip`. Shells grow until the k-th candidate is closer than any unvisited cell.
  double kth_nearest_dist2(const Vec& q, int k, std::size_t skip = static_cast<std::size_t>(-1)) const {
    const Key center = key_of(q);
    long max_shell = 0;
    for (int j = 0; j < dim_; ++j) {
      max_shell = std::max({max_shell, std::abs(center[j]), std::abs(max_index_[j] - center[j])});
    }
    max_shell += 2;
    std::vector<double> best;
    for (long s = 0; s <= max_shell; ++s) {
      for_shell(center, s, [&](std::size_t j) {
        if (j != skip) best.push_back(dist2(q, points_[j]));
      });
      if (static_cast<int>(best.size()) >= k) {
        std::nth_element(best.begin(), best.begin() + (k - 1), best.end());
        const double kth = best[static_cast<std::size_t>(k - 1)];
        const double reach = static_cast<double>(s) * cell_;
        if (kth <= reach * reach) return kth;
      }
    }
    std::nth_element(best.begin(), best.begin() + (k - 1), best.end());
    return best[static_cast<std::size_t>(k - 1)];
  }

  /// Calls fn(j) for every point in cells within `radius` of q (a superset of the ball).
  template <class Fn>
  void for_each_near(const Vec& q, double radius, Fn&& fn) const {
    const Key center = key_of(q);
    const long reach = static_cast<long>(std::ceil(radius / cell_)) + 1;
    Key lo{}, hi{};
    for (int j = 0; j < 3; ++j) {
      lo[j] = j < dim_ ? std::max(center[j] - reach, -1L) : 0;
      hi[j] = j < dim_ ? std::min(center[j] + reach, max_index_[j] + 1) : 0;
    }
    for (long a = lo[0]; a <= hi[0]; ++a)
      for (long b = lo[1]; b <= hi[1]; ++b)
        for (long c = lo[2]; c <= hi[2]; ++c) visit(Key{a, b, c}, fn);
  }

 private:
  using Key = std::array<long, 3>;

  Key key_of(const Vec& p) const {
    Key k{0, 0, 0};
    for (int j = 0; j < dim_; ++j) k[j] = static_cast<long>(std::floor((p(j) - lo_(j)) / cell_));
    return k;
  }

  static std::uint64_t hash(const Key& k) {
    std::uint64_t h = 0;
    for (long v : k) h = splitmix(h ^ static_cast<std::uint64_t>(v));
    return h;
  }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  template <class Fn>
  void visit(const Key& k, Fn& fn) const {
    const auto it = cells_.find(hash(k));
    if (it == cells_.end()) return;
    for (std::size_t j : it->second) {
      if (key_of(points_[j]) == k) fn(j);
    }
  }

  template <class Fn>
  void for_shell(const Key& c, long s, Fn&& fn) const {
    const long r1 = dim_ >= 2 ? s : 0;
    const long r2 = dim_ >= 3 ? s : 0;
    for (long a = -s; a <= s; ++a)
      for (long b = -r1; b <= r1; ++b)
        for (long d = -r2; d <= r2; ++d) {
          if (std::max({std::abs(a), std::abs(b), std::abs(d)}) != s) continue;
          visit(Key{c[0] + a, c[1] + b, c[2] + d}, fn);
        }
  }

  const std::vector<Vec>& points_;
  double cell_;
  int dim_;
  Vec lo_;
  Key max_index_{0, 0, 0};
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

inline double grid_cell_size(const std::vector<Vec>& points) {
  Vec lo = points.front(), hi = points.front();
  for (const Vec& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const int d = static_cast<int>(lo.size());
  double volume = 1.0;
  for (int j = 0; j < d; ++j) volume *= std::max(hi(j) - lo(j), 1e-12);
  // About four points per occupied cell on uniform data.
  const double cell = std::pow(4.0 * volume / static_cast<double>(points.size()), 1.0 / d);
  return std::max(cell, 1e-12);
}

inline std::vector<double> knn_radii2(const std::vector<Vec>& pts, int k, NeighborSearch search, unsigned threads) {
  std::vector<double> out(pts.size());
  if (search == NeighborSearch::exact) {
    parallel_for(pts.size(), threads, [&](std::size_t i) {
      std::vector<double> d;
      d.reserve(pts.size() - 1);
      for (std::size_t j = 0; j < pts.size(); ++j) {
        if (j != i) d.push_back(dist2(pts[i], pts[j]));
      }
      std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
      out[i] = d[static_cast<std::size_t>(k - 1)];
    });
    return out;
  }
  const PointGrid grid(pts, grid_cell_size(pts));
  parallel_for(pts.size(), threads, [&](std::size_t i) { out[i] = grid.kth_neighbor_dist2(i, k); });
  return out;
}

}  // namespace detail

/// k-NN manifold precision/recall/density/coverage with Euclidean distances.
/// A point is inside a ball when its distance is strictly below the radius.
inline Prdc prdc(const SampleSet& real, const SampleSet& fake, int k = 3, NeighborSearch search = NeighborSearch::exact,
                 unsigned threads = 1) {
  real.validate();
  fake.validate();
  require(real.dim() == fake.dim(), "prdc needs sets of equal dimension");
  require(k >= 1 && static_cast<std::size_t>(k) < std::min(real.size(), fake.size()),
          "prdc needs 1 <= k < min(n_real, n_fake)");
  const auto& R = real.points;
  const auto& F = fake.points;
  const std::vector<double> real_r2 = detail::knn_radii2(R, k, search, threads);
  const std::vector<double> fake_r2 = detail::knn_radii2(F, k, search, threads);

  std::vector<char> fake_in_real(F.size(), 0);
  std::vector<std::size_t> fake_ball_count(F.size(), 0);
  std::vector<char> real_in_fake(R.size(), 0);
  std::vector<char> real_covered(R.size(), 0);

  if (search == NeighborSearch::exact) {
    parallel_for(F.size(), threads, [&](std::size_t f) {
      for (std::size_t r = 0; r < R.size(); ++r) {
        if (detail::dist2(F[f], R[r]) < real_r2[r]) {
          fake_in_real[f] = 1;
          ++fake_ball_count[f];
        }
      }
    });
    parallel_for(R.size(), threads, [&](std::size_t r) {
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t f = 0; f < F.size(); ++f) {
        const double d = detail::dist2(R[r], F[f]);
        nearest = std::min(nearest, d);
        if (d < fake_r2[f]) real_in_fake[r] = 1;
      }
      real_covered[r] = nearest < real_r2[r] ? 1 : 0;
    });
  } else {
    // Grid queries reach as far as the largest ball, so the widest 1% of
    // balls (tail points) are checked by brute force instead.
    const auto split = [](const std::vector<double>& r2, std::vector<std::size_t>& wide) {
      std::vector<double> sorted(r2);
      const std::size_t q = sorted.size() - 1 - sorted.size() / 100;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(q), sorted.end());
      const double limit = sorted[q];
      for (std::size_t i = 0; i < r2.size(); ++i) {
        if (r2[i] > limit) wide.push_back(i);
      }
      return std::sqrt(limit);
    };
    std::vector<std::size_t> wide_real, wide_fake;
    const double reach_real = split(real_r2, wide_real);
    const double reach_fake = split(fake_r2, wide_fake);
    std::vector<char> is_wide_real(R.size(), 0), is_wide_fake(F.size(), 0);
    for (std::size_t r : wide_real) is_wide_real[r] = 1;
    for (std::size_t f : wide_fake) is_wide_fake[f] = 1;

    const detail::PointGrid real_grid(R, detail::grid_cell_size(R));
    const detail::PointGrid fake_grid(F, detail::grid_cell_size(F));
    parallel_for(F.size(), threads, [&](std::size_t f) {
      auto test = [&](std::size_t r) {
        if (detail::dist2(F[f], R[r]) < real_r2[r]) {
          fake_in_real[f] = 1;
          ++fake_ball_count[f];
        }
      };
      real_grid.for_each_near(F[f], reach_real, [&](std::size_t r) {
        if (!is_wide_real[r]) test(r);
      });
      for (std::size_t r : wide_real) test(r);
    });
    parallel_for(R.size(), threads, [&](std::size_t r) {
      auto test = [&](std::size_t f) {
        if (detail::dist2(R[r], F[f]) < fake_r2[f]) real_in_fake[r] = 1;
      };
      fake_grid.for_each_near(R[r], reach_fake, [&](std::size_t f) {
        if (!is_wide_fake[f]) test(f);
      });
      for (std::size_t f : wide_fake) test(f);
      real_covered[r] = fake_grid.kth_nearest_dist2(R[r], 1) < real_r2[r] ? 1 : 0;
    });
  }

  Prdc out;
  const double nf = static_cast<double>(F.size());
  const double nr = static_cast<double>(R.size());
  out.precision = std::accumulate(fake_in_real.begin(), fake_in_real.end(), 0.0) / nf;
  out.recall = std::accumulate(real_in_fake.begin(), real_in_fake.end(), 0.0) / nr;
  out.density = std::accumulate(fake_ball_count.begin(), fake_ball_count.end(), 0.0) / (static_cast<double>(k) * nf);
  out.coverage = std::accumulate(real_covered.begin(), real_covered.end(), 0.0) / nr;
  return out;
}

}  // namespace guidance_lab
