#pragma once

#include "guidance_lab/core.hpp"

#include <boost/random/taus88.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <array>
#include <cstdint>
#include <random>

namespace guidance_lab {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Random stream keyed by (seed, stream, iteration).
///
/// Every chain/particle owns its own engine, so the draws a chain sees do not
/// depend on how chains are scheduled across threads. The engine is taus88:
/// SMC creates one stream per particle per step, so seeding has to be cheap.
class StreamRng {
 public:
  using Engine = boost::random::taus88;

  StreamRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t iteration = 0) {
    const std::uint64_t h = derive(seed, stream, iteration);
    const std::uint64_t g = detail::splitmix64(h);
    std::array<std::uint32_t, 3> words{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                                       static_cast<std::uint32_t>(g)};
    auto first = words.begin();
    engine_.seed(first, words.end());
  }

  double normal() { return normal_(engine_); }

  double uniform() { return uniform_(engine_); }

  Vec normal_vec(int dim) {
    Vec z(dim);
    for (int i = 0; i < dim; ++i) z(i) = normal();
    return z;
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return boost::random::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream, std::uint64_t iteration) {
    std::uint64_t h = detail::splitmix64(seed);
    h = detail::splitmix64(h ^ (stream + 0x632be59bd9b4e019ULL));
    h = detail::splitmix64(h ^ (iteration + 0x85157af5ULL));
    return h;
  }

 private:
  Engine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace guidance_lab
