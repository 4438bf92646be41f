#pragma once

#include "guidance_lab/core.hpp"
#include "guidance_lab/schedule.hpp"

#include <concepts>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace guidance_lab {

enum class SolverMethod { euler_ddim, heun };

inline SolverMethod parse_solver_method(std::string_view name) {
  if (name == "heun") return SolverMethod::heun;
  if (name == "euler" || name == "ddim" || name == "euler_ddim") return SolverMethod::euler_ddim;
  throw config_error("unknown solver method '" + std::string(name) + "'");
}

inline std::string_view to_string(SolverMethod m) { return m == SolverMethod::heun ? "heun" : "euler_ddim"; }

/// Denoiser evaluated at a transition: D(x, sigma, sigma_next).
template <class D>
concept TransitionDenoiser = requires(const D& d, const Vec& x, double s) {
  { d(x, s, s) } -> std::convertible_to<Vec>;
};

/// One Euler step of dx/dsigma = (x - D) / sigma given D = denoised.
inline Vec ddim_update(const Vec& x, const Vec& denoised, double sigma_from, double sigma_to) {
  const double ratio = sigma_to / sigma_from;
  return (1.0 - ratio) * denoised + ratio * x;
}

/// DDIM / Euler step from sigma_from down to sigma_to >= 0.
template <class D>
  requires std::invocable<const D&, const Vec&, double>
Vec ddim_step(const Vec& x, double sigma_from, double sigma_to, const D& denoiser) {
  require_positive(sigma_from, "sigma_from");
  require(sigma_to >= 0.0 && sigma_to <= sigma_from, "ddim_step needs 0 <= sigma_to <= sigma_from");
  if (sigma_to == sigma_from) return x;
  return ddim_update(x, denoiser(x, sigma_from), sigma_from, sigma_to);
}

/// Heun step with separately bound denoisers at the two levels (each takes x only).
template <class DFrom, class DTo>
  requires std::invocable<const DFrom&, const Vec&> && std::invocable<const DTo&, const Vec&>
Vec heun_step(const Vec& x, double sigma_from, double sigma_to, const DFrom& d_from, const DTo& d_to) {
  require_positive(sigma_from, "sigma_from");
  require(sigma_to > 0.0, "heun_step needs sigma_to > 0; close a run with ddim_step");
  require(sigma_to < sigma_from, "heun_step needs sigma_to < sigma_from");
  const Vec d0 = d_from(x);
  const Vec predictor = ddim_update(x, d0, sigma_from, sigma_to);
  const Vec slope_from = (x - d0) / sigma_from;
  const Vec slope_to = (predictor - d_to(predictor)) / sigma_to;
  return x + 0.5 * (sigma_to - sigma_from) * (slope_to + slope_from);
}

/// Heun step with one denoiser D(x, sigma).
template <class D>
  requires std::invocable<const D&, const Vec&, double>
Vec heun_step(const Vec& x, double sigma_from, double sigma_to, const D& denoiser) {
  return heun_step(
      x, sigma_from, sigma_to, [&](const Vec& y) { return denoiser(y, sigma_from); },
      [&](const Vec& y) { return denoiser(y, sigma_to); });
}

struct TrajectoryPoint {
  std::size_t step;
  double sigma;
  Vec x;
};

struct FlowResult {
  Vec x;
  std::vector<TrajectoryPoint> trajectory;
  bool trajectory_truncated = false;
  std::size_t steps = 0;
  std::size_t denoiser_calls = 0;
};

template <TransitionDenoiser D>
struct SolverRun {
  NoiseSchedule schedule;
  D denoiser;
  SolverMethod method = SolverMethod::heun;
  bool record_trajectory = false;
  std::size_t trajectory_cap = 100000;
};

/// Integrates the flow from schedule[0] down to the last level, then jumps to
/// sigma = 0 with one final denoiser evaluation. A schedule of T levels costs
/// T steps: T - 1 intervals plus the closing jump.
template <TransitionDenoiser D>
FlowResult integrate_flow(const Vec& x_init, const SolverRun<D>& run) {
  require_finite(x_init, "initial state");
  const NoiseSchedule& sched = run.schedule;
  const std::size_t levels = sched.size();
  FlowResult out;
  out.x = x_init;
  auto record = [&](std::size_t step, double sigma) {
    if (!run.record_trajectory) return;
    if (out.trajectory.size() >= run.trajectory_cap) {
      out.trajectory_truncated = true;
      return;
    }
    out.trajectory.push_back(TrajectoryPoint{step, sigma, out.x});
  };
  auto check = [&](std::size_t step) {
    if (!out.x.allFinite()) throw numerical_error("non-finite state in flow integration", static_cast<long>(step));
  };
  record(0, sched[0]);
  for (std::size_t i = 0; i + 1 < levels; ++i) {
    const double from = sched[i];
    const double to = sched[i + 1];
    auto d_from = [&](const Vec& y) { return run.denoiser(y, from, to); };
    if (run.method == SolverMethod::heun) {
      const double after = sched.next_level(i + 1);
      auto d_to = [&](const Vec& y) { return run.denoiser(y, to, after); };
      out.x = heun_step(out.x, from, to, d_from, d_to);
      out.denoiser_calls += 2;
    } else {
      out.x = ddim_update(out.x, d_from(out.x), from, to);
      out.denoiser_calls += 1;
    }
    ++out.steps;
    check(out.steps);
    record(out.steps, to);
  }
  out.x = run.denoiser(out.x, sched.sigma_min(), 0.0);
  out.denoiser_calls += 1;
  ++out.steps;
  check(out.steps);
  record(out.steps, 0.0);
  return out;
}

/// Convenience overload without a SolverRun wrapper.
template <TransitionDenoiser D>
Vec integrate_flow(const Vec& x_init, const NoiseSchedule& schedule, const D& denoiser,
                   SolverMethod method = SolverMethod::heun) {
  return integrate_flow(x_init, SolverRun<const D&>{schedule, denoiser, method}).x;
}

}  // namespace guidance_lab
