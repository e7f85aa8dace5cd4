#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <optional>
#include <sstream>
#include <vector>

#include "bridgepolicy/bridge.hpp"
#include "bridgepolicy/errors.hpp"
#include "bridgepolicy/rng.hpp"
#include "bridgepolicy/schedule.hpp"

namespace bridgepolicy {

/// Data-prediction model a_theta(a_t, a_T, t) -> estimate of a0.
template <typename F>
concept Denoiser = requires(const F& f, const State& a, const State& aT, double t) {
  { f(a, aT, t) } -> std::convertible_to<State>;
};

struct SamplerConfig {
  int n_steps = 10;
  /// Decreasing times T = t_0 > ... > t_M = 0; empty means uniform.
  std::vector<double> time_grid;
  /// Multiplier on the intermediate-step noise scale delta.
  double noise_multiplier = 1.0;
  bool stochastic_last_step = false;

  std::vector<double> resolved_grid(double T) const {
    if (n_steps < 1) throw ConfigError("sampler needs n_steps >= 1");
    if (stochastic_last_step) throw ConfigError("the final reverse step must be deterministic");
    if (!(noise_multiplier >= 0.0)) throw ConfigError("noise_multiplier must be >= 0");
    if (time_grid.empty()) {
      std::vector<double> grid(static_cast<std::size_t>(n_steps) + 1);
      for (int i = 0; i <= n_steps; ++i) grid[static_cast<std::size_t>(i)] = T * static_cast<double>(n_steps - i) / n_steps;
      return grid;
    }
    if (time_grid.size() != static_cast<std::size_t>(n_steps) + 1)
      throw ConfigError("time_grid must have n_steps + 1 entries");
    if (time_grid.front() != T || time_grid.back() != 0.0) throw ConfigError("time_grid must run from T to 0");
    for (std::size_t i = 1; i < time_grid.size(); ++i)
      if (!(time_grid[i] < time_grid[i - 1])) throw ConfigError("time_grid must be strictly decreasing");
    return time_grid;
  }
};

/// Closed-form reverse update from time s to time t <= s.
///
/// t == s returns a_s (all correction terms vanish); t == 0 returns a_pred
/// exactly. delta is the nonnegative root of the squared noise scale; a squared
/// scale below -1e-12 is treated as a coefficient bug.
inline State reverse_step(const State& a_s, const State& aT, const State& a_pred, const NoiseSchedule& sched, double s,
                          double t, const State& eps, double noise_multiplier = 1.0) {
  if (a_s.size() != aT.size() || a_pred.size() != aT.size() || eps.size() != aT.size())
    throw DomainError("reverse_step: state, terminal, prediction and noise must share one dimension");
  if (t == s) {
    sched.check_time(s);
    return a_s;
  }
  const SolverCoeffs c = solver_coeffs(sched, s, t);
  double delta_sq = c.delta_sq;
  if (delta_sq < -1e-12 || std::isnan(delta_sq)) {
    std::ostringstream os;
    os << "reverse_step: squared noise scale " << delta_sq << " for s=" << s << " t=" << t;
    throw NumericalError(os.str());
  }
  if (delta_sq < 0.0) delta_sq = 0.0;
  const double delta = noise_multiplier * std::sqrt(delta_sq);
  State out = c.coef_state * a_s + c.coef_terminal * aT + c.coef_pred * a_pred;
  if (delta > 0.0) out += delta * eps;
  return out;
}

/// Optional record of an inference chain: states[i] is the state at grid[i].
struct ChainTrace {
  std::vector<double> grid;
  std::vector<State> states;
  std::vector<State> predictions;
};

namespace detail {

template <Denoiser F>
State run_chain(State a, const State& aT, const F& denoiser, const NoiseSchedule& sched, const SamplerConfig& config,
                Rng& rng, ChainTrace* trace) {
  const auto grid = config.resolved_grid(sched.T());
  const auto M = static_cast<std::size_t>(config.n_steps);
  if (trace) {
    trace->grid = grid;
    trace->states = {a};
    trace->predictions.clear();
  }
  const State zero = State::Zero(a.size());
  for (std::size_t i = 1; i <= M; ++i) {
    const double s = grid[i - 1];
    const double t = grid[i];
    State pred = denoiser(a, aT, s);
    if (pred.size() != a.size()) throw DomainError("denoiser output has the wrong dimension");
    if (!pred.allFinite()) {
      std::ostringstream os;
      os << "denoiser returned non-finite values at step " << i << " (s=" << s << ")";
      throw NumericalError(os.str());
    }
    const State eps = i < M ? standard_normal(rng, a.size()) : zero;
    a = reverse_step(a, aT, pred, sched, s, t, eps, config.noise_multiplier);
    if (trace) {
      trace->states.push_back(a);
      trace->predictions.push_back(std::move(pred));
    }
  }
  return a;
}

}  // namespace detail

/// Reverse chain started at the observation latent: a_T = z_obs, M steps,
/// Gaussian noise on every step but the last.
template <Denoiser F>
State sample_chain(const State& aT, const F& denoiser, const NoiseSchedule& sched, const SamplerConfig& config,
                   std::uint64_t seed, ChainTrace* trace = nullptr) {
  auto rng = make_rng(seed);
  return detail::run_chain(aT, aT, denoiser, sched, config, rng, trace);
}

/// Baseline with an uninformative prior: a_T ~ N(0, lambda^2 I) is both the
/// start of the chain and the conditioning endpoint.
template <Denoiser F>
State sample_noise_prior_baseline(Eigen::Index dim, const F& denoiser, const NoiseSchedule& sched,
                                  const SamplerConfig& config, std::uint64_t seed, ChainTrace* trace = nullptr) {
  auto rng = make_rng(seed);
  const State aT = sched.lambda() * standard_normal(rng, dim);
  return detail::run_chain(aT, aT, denoiser, sched, config, rng, trace);
}

}  // namespace bridgepolicy
