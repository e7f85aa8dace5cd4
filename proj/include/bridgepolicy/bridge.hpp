#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>

#include <Eigen/Core>

#include "bridgepolicy/errors.hpp"
#include "bridgepolicy/rng.hpp"
#include "bridgepolicy/schedule.hpp"

namespace bridgepolicy {

using State = Eigen::VectorXd;

/// Initial state a0 (the expert action) and terminal state aT (the fused
/// observation) of the bridge, flattened to equal length.
struct BridgeEndpoints {
  State a0;
  State aT;

  BridgeEndpoints(State initial, State terminal) : a0(std::move(initial)), aT(std::move(terminal)) {
    if (a0.size() != aT.size()) throw DomainError("bridge endpoints must have equal dimension");
    if (!a0.allFinite() || !aT.allFinite()) throw DomainError("bridge endpoints must be finite");
  }
};

/// Isotropic Gaussian marginal q(a_t | a0, aT).
struct MarginalMoments {
  State mean;
  double variance = 0.0;
};

/// Scalar part of the marginal: mean = weight_a0 * a0 + weight_aT * aT.
struct MarginalCoefficients {
  double weight_a0 = 1.0;
  double weight_aT = 0.0;
  double variance = 0.0;
};

/// Closed-form marginal of the controlled forward SDE
///   da = (theta + g^2 e^{-2 tb_{t:T}} / (1/gamma + sb2_{t:T})) (aT - a) dt + g dw
/// obtained by variation of constants. With r(t) = 1/gamma + sb2_{t:T}:
///   weight_a0 = e^{-tb_t} r(t) / r(0),  variance = sb2_t r(t) / r(0).
inline MarginalCoefficients marginal_coefficients(const NoiseSchedule& sched, double t) {
  sched.check_time(t);
  const double T = sched.T();
  const double h = sched.inv_gamma();
  const double r_t = h + sched.sigma_bar_sq(t, T);
  const double r_0 = h + sched.sigma_bar_sq(0.0, T);
  MarginalCoefficients m;
  m.weight_a0 = std::exp(-sched.theta_bar(0.0, t)) * r_t / r_0;
  m.weight_aT = 1.0 - m.weight_a0;
  m.variance = sched.sigma_bar_sq(0.0, t) * r_t / r_0;
  return m;
}

inline MarginalMoments marginal_moments(const BridgeEndpoints& ends, const NoiseSchedule& sched, double t) {
  const auto c = marginal_coefficients(sched, t);
  return {c.weight_a0 * ends.a0 + c.weight_aT * ends.aT, c.variance};
}

/// One draw from q(a_t | a0, aT). Deterministic in `seed`; t = 0 returns a0.
inline State sample_q(const BridgeEndpoints& ends, const NoiseSchedule& sched, double t, std::uint64_t seed) {
  const auto c = marginal_coefficients(sched, t);
  State out = c.weight_a0 * ends.a0 + c.weight_aT * ends.aT;
  if (c.variance > 0.0) {
    auto rng = make_rng(seed);
    out += std::sqrt(c.variance) * standard_normal(rng, out.size());
  } else {
    out = ends.a0;
  }
  return out;
}

/// Drift coefficient beta(t) of the controlled forward SDE, da = beta (aT - a) dt + g dw.
inline double forward_drift_rate(const NoiseSchedule& sched, double t) {
  const double T = sched.T();
  const double tb_tT = sched.theta_bar(t, T);
  return sched.theta(t) +
         sched.g_sq(t) * std::exp(-2.0 * tb_tT) / (sched.inv_gamma() + sched.sigma_bar_sq(t, T));
}

/// Euler-Maruyama path of the forward SDE; row k holds the state at k * dt
/// (the last row is at T). This is the ground-truth oracle for the closed forms.
struct ForwardPath {
  double dt = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> states;
};

/// Precomputed per-step coefficients so that many paths share the schedule work.
class ForwardSimulator {
 public:
  ForwardSimulator(const NoiseSchedule& sched, double dt) : dt_(dt) {
    const double T = sched.T();
    if (!(dt > 0.0) || dt > 1e-3 * T * (1.0 + 1e-12)) throw ConfigError("dt must be in (0, 1e-3 T]");
    const auto n = static_cast<std::size_t>(std::llround(T / dt));
    if (std::abs(static_cast<double>(n) * dt - T) > 1e-9 * T) throw ConfigError("T must be a multiple of dt");
    beta_.resize(n);
    diffusion_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(k) * dt;
      beta_[k] = forward_drift_rate(sched, t);
      diffusion_[k] = std::sqrt(sched.g_sq(t) * dt);
      if (beta_[k] * dt > 0.1) {
        std::ostringstream os;
        os << "forward SDE is stiff under Euler-Maruyama: gamma=" << sched.gamma() << " dt=" << dt
           << " gives drift*dt=" << beta_[k] * dt << " > 0.1 at t=" << t;
        throw ConfigError(os.str());
      }
    }
  }

  std::size_t n_steps() const { return beta_.size(); }
  double dt() const { return dt_; }

  ForwardPath simulate(const BridgeEndpoints& ends, std::uint64_t seed) const {
    ForwardPath path;
    path.dt = dt_;
    const auto dim = ends.a0.size();
    path.states.resize(static_cast<Eigen::Index>(n_steps() + 1), dim);
    auto rng = make_rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    State a = ends.a0;
    path.states.row(0) = a.transpose();
    for (std::size_t k = 0; k < n_steps(); ++k) {
      for (Eigen::Index d = 0; d < dim; ++d)
        a[d] += beta_[k] * (ends.aT[d] - a[d]) * dt_ + diffusion_[k] * normal(rng);
      path.states.row(static_cast<Eigen::Index>(k + 1)) = a.transpose();
    }
    return path;
  }

 private:
  double dt_;
  std::vector<double> beta_;
  std::vector<double> diffusion_;
};

inline ForwardPath em_simulate_forward(const BridgeEndpoints& ends, const NoiseSchedule& sched, double dt,
                                       std::uint64_t seed) {
  return ForwardSimulator(sched, dt).simulate(ends, seed);
}

}  // namespace bridgepolicy
