#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "bridgepolicy/bridge.hpp"

using namespace bridgepolicy;

namespace {

State scalar(double v) { return State::Constant(1, v); }

struct Moments {
  double mean = 0.0, var = 0.0, se_mean = 0.0, se_var = 0.0;
};

// Empirical mean/variance (with standard errors) of the EM oracle at the given times.
std::vector<Moments> em_moments(const NoiseSchedule& sched, const BridgeEndpoints& ends, double dt, int paths,
                                const std::vector<double>& times, std::uint64_t seed) {
  ForwardSimulator sim(sched, dt);
  std::vector<std::vector<double>> samples(times.size());
  for (int p = 0; p < paths; ++p) {
    const auto path = sim.simulate(ends, seed + static_cast<std::uint64_t>(p));
    for (std::size_t k = 0; k < times.size(); ++k)
      samples[k].push_back(path.states(std::llround(times[k] / dt), 0));
  }
  std::vector<Moments> out;
  for (const auto& xs : samples) {
    const double n = static_cast<double>(xs.size());
    double m = 0.0;
    for (double x : xs) m += x;
    m /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : xs) {
      const double d = (x - m) * (x - m);
      m2 += d;
      m4 += d * d;
    }
    m2 /= n - 1.0;
    m4 /= n;
    out.push_back({m, m2, std::sqrt(m2 / n), std::sqrt(std::max(m4 - m2 * m2, 0.0) / n)});
  }
  return out;
}

}  // namespace

TEST(MarginalMoments, InitialCondition) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(State::Constant(3, 0.3), State::Constant(3, -1.0));
  const auto m = marginal_moments(ends, sched, 0.0);
  EXPECT_EQ(m.variance, 0.0);
  EXPECT_TRUE(m.mean.isApprox(ends.a0, 1e-15));
}

TEST(MarginalMoments, TerminalPinningInDoobLimit) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 1e14);
  const BridgeEndpoints ends(scalar(0.0), scalar(1.0));
  const auto m = marginal_moments(ends, sched, 1.0);
  EXPECT_NEAR(m.mean[0], 1.0, 1e-12);
  EXPECT_NEAR(m.variance, 0.0, 1e-12);
}

TEST(MarginalMoments, EndpointWeights) {
  for (double gamma : {1e2, 1e4, 1e7}) {
    const auto sched = NoiseSchedule::constant(2.0, 0.5, gamma);
    const auto at0 = marginal_coefficients(sched, 0.0);
    EXPECT_NEAR(at0.weight_a0, 1.0, 1e-12);
    const auto atT = marginal_coefficients(sched, 1.0);
    const double h = 1.0 / gamma, sb2 = sched.sigma_bar_sq(0.0, 1.0);
    EXPECT_NEAR(atT.weight_aT, 1.0 - std::exp(-2.0) * h / (sb2 + h), 1e-12);
  }
}

TEST(MarginalMoments, TerminalResidualSlope) {
  const BridgeEndpoints ends(scalar(0.0), scalar(1.0));
  std::vector<double> logs_g, logs_r;
  for (double gamma : {1e2, 1e3, 1e4}) {
    const auto sched = NoiseSchedule::constant(2.0, 0.5, gamma);
    const double residual = std::abs(marginal_moments(ends, sched, 1.0).mean[0] - 1.0);
    const double h = 1.0 / gamma;
    EXPECT_NEAR(residual, std::exp(-2.0) * h / (sched.sigma_bar_sq(0.0, 1.0) + h), 1e-14);
    logs_g.push_back(std::log(gamma));
    logs_r.push_back(std::log(residual));
  }
  const double slope = (logs_r[2] - logs_r[0]) / (logs_g[2] - logs_g[0]);
  EXPECT_NEAR(slope, -1.0, 0.05);
}

TEST(MarginalMoments, DomainError) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(scalar(0.0), scalar(1.0));
  EXPECT_THROW(marginal_moments(ends, sched, 1.01), bridgepolicy::DomainError);
  EXPECT_THROW(marginal_moments(ends, sched, -0.01), bridgepolicy::DomainError);
}

TEST(BridgeEndpoints, ShapeAndFiniteness) {
  EXPECT_THROW(BridgeEndpoints(State::Zero(2), State::Zero(3)), bridgepolicy::DomainError);
  EXPECT_THROW(BridgeEndpoints(scalar(std::nan("")), scalar(0.0)), bridgepolicy::DomainError);
}

TEST(EulerMaruyama, StiffnessRejected) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 1e7);
  try {
    ForwardSimulator sim(sched, 1e-4);
    FAIL() << "expected a configuration error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma=1e+07"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ForwardSimulator(NoiseSchedule::constant(2.0, 0.5, 100.0), 1e-2), ConfigError);
}

TEST(EulerMaruyama, ZeroDiffusionLimitFollowsOde) {
  const auto sched = NoiseSchedule::constant(2.0, 1e-8, 100.0);
  const BridgeEndpoints ends(scalar(0.0), scalar(1.0));
  const auto path = em_simulate_forward(ends, sched, 1e-4, 3);
  // noiseless ODE da = beta(t) (aT - a) dt has the closed-form marginal mean as its solution
  for (double t : {0.25, 0.5, 1.0}) {
    const double ode = marginal_moments(ends, sched, t).mean[0];
    EXPECT_NEAR(path.states(std::llround(t / 1e-4), 0), ode, 1e-4);
  }
}

TEST(EulerMaruyama, FixedPointWhenEndpointsCoincide) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(scalar(0.7), scalar(0.7));
  EXPECT_EQ(forward_drift_rate(sched, 0.0) * (ends.aT[0] - ends.a0[0]), 0.0);
  const auto em = em_moments(sched, ends, 1e-3, 4000, {0.5, 1.0}, 100);
  for (const auto& m : em) EXPECT_NEAR(m.mean, 0.7, 3.0 * m.se_mean);
}

TEST(EulerMaruyama, DeterministicPerSeed) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(State::Zero(2), State::Ones(2));
  const auto a = em_simulate_forward(ends, sched, 1e-3, 9);
  const auto b = em_simulate_forward(ends, sched, 1e-3, 9);
  EXPECT_TRUE((a.states.array() == b.states.array()).all());
}

// Closed form vs Monte-Carlo oracle across schedules; 3 standard errors.
struct OracleCase {
  double theta, lambda, gamma;
};

class MarginalOracle : public ::testing::TestWithParam<OracleCase> {};

TEST_P(MarginalOracle, MatchesEulerMaruyama) {
  const auto p = GetParam();
  const auto sched = NoiseSchedule::constant(p.theta, p.lambda, p.gamma);
  const BridgeEndpoints ends(scalar(0.0), scalar(1.0));
  const std::vector<double> times{0.25, 0.5, 0.75, 1.0};
  const auto em = em_moments(sched, ends, 1e-4, 5000, times, 1000);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const auto cf = marginal_moments(ends, sched, times[k]);
    EXPECT_NEAR(cf.mean[0], em[k].mean, 3.0 * em[k].se_mean) << "t=" << times[k];
    EXPECT_NEAR(cf.variance, em[k].var, 3.0 * em[k].se_var) << "t=" << times[k];
  }
}

INSTANTIATE_TEST_SUITE_P(Schedules, MarginalOracle,
                         ::testing::Values(OracleCase{2.0, 0.5, 100.0}, OracleCase{0.5, 1.0, 1e3},
                                           OracleCase{5.0, 0.2, 1e2}, OracleCase{1.0, 1.0, 10.0}));

TEST(SampleQ, InitialTimeIsExact) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(State::Constant(4, 0.25), State::Constant(4, -2.0));
  EXPECT_TRUE((sample_q(ends, sched, 0.0, 5).array() == ends.a0.array()).all());
}

TEST(SampleQ, Deterministic) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(State::Constant(4, 0.25), State::Constant(4, -2.0));
  EXPECT_TRUE((sample_q(ends, sched, 0.5, 5).array() == sample_q(ends, sched, 0.5, 5).array()).all());
}

TEST(SampleQ, MatchesMarginal) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(scalar(0.0), scalar(1.0));
  const int n = 10000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_q(ends, sched, 0.5, static_cast<std::uint64_t>(i))[0];
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = (s2 - n * mean * mean) / (n - 1);
  const auto m = marginal_moments(ends, sched, 0.5);
  EXPECT_NEAR(mean, m.mean[0], 3.0 * std::sqrt(m.variance / n));
  EXPECT_NEAR(var, m.variance, 3.0 * m.variance * std::sqrt(2.0 / n));
}
