#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bridgepolicy/schedule.hpp"
#include "bridgepolicy/reference.hpp"

using namespace bridgepolicy;

TEST(ThetaBar, ConstantClosedForm) {
  EXPECT_DOUBLE_EQ(NoiseSchedule::constant(2.0, 1.0, 100.0).theta_bar(0.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(NoiseSchedule::constant(std::log(2.0), 1.0, 100.0).theta_bar(0.0, 1.0), std::log(2.0));
}

TEST(ThetaBar, TabulatedLinearRamp) {
  // theta_z = z on [0, 1]: integral 1/2, and trapezoid is exact for a linear integrand.
  NoiseSchedule sched(ThetaSchedule::tabulated({0.0, 1.0}, 1.0), 1.0, 100.0);
  EXPECT_NEAR(sched.theta_bar(0.0, 1.0), 0.5, 1e-6);
  EXPECT_NEAR(sched.theta_bar(0.25, 0.75), 0.5 * (0.75 * 0.75 - 0.25 * 0.25), 1e-9);
}

TEST(ThetaBar, TabulatedCurvedAgainstAnalytic) {
  // theta_z = z^2 sampled on 201 knots: piecewise-linear interpolant integrates to 1/3 + O(h^2).
  std::vector<double> knots(201);
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const double z = static_cast<double>(i) / 200.0;
    knots[i] = z * z;
  }
  NoiseSchedule sched(ThetaSchedule::tabulated(knots, 1.0), 1.0, 100.0);
  EXPECT_NEAR(sched.theta_bar(0.0, 1.0), 1.0 / 3.0, 1e-5);
}

TEST(ThetaBar, DomainErrors) {
  const auto sched = NoiseSchedule::constant(2.0, 1.0, 100.0);
  EXPECT_THROW(sched.theta_bar(0.6, 0.5), DomainError);
  EXPECT_THROW(sched.theta_bar(0.0, 1.5), DomainError);
  EXPECT_THROW(sched.sigma_bar_sq(0.6, 0.5), DomainError);
  EXPECT_EQ(sched.theta_bar(0.3, 0.3), 0.0);
}

TEST(ThetaBar, Additivity) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double theta : {0.5, 2.0, 5.0}) {
    const auto sched = NoiseSchedule::constant(theta, 1.0, 100.0);
    for (int k = 0; k < 200; ++k) {
      double a = u(rng), b = u(rng), c = u(rng);
      if (a > b) std::swap(a, b);
      if (b > c) std::swap(b, c);
      if (a > b) std::swap(a, b);
      EXPECT_NEAR(sched.theta_bar(a, c), sched.theta_bar(a, b) + sched.theta_bar(b, c), 1e-12);
    }
  }
}

TEST(SigmaBarSq, Values) {
  const auto s1 = NoiseSchedule::constant(std::log(2.0), 1.0, 100.0);
  EXPECT_EQ(s1.sigma_bar_sq(0.4, 0.4), 0.0);
  EXPECT_NEAR(s1.sigma_bar_sq(0.0, 1.0), 0.75, 1e-15);
  // 0.25 (1 - e^{-4}), 50-digit value from tests/oracle/solver_oracle.py
  const auto s2 = NoiseSchedule::constant(2.0, 0.5, 100.0);
  EXPECT_NEAR(s2.sigma_bar_sq(0.0, 1.0), 0.24542109027781645493, 1e-15);
}

TEST(SigmaBarSq, BoundedAndMonotone) {
  for (double theta : {0.5, 2.0, 5.0})
    for (double lambda : {0.2, 1.0}) {
      const auto sched = NoiseSchedule::constant(theta, lambda, 100.0);
      for (double s : {0.0, 0.3, 0.7}) {
        double prev = -1.0;
        for (int k = 0; k <= 100; ++k) {
          const double t = s + (1.0 - s) * k / 100.0;
          const double v = sched.sigma_bar_sq(s, t);
          EXPECT_GE(v, prev);
          EXPECT_LT(v, lambda * lambda);
          EXPECT_GE(v, 0.0);
          prev = v;
        }
      }
    }
}

TEST(SigmaBarSq, GSquaredRelation) {
  const auto sched = NoiseSchedule::constant(3.0, 0.7, 100.0);
  EXPECT_DOUBLE_EQ(sched.g_sq(0.4), 2.0 * 0.49 * 3.0);
}

TEST(SolverCoeffs, CanonicalCaseAgainstFrozenOracle) {
  // theta=2, lambda=0.5, gamma=100, T=1, (s,t)=(0.5,0.25); values from tests/oracle/solver_oracle.py
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const auto c = solver_coeffs(sched, 0.5, 0.25);
  auto rel = [](double got, double want) { return std::abs(got - want) / std::abs(want); };
  EXPECT_LT(rel(c.rho_t, 1.0421906109874947232), 1e-10);
  EXPECT_LT(rel(c.rho_s, 2.3504023872876029138), 1e-10);
  EXPECT_LT(rel(c.kappa_t_gamma, 4.4378264730031575866), 1e-10);
  EXPECT_LT(rel(c.kappa_s_gamma, 2.4591336604259647232), 1e-10);
  EXPECT_LT(rel(c.kappa_0_gamma, 7.5492830596512635444), 1e-10);
  EXPECT_LT(rel(c.kappa_t, 4.2585589101896349937), 1e-10);
  EXPECT_LT(rel(c.kappa_s, 2.3504023872876029138), 1e-10);
  EXPECT_LT(rel(c.c1, 2.1839260013257695631), 1e-10);
  EXPECT_LT(rel(c.c2, 53.598150033144239078), 1e-10);
  EXPECT_LT(rel(c.D, 0.0013487569473771087725), 1e-10);
  EXPECT_LT(rel(c.E, 0.9232307338816772911), 1e-10);
  EXPECT_LT(rel(c.F, 0.0015328035277131630661), 1e-10);
  EXPECT_LT(rel(c.delta_sq, 0.11527163306211134421), 1e-10);
  EXPECT_LT(rel(c.coef_state, 0.44164435021252284992), 1e-10);
  EXPECT_LT(rel(c.coef_terminal, 0.11437123974822461092), 1e-10);
  EXPECT_LT(rel(c.coef_pred, 0.44398441003925253916), 1e-10);
}

TEST(SolverCoeffs, RhoVanishesAtZero) {
  for (double theta : {0.5, 2.0})
    for (double s : {0.1, 0.5, 1.0}) EXPECT_EQ(solver_coeffs(NoiseSchedule::constant(theta, 1.0, 1e3), s, 0.0).rho_t, 0.0);
}

TEST(SolverCoeffs, KappaGammaTerminalValue) {
  // kappa_{T,gamma} = (gamma lambda^2)^{-1}; reached through kappa_s_gamma with s = T.
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  EXPECT_DOUBLE_EQ(solver_coeffs(sched, 1.0, 0.5).kappa_s_gamma, 1.0 / (100.0 * 0.25));
}

TEST(SolverCoeffs, GammaLimit) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 1e16);
  for (double t : {0.1, 0.4, 0.8}) {
    const auto c = solver_coeffs(sched, 0.9, t);
    EXPECT_NEAR(c.kappa_t_gamma / c.kappa_t, 1.0, 1e-8);
  }
}

TEST(SolverCoeffs, InfiniteGammaAtTerminalTime) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, std::numeric_limits<double>::infinity());
  const auto c = solver_coeffs(sched, 1.0, 0.9);
  EXPECT_TRUE(std::isfinite(c.delta_sq));
  EXPECT_EQ(c.coef_state, 0.0);
  EXPECT_NEAR(c.coef_state + c.coef_terminal + c.coef_pred, 1.0, 1e-12);
}

TEST(SolverCoeffs, DomainErrors) {
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  EXPECT_THROW(solver_coeffs(sched, 0.25, 0.5), DomainError);
  EXPECT_THROW(solver_coeffs(sched, 0.5, 0.5), DomainError);
  EXPECT_THROW(solver_coeffs(sched, 1.5, 0.5), DomainError);
  EXPECT_NO_THROW(solver_coeffs(sched, 0.5, 0.0));
}

TEST(SolverCoeffs, AlgebraicIdentities) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 300; ++k) {
    const double theta = 0.5 + 4.5 * u(rng);
    const double lambda = 0.2 + 0.8 * u(rng);
    const double gamma = std::pow(10.0, 2.0 + 5.0 * u(rng));
    const double s = 1e-3 + (1.0 - 1e-3) * u(rng);
    const double t = s * u(rng);
    const auto c = solver_coeffs(NoiseSchedule::constant(theta, lambda, gamma), s, t);
    const double sum = c.c1 + c.c2;
    EXPECT_NEAR(c.E * sum * sum / (c.c2 * c.c2), 1.0, 1e-12);
    EXPECT_NEAR(c.F * sum * sum / (c.c1 * c.c1), 1.0, 1e-12);
    EXPECT_NEAR(c.E + c.F + 2.0 * c.c1 * c.c2 / (sum * sum), 1.0, 1e-12);
    EXPECT_NEAR(c.coef_state + c.coef_terminal + c.coef_pred, 1.0, 1e-10);
    EXPECT_GE(c.delta_sq, -1e-12);
  }
}

TEST(SolverCoeffs, KappaGammaDecreasesInGamma) {
  for (double t : {0.0, 0.2, 0.5, 0.9}) {
    const auto lo = solver_coeffs(NoiseSchedule::constant(2.0, 0.5, 1e2), 0.95, t);
    const auto hi = solver_coeffs(NoiseSchedule::constant(2.0, 0.5, 1e3), 0.95, t);
    EXPECT_GT(lo.kappa_t_gamma, hi.kappa_t_gamma);
  }
}

TEST(SolverCoeffs, AgreesWithArbitraryPrecision) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double theta = 0.5 + 4.5 * u(rng);
    const double lambda = 0.2 + 0.8 * u(rng);
    const double gamma = std::pow(10.0, 2.0 + 5.0 * u(rng));
    const double s = 1e-3 + (1.0 - 1e-3) * u(rng);
    const double t = s * u(rng);
    const auto got = solver_coeffs(NoiseSchedule::constant(theta, lambda, gamma), s, t);
    const auto want = reference::solver_coeffs(theta, lambda, gamma, 1.0, s, t);
    for (double e : {reference::rel_err(got.coef_state, want.coef_state), reference::rel_err(got.coef_terminal, want.coef_terminal),
                     reference::rel_err(got.coef_pred, want.coef_pred), reference::rel_err(got.delta_sq, want.delta_sq),
                     reference::rel_err(got.kappa_t, want.kappa_t), reference::rel_err(got.D, want.D)})
      worst = std::max(worst, e);
  }
  EXPECT_LT(worst, 1e-10);
}
