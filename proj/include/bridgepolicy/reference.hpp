#pragma once

// Arbitrary-precision (50 digit) transcription of the closed-form sampler
// coefficients. Deliberately naive: no expm1, no rearrangement, so that it
// stays independent of the double-precision implementation it checks.

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <limits>

namespace bridgepolicy::reference {

using mp50 = boost::multiprecision::cpp_dec_float_50;

struct MpCoeffs {
  mp50 rho_t, kappa_t_gamma, kappa_t, c1, c2, D, E, F, delta_sq;
  mp50 coef_state, coef_terminal, coef_pred;
};

// Constant theta; kappa_t is the gamma -> inf limit of kappa_{t,gamma}.
inline MpCoeffs solver_coeffs(double theta_d, double lambda_d, double gamma_d, double T_d, double s_d, double t_d) {
  using boost::multiprecision::exp;
  using boost::multiprecision::log;
  const mp50 theta(theta_d), lam(lambda_d), gam(gamma_d), T(T_d), s(s_d), t(t_d);
  auto tb = [&](const mp50& a, const mp50& b) { return theta * (b - a); };
  const mp50 zero(0);
  const mp50 h = 1 / (gam * lam * lam);
  auto rho = [&](const mp50& x) { return exp(tb(zero, x)) * (1 - exp(-2 * tb(zero, x))); };
  auto kg = [&](const mp50& x) { return exp(tb(x, T)) * (h + 1 - exp(-2 * tb(x, T))); };
  auto k = [&](const mp50& x) { return exp(tb(x, T)) * (1 - exp(-2 * tb(x, T))); };

  MpCoeffs c;
  c.rho_t = rho(t);
  c.kappa_t_gamma = kg(t);
  c.kappa_t = k(t);
  c.c1 = h * exp(2 * tb(zero, T));
  c.c2 = exp(2 * tb(zero, T)) - 1;
  const mp50 sum = c.c1 + c.c2;
  c.D = 2 * c.c1 * c.c2 / (sum * sum * sum);
  c.E = c.c2 * c.c2 / (sum * sum);
  c.F = c.c1 * c.c1 / (sum * sum);

  const mp50 r = kg(t) * k(s) * rho(t) / (kg(s) * k(t) * rho(s));
  const mp50 u = kg(t) * rho(t) * k(s) / (kg(zero) * k(t) * rho(s));
  const mp50 q = kg(t) / kg(zero);
  c.coef_state = r;
  c.coef_terminal = 1 - r + u - q;
  c.coef_pred = q - u;

  if (t == 0) {
    c.delta_sq = 0;
  } else {
    const mp50 es = exp(2 * tb(zero, s)), et = exp(2 * tb(zero, t));
    c.delta_sq = lam * lam * kg(t) * kg(t) * rho(t) * rho(t) / (k(t) * k(t)) *
                 (c.E * (es - et) / ((et - 1) * (es - 1)) + c.D * log(kg(s) * rho(t) / (kg(t) * rho(s))) -
                  c.F * (exp(-tb(zero, T) - tb(zero, t)) / kg(t) - exp(-tb(zero, T) - tb(zero, s)) / kg(s)));
  }
  return c;
}

inline double rel_err(double got, const mp50& want) {
  const mp50 diff = abs(mp50(got) - want);
  const mp50 scale = abs(want);
  if (scale == 0) return diff == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(diff / scale);
}

}  // namespace bridgepolicy::reference
