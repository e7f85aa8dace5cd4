#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

#include "bridgepolicy/errors.hpp"

namespace bridgepolicy {

/// Mean-reversion rate theta_t of the generalized Ornstein-Uhlenbeck process.
///
/// Either a constant (closed-form integrals) or samples on a uniform grid over
/// [0, T], linearly interpolated and integrated with the composite trapezoid
/// rule on a fine grid (at least 1024 panels per unit time).
class ThetaSchedule {
 public:
  static ThetaSchedule constant(double theta) {
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw ConfigError("theta must be finite and >= 0");
    ThetaSchedule s;
    s.constant_ = theta;
    return s;
  }

  /// `knots[i]` is theta at time i * T / (knots.size() - 1).
  static ThetaSchedule tabulated(std::vector<double> knots, double T) {
    if (knots.size() < 2) throw ConfigError("tabulated theta needs at least two knots");
    for (double k : knots)
      if (!(k >= 0.0) || !std::isfinite(k)) throw ConfigError("tabulated theta must be finite and >= 0");
    ThetaSchedule s;
    s.knots_ = std::move(knots);
    s.horizon_ = T;
    const auto panels = static_cast<std::size_t>(std::ceil(std::max(1.0, T) * kPanelsPerUnit));
    s.panel_width_ = T / static_cast<double>(panels);
    s.cumulative_.assign(panels + 1, 0.0);
    for (std::size_t i = 0; i < panels; ++i) {
      const double a = s.panel_width_ * static_cast<double>(i);
      const double b = s.panel_width_ * static_cast<double>(i + 1);
      s.cumulative_[i + 1] = s.cumulative_[i] + 0.5 * (b - a) * (s.value(a) + s.value(b));
    }
    return s;
  }

  bool is_constant() const { return knots_.empty(); }
  double constant_value() const { return constant_; }
  const std::vector<double>& knots() const { return knots_; }

  double value(double t) const {
    if (is_constant()) return constant_;
    const double pos = std::clamp(t / horizon_, 0.0, 1.0) * static_cast<double>(knots_.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(pos), knots_.size() - 2);
    const double w = pos - static_cast<double>(i);
    return (1.0 - w) * knots_[i] + w * knots_[i + 1];
  }

  /// Integral of theta over [0, t].
  double integral_to(double t) const {
    if (is_constant()) return constant_ * t;
    const double pos = t / panel_width_;
    const auto i = std::min(static_cast<std::size_t>(pos), cumulative_.size() - 2);
    const double a = panel_width_ * static_cast<double>(i);
    return cumulative_[i] + 0.5 * (t - a) * (value(a) + value(t));
  }

  static constexpr double kPanelsPerUnit = 4096.0;

 private:
  double constant_ = 0.0;
  std::vector<double> knots_;
  double horizon_ = 1.0;
  double panel_width_ = 0.0;
  std::vector<double> cumulative_;
};

/// Noise schedule of the bridge: theta_t, the steady standard deviation
/// lambda (g_t^2 = 2 lambda^2 theta_t), the terminal penalty gamma and the
/// terminal time T. gamma may be +inf (hard pinning).
class NoiseSchedule {
 public:
  NoiseSchedule(ThetaSchedule theta, double lambda, double gamma, double T = 1.0, int n_train_steps = 100)
      : theta_(std::move(theta)), lambda_(lambda), gamma_(gamma), T_(T), n_train_steps_(n_train_steps) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and > 0");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
    if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("T must be finite and > 0");
    if (n_train_steps < 1) throw ConfigError("n_train_steps must be >= 1");
  }

  static NoiseSchedule constant(double theta, double lambda, double gamma, double T = 1.0, int n_train_steps = 100) {
    return {ThetaSchedule::constant(theta), lambda, gamma, T, n_train_steps};
  }

  const ThetaSchedule& theta_schedule() const { return theta_; }
  double lambda() const { return lambda_; }
  double gamma() const { return gamma_; }
  double T() const { return T_; }
  int n_train_steps() const { return n_train_steps_; }

  /// 1 / gamma, zero for gamma = inf.
  double inv_gamma() const { return 1.0 / gamma_; }

  double theta(double t) const { return theta_.value(t); }
  double g_sq(double t) const { return 2.0 * lambda_ * lambda_ * theta_.value(t); }

  /// Time of training-grid index i (1..n_train_steps).
  double grid_time(int i) const { return T_ * static_cast<double>(i) / static_cast<double>(n_train_steps_); }

  double theta_bar(double s, double t) const {
    check_ordered(s, t);
    if (s == t) return 0.0;
    if (theta_.is_constant()) return theta_.constant_value() * (t - s);
    return theta_.integral_to(t) - theta_.integral_to(s);
  }
  double theta_bar(double t) const { return theta_bar(0.0, t); }

  /// lambda^2 (1 - e^{-2 theta_bar(s,t)}), in [0, lambda^2).
  double sigma_bar_sq(double s, double t) const {
    return -lambda_ * lambda_ * std::expm1(-2.0 * theta_bar(s, t));
  }
  double sigma_bar_sq(double t) const { return sigma_bar_sq(0.0, t); }

  void check_time(double t) const {
    if (!(t >= 0.0 && t <= T_)) {
      std::ostringstream os;
      os << "time " << t << " outside [0, " << T_ << "]";
      throw DomainError(os.str());
    }
  }

 private:
  void check_ordered(double s, double t) const {
    check_time(s);
    check_time(t);
    if (s > t) {
      std::ostringstream os;
      os << "theta_bar requires s <= t, got s=" << s << " t=" << t;
      throw DomainError(os.str());
    }
  }

  ThetaSchedule theta_;
  double lambda_;
  double gamma_;
  double T_;
  int n_train_steps_;
};

/// Every scalar of one closed-form reverse step from time s down to time t.
///
/// kappa_* without gamma is the gamma -> inf limit of kappa_*_gamma. The three
/// mixing coefficients are an affine combination (they sum to one).
struct SolverCoeffs {
  double rho_t = 0.0, rho_s = 0.0;
  double kappa_t_gamma = 0.0, kappa_s_gamma = 0.0, kappa_0_gamma = 0.0;
  double kappa_t = 0.0, kappa_s = 0.0;
  double c1 = 0.0, c2 = 0.0, D = 0.0, E = 0.0, F = 0.0;
  double delta_sq = 0.0;
  double coef_state = 0.0;     // multiplies a_s
  double coef_terminal = 0.0;  // multiplies a_T
  double coef_pred = 0.0;      // multiplies the data prediction
};

namespace detail {

// 1 - e^{-2x}
inline double one_minus_exp_m2(double x) { return -std::expm1(-2.0 * x); }

}  // namespace detail

/// Evaluates the closed-form sampler coefficients for a step s -> t, t < s.
/// t = 0 is exact: rho_0 = 0 and no returned quantity divides by rho_t.
inline SolverCoeffs solver_coeffs(const NoiseSchedule& sched, double s, double t) {
  sched.check_time(s);
  sched.check_time(t);
  if (!(t < s)) {
    std::ostringstream os;
    os << "solver_coeffs requires t < s, got s=" << s << " t=" << t;
    throw DomainError(os.str());
  }
  using detail::one_minus_exp_m2;
  const double T = sched.T();
  const double lam2 = sched.lambda() * sched.lambda();
  const double h = sched.inv_gamma() / lam2;  // (gamma lambda^2)^{-1}

  const double tb_t = sched.theta_bar(0.0, t);
  const double tb_s = sched.theta_bar(0.0, s);
  const double tb_T = sched.theta_bar(0.0, T);
  const double tb_tT = sched.theta_bar(t, T);
  const double tb_sT = sched.theta_bar(s, T);
  const double tb_ts = sched.theta_bar(t, s);

  SolverCoeffs c;
  c.rho_t = std::exp(tb_t) * one_minus_exp_m2(tb_t);
  c.rho_s = std::exp(tb_s) * one_minus_exp_m2(tb_s);
  c.kappa_t_gamma = std::exp(tb_tT) * (h + one_minus_exp_m2(tb_tT));
  c.kappa_s_gamma = std::exp(tb_sT) * (h + one_minus_exp_m2(tb_sT));
  c.kappa_0_gamma = std::exp(tb_T) * (h + one_minus_exp_m2(tb_T));
  c.kappa_t = std::exp(tb_tT) * one_minus_exp_m2(tb_tT);
  c.kappa_s = std::exp(tb_sT) * one_minus_exp_m2(tb_sT);

  c.c1 = h * std::exp(2.0 * tb_T);
  c.c2 = std::expm1(2.0 * tb_T);
  const double sum = c.c1 + c.c2;
  c.D = 2.0 * c.c1 * c.c2 / (sum * sum * sum);
  c.E = c.c2 * c.c2 / (sum * sum);
  c.F = c.c1 * c.c1 / (sum * sum);

  if (!(c.rho_s > 0.0)) throw DomainError("schedule has no mean reversion on [0, s]; reverse step undefined");

  // ratio = (kappa_{t,g} kappa_s rho_t) / (kappa_{s,g} kappa_t rho_s). kappa_s = 0 only at s = T,
  // where the ratio vanishes for every gamma (including the gamma = inf limit taken last).
  const double rho_ratio = c.rho_t / c.rho_s;
  const double kappa_ratio = c.kappa_s / c.kappa_t;
  const double ratio =
      c.kappa_s == 0.0 ? 0.0 : (c.kappa_t_gamma / c.kappa_t) * (c.kappa_s / c.kappa_s_gamma) * rho_ratio;
  const double q = c.kappa_t_gamma / c.kappa_0_gamma;
  const double u = q * rho_ratio * kappa_ratio;
  c.coef_state = ratio;
  c.coef_pred = q - u;
  // 1 - ratio + u - q cancels badly for small s. With w(x) = kappa_{x,g}/kappa_{0,g} and
  // 1 - w(x) = (1 - e^{-tb_x}) G(x), G(x) = (h + 1 + e^{-tb_x - 2 tb_{x:T}}) / (h + 1 - e^{-2 tb_T})
  // (lambda^2 scaled out), the a_T coefficient is
  //   (1 - e^{-tb_t}) [G(t) - (kappa_s/kappa_t) (e^{tb_t}+1)/(e^{tb_s}+1) G(s) w(t)/w(s)].
  {
    const double denom = h + one_minus_exp_m2(tb_T);
    const double G_t = (h + 1.0 + std::exp(-tb_t - 2.0 * tb_tT)) / denom;
    const double G_s = (h + 1.0 + std::exp(-tb_s - 2.0 * tb_sT)) / denom;
    const double carried = c.kappa_s == 0.0 ? 0.0
                                            : (c.kappa_s / c.kappa_t) * ((std::exp(tb_t) + 1.0) / (std::exp(tb_s) + 1.0)) *
                                                  G_s * (c.kappa_t_gamma / c.kappa_s_gamma);
    c.coef_terminal = -std::expm1(-tb_t) * (G_t - carried);
  }

  // (delta^d)^2 with rho_t^2 folded into each bracketed term:
  //   rho_t^2 / (e^{2 tb_t} - 1) = 1 - e^{-2 tb_t}, so the E term is regular at t = 0.
  const double pre = lam2 * (c.kappa_t_gamma / c.kappa_t) * (c.kappa_t_gamma / c.kappa_t);
  const double e_term = c.E * std::expm1(2.0 * tb_t) * std::expm1(2.0 * tb_ts) / std::expm1(2.0 * tb_s);
  double d_term = 0.0;
  if (c.rho_t > 0.0 && c.D > 0.0) {
    const double log_ratio = std::log(c.kappa_s_gamma / c.kappa_t_gamma) + std::log(rho_ratio);
    d_term = c.D * c.rho_t * c.rho_t * log_ratio;
  }
  const double f_term =
      c.F > 0.0 ? c.F * c.rho_t * c.rho_t *
                      (std::exp(-tb_T - tb_t) / c.kappa_t_gamma - std::exp(-tb_T - tb_s) / c.kappa_s_gamma)
                : 0.0;
  c.delta_sq = pre * (e_term + d_term - f_term);
  return c;
}

}  // namespace bridgepolicy
