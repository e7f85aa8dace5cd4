#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bridgepolicy/bridge.hpp"
#include "bridgepolicy/envs.hpp"
#include "bridgepolicy/net/gradcheck.hpp"
#include "bridgepolicy/net/layers.hpp"
#include "bridgepolicy/policy.hpp"
#include "bridgepolicy/reference.hpp"
#include "bridgepolicy/sampler.hpp"
#include "bridgepolicy/schedule.hpp"

// Oracle suites behind `verify`. Each check records what was expected, what
// was observed and the tolerance, so reports are self-describing.
namespace bridgepolicy::verify {

struct Check {
  std::string suite, name;
  double expected = 0.0, observed = 0.0, tolerance = 0.0;
  bool pass = false;
};

namespace detail {

inline Check near(const std::string& suite, const std::string& name, double expected, double observed, double tol) {
  return {suite, name, expected, observed, tol, std::abs(observed - expected) <= tol};
}

// observed must not exceed the bound
inline Check at_most(const std::string& suite, const std::string& name, double observed, double bound) {
  return {suite, name, 0.0, observed, bound, observed <= bound};
}

inline net::Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng = make_rng(seed, 0x7E57);
  net::Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * uniform(rng, -1.0, 1.0);
  return m;
}

// sum(w .* x) with fixed weights, so every entry of x sees a distinct gradient
inline net::Var readout(net::Tape& tape, net::Var x, std::uint64_t seed = 99) {
  const auto rows = tape.value(x).rows(), cols = tape.value(x).cols();
  net::Var w = tape.constant(random_mat(rows * cols, 1, seed));
  return net::linear(tape, net::reshape(tape, x, 1, rows * cols), w, tape.constant(net::Mat::Zero(1, 1)));
}

// Textbook greedy FPS: recompute every min-distance from scratch each round.
inline std::vector<Eigen::Index> brute_force_fps(const envs::Cloud& pts, Eigen::Index k, Eigen::Index start) {
  std::vector<Eigen::Index> sel{start};
  while (static_cast<Eigen::Index>(sel.size()) < k) {
    Eigen::Index best = -1;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      if (std::find(sel.begin(), sel.end(), i) != sel.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (Eigen::Index j : sel) d = std::min(d, (pts.row(i) - pts.row(j)).squaredNorm());
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    sel.push_back(best);
  }
  return sel;
}

}  // namespace detail

/// Closed-form marginal vs 20000 Euler-Maruyama paths (dt 1e-4), 3 standard errors.
inline std::vector<Check> bridge_oracle(int paths = 20000) {
  const std::string S = "bridge-oracle";
  const auto t0 = std::chrono::steady_clock::now();
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 100.0);
  const BridgeEndpoints ends(State::Zero(1), State::Ones(1));
  const double dt = 1e-4;
  const std::vector<double> times{0.25, 0.5, 0.75, 1.0};
  ForwardSimulator sim(sched, dt);
  std::vector<std::vector<double>> xs(times.size());
  for (int p = 0; p < paths; ++p) {
    const auto path = sim.simulate(ends, derive_seed(20240, static_cast<std::uint64_t>(p)));
    for (std::size_t k = 0; k < times.size(); ++k) xs[k].push_back(path.states(std::llround(times[k] / dt), 0));
  }
  std::vector<Check> out;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double n = static_cast<double>(xs[k].size());
    double m = 0.0;
    for (double x : xs[k]) m += x;
    m /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : xs[k]) {
      const double d = (x - m) * (x - m);
      m2 += d;
      m4 += d * d;
    }
    m2 /= n - 1.0;
    m4 /= n;
    const double se_mean = std::sqrt(m2 / n), se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
    const auto cf = marginal_moments(ends, sched, times[k]);
    std::ostringstream t;
    t << "t=" << times[k];
    out.push_back(detail::near(S, "mean " + t.str(), cf.mean[0], m, 3.0 * se_mean));
    out.push_back(detail::near(S, "variance " + t.str(), cf.variance, m2, 3.0 * se_var));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.push_back(detail::at_most(S, "runtime seconds", secs, 60.0));
  return out;
}

/// |mean(T) - a_T| against gamma on a log-log scale.
inline std::vector<Check> bridge_scaling() {
  const std::string S = "bridge-scaling";
  const BridgeEndpoints ends(State::Zero(1), State::Ones(1));
  std::vector<double> lg, lr;
  std::vector<Check> out;
  for (double gamma : {1e2, 1e3, 1e4}) {
    const auto sched = NoiseSchedule::constant(2.0, 0.5, gamma);
    const double r = std::abs(marginal_moments(ends, sched, 1.0).mean[0] - 1.0);
    lg.push_back(std::log(gamma));
    lr.push_back(std::log(r));
  }
  // least-squares slope over the three points
  const double mg = (lg[0] + lg[1] + lg[2]) / 3, mr = (lr[0] + lr[1] + lr[2]) / 3;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 3; ++i) {
    num += (lg[i] - mg) * (lr[i] - mr);
    den += (lg[i] - mg) * (lg[i] - mg);
  }
  out.push_back(detail::near(S, "log-log slope", -1.0, num / den, 0.05));
  const auto sched = NoiseSchedule::constant(2.0, 0.5, 1e3);
  const auto c0 = marginal_coefficients(sched, 0.0);
  const auto cT = marginal_coefficients(sched, 1.0);
  out.push_back(detail::near(S, "a0 weight at t=0", 1.0, c0.weight_a0, 1e-12));
  // the residual 1 - weight_aT at T is e^{-theta_bar_T} h / (sigma_bar_sq_T + h)
  const double sT = sched.sigma_bar_sq(1.0), h = 1e-3;
  out.push_back(detail::near(S, "aT weight at t=T", 1.0 - std::exp(-sched.theta_bar(1.0)) * h / (sT + h), cT.weight_aT, 1e-12));
  return out;
}

/// reverse_step at t = s returns a_s and at t = 0 returns the prediction, over 100 schedules.
inline std::vector<Check> sampler_degenerate() {
  const std::string S = "sampler-degenerate";
  double worst_same = 0.0, worst_zero = 0.0;
  int cases = 0;
  Rng rng = make_rng(31);
  for (double theta : {0.1, 0.5, 1.0, 2.0, 5.0})
    for (double lambda : {0.05, 0.2, 0.5, 1.0})
      for (double gamma : {1.0, 1e2, 1e4, 1e7, 1e10}) {
        const auto sched = NoiseSchedule::constant(theta, lambda, gamma);
        const double s = uniform(rng, 0.01, 1.0);
        const State a = standard_normal(rng, 6), aT = standard_normal(rng, 6), pred = standard_normal(rng, 6),
                    eps = standard_normal(rng, 6);
        worst_same = std::max(worst_same, (reverse_step(a, aT, pred, sched, s, s, eps) - a).cwiseAbs().maxCoeff());
        worst_zero = std::max(worst_zero, (reverse_step(a, aT, pred, sched, s, 0.0, eps) - pred).cwiseAbs().maxCoeff());
        ++cases;
      }
  return {detail::near(S, "grid points", 100, cases, 0.0), detail::at_most(S, "max |step(s->s) - a_s|", worst_same, 1e-12),
          detail::at_most(S, "max |step(s->0) - a_pred|", worst_zero, 1e-12)};
}

/// A denoiser that always answers a0 makes the chain land on a0, noise or not.
inline std::vector<Check> sampler_recovery() {
  const std::string S = "sampler-recovery";
  const auto sched = NoiseSchedule::constant(2.0, 1.0, 1e7);
  const State target = State::LinSpaced(16, -0.9, 0.8), zobs = State::Constant(16, 0.3);
  auto perfect = [&](const State&, const State&, double) { return target; };
  std::vector<Check> out;
  for (int M : {1, 5, 10}) {
    SamplerConfig cfg;
    cfg.n_steps = M;
    ChainTrace trace;
    const State got = sample_chain(zobs, perfect, sched, cfg, 42, &trace);
    out.push_back(detail::at_most(S, "M=" + std::to_string(M) + " max |a - a0|", (got - target).cwiseAbs().maxCoeff(), 1e-9));
  }
  // the intermediate states really are random: two seeds disagree midway
  SamplerConfig cfg;
  ChainTrace a, b;
  sample_chain(zobs, perfect, sched, cfg, 1, &a);
  sample_chain(zobs, perfect, sched, cfg, 2, &b);
  const double spread = (a.states[5] - b.states[5]).cwiseAbs().maxCoeff();
  out.push_back({S, "M=10 midway seed spread > 0", 0.0, spread, 0.0, spread > 0.0});
  return out;
}

/// Double-precision coefficients vs a 50-digit evaluation on 1000 random tuples.
inline std::vector<Check> coefficients(int tuples = 1000) {
  const std::string S = "coefficients";
  Rng rng = make_rng(2024);
  double worst = 0.0, min_delta = std::numeric_limits<double>::infinity();
  for (int k = 0; k < tuples; ++k) {
    const double theta = uniform(rng, 0.5, 5.0), lambda = uniform(rng, 0.2, 1.0);
    const double gamma = std::pow(10.0, uniform(rng, 2.0, 7.0));
    const double s = uniform(rng, 1e-3, 1.0), t = s * uniform(rng, 0.0, 1.0);
    const auto got = solver_coeffs(NoiseSchedule::constant(theta, lambda, gamma), s, t);
    const auto want = reference::solver_coeffs(theta, lambda, gamma, 1.0, s, t);
    for (double e : {reference::rel_err(got.coef_state, want.coef_state),
                     reference::rel_err(got.coef_terminal, want.coef_terminal),
                     reference::rel_err(got.coef_pred, want.coef_pred), reference::rel_err(got.delta_sq, want.delta_sq)})
      worst = std::max(worst, e);
    min_delta = std::min(min_delta, got.delta_sq);
  }
  return {detail::at_most(S, "worst relative error", worst, 1e-10),
          {S, "min delta^2 >= -1e-12", -1e-12, min_delta, 0.0, min_delta >= -1e-12}};
}

/// Central finite differences for every differentiable op and the full training loss.
inline std::vector<Check> net_gradients() {
  const std::string S = "net-gradients";
  using net::Mat;
  using net::Tape;
  using net::Var;
  using In = std::vector<Var>;
  constexpr double tol = 1e-5;
  std::vector<Check> out;
  auto record = [&](const std::string& name, const net::GradCheckResult& r) {
    out.push_back(detail::at_most(S, name, r.max_rel_err, tol));
  };
  record("linear", net::gradcheck_inputs([](Tape& t, const In& in) { return detail::readout(t, net::linear(t, in[0], in[1], in[2])); },
                                         {detail::random_mat(5, 4, 1), detail::random_mat(4, 3, 2), detail::random_mat(1, 3, 3)}));
  record("silu", net::gradcheck_inputs([](Tape& t, const In& in) { return detail::readout(t, net::silu(t, in[0])); },
                                       {detail::random_mat(4, 5, 4, 3.0)}));
  record("layer norm",
         net::gradcheck_inputs([](Tape& t, const In& in) { return detail::readout(t, net::layer_norm(t, in[0], in[1], in[2])); },
                               {detail::random_mat(4, 6, 5, 2.0), detail::random_mat(1, 6, 6), detail::random_mat(1, 6, 7)}));
  record("attention", net::gradcheck_inputs(
                          [](Tape& t, const In& in) { return detail::readout(t, net::cross_attention_fuse(t, in[0], in[1], 3)); },
                          {detail::random_mat(2, 12, 8, 1.5), detail::random_mat(2, 6, 9)}));
  record("l1 loss", net::gradcheck_inputs([](Tape& t, const In& in) { return net::l1_loss(t, in[0], in[1]); },
                                          {detail::random_mat(4, 3, 10), detail::random_mat(4, 3, 11)}));
  record("clip loss", net::gradcheck_inputs([](Tape& t, const In& in) { return net::clip_loss(t, in[0], in[1], 0.07); },
                                            {detail::random_mat(5, 6, 16), detail::random_mat(5, 6, 17)}));

  // full model composite: encoders, fusion, bridge interpolation, denoiser, both losses
  RunConfig cfg;
  cfg.horizon = 4;
  cfg.action_steps = 2;
  cfg.hidden = {6};
  cfg.state_hidden = 8;
  cfg.point_hidden = 8;
  cfg.d_s = 4;
  cfg.time_embed = 8;
  cfg.n_points = 8;
  cfg.n_raw = 16;
  envs::EnvConfig ec;
  ec.n_points = cfg.n_points;
  ec.n_raw = cfg.n_raw;
  const auto ds = envs::build_dataset(ec, 1, 4);
  const auto data = policy::make_training_data(ds, cfg, policy::Normalizer::from_dataset(ds));
  for (bool baseline : {false, true}) {
    policy::Model m(cfg, ds.state_dim, baseline, 1);
    const std::vector<Eigen::Index> idx{0, 1, 2, 3};
    record(baseline ? "full model (noise prior)" : "full model (bridge)",
           net::gradcheck_params([&](Tape& t) { return policy::record_loss(t, m, data, idx, 11, nullptr); }, m.params));
  }
  return out;
}

/// The constructed CLIP cases.
inline std::vector<Check> clip() {
  const std::string S = "clip";
  using net::Mat;
  auto loss = [](const Mat& x, const Mat& y, double tau) {
    net::Tape t;
    return t.value(net::clip_loss(t, t.constant(x), t.constant(y), tau))(0, 0);
  };
  std::vector<Check> out;
  out.push_back(detail::near(S, "n=1 loss", 0.0, loss(detail::random_mat(1, 5, 1), detail::random_mat(1, 5, 2), 0.07), 0.0));
  out.push_back(detail::near(S, "orthogonal pair, tau=1", 2.0 * std::log1p(std::exp(-1.0)),
                             loss(Mat::Identity(2, 2), Mat::Identity(2, 2), 1.0), 1e-9));
  const Mat x = detail::random_mat(7, 6, 3), y = detail::random_mat(7, 6, 4);
  const double base = loss(x, y, 0.07);
  double worst = 0.0;
  Rng rng = make_rng(5);
  for (int k = 0; k < 20; ++k) {
    Eigen::PermutationMatrix<Eigen::Dynamic> p(7);
    p.setIdentity();
    std::shuffle(p.indices().data(), p.indices().data() + 7, rng);
    worst = std::max(worst, std::abs(loss(p * x, p * y, 0.07) - base));
  }
  out.push_back(detail::at_most(S, "joint permutation |dL|", worst, 0.0));
  return out;
}

/// Greedy FPS vs the brute-force greedy on 200 random instances (M <= 64).
inline std::vector<Check> fps() {
  const std::string S = "fps";
  Rng rng = make_rng(5);
  int mismatches = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto m = static_cast<Eigen::Index>(1 + rng() % 64);
    const auto k = static_cast<Eigen::Index>(1 + rng() % static_cast<std::uint64_t>(m));
    const auto start = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m));
    envs::Cloud pts(m, 3);
    // every other instance sits on a coarse lattice so distance ties occur
    for (Eigen::Index i = 0; i < pts.size(); ++i)
      pts.data()[i] = inst % 2 ? uniform(rng, -1, 1) : static_cast<double>(rng() % 4);
    if (envs::farthest_point_sample(pts, k, start) != detail::brute_force_fps(pts, k, start)) ++mismatches;
  }
  return {detail::near(S, "index mismatches over 200 instances", 0.0, mismatches, 0.0)};
}

using SuiteFn = std::function<std::vector<Check>()>;

inline const std::vector<std::pair<std::string, SuiteFn>>& suites() {
  static const std::vector<std::pair<std::string, SuiteFn>> all{
      {"bridge-oracle", [] { return bridge_oracle(); }},
      {"bridge-scaling", bridge_scaling},
      {"sampler-degenerate", sampler_degenerate},
      {"sampler-recovery", sampler_recovery},
      {"coefficients", [] { return coefficients(); }},
      {"net-gradients", net_gradients},
      {"clip", clip},
      {"fps", fps},
  };
  return all;
}

/// Runs one suite by name, or every suite for "all".
inline std::vector<Check> run(const std::string& name) {
  std::vector<Check> out;
  bool found = false;
  for (const auto& [n, fn] : suites())
    if (name == "all" || name == n) {
      auto c = fn();
      out.insert(out.end(), c.begin(), c.end());
      found = true;
    }
  if (!found) {
    std::string known;
    for (const auto& s : suites()) known += " " + s.first;
    throw ConfigError("unknown verify suite '" + name + "' (known: all" + known + ")");
  }
  return out;
}

inline bool all_pass(const std::vector<Check>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

inline std::string table(const std::vector<Check>& checks) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "suite" << std::setw(38) << "check" << std::right << std::setw(16) << "expected"
     << std::setw(16) << "observed" << std::setw(12) << "tolerance"
     << "  result\n";
  for (const auto& c : checks)
    os << std::left << std::setw(20) << c.suite << std::setw(38) << c.name << std::right << std::setprecision(8)
       << std::setw(16) << c.expected << std::setw(16) << c.observed << std::setw(12) << std::setprecision(3) << c.tolerance
       << "  " << (c.pass ? "PASS" : "FAIL") << "\n";
  return os.str();
}

inline nlohmann::json to_json(const Check& c) {
  return {{"suite", c.suite}, {"name", c.name},           {"expected", c.expected},
          {"observed", c.observed}, {"tolerance", c.tolerance}, {"pass", c.pass}};
}

}  // namespace bridgepolicy::verify
