#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bridgepolicy/net/tape.hpp"

namespace bridgepolicy::net {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "<name>[<flat index>]"
  std::size_t checked = 0;
};

// Relative error with a floor on the denominator, so gradients that are
// (almost) zero are compared absolutely at 1e-4 * tol instead of blowing up.
inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

namespace detail {

inline void track(GradCheckResult& r, double err, const std::string& name, Eigen::Index i) {
  ++r.checked;
  if (err > r.max_rel_err || !std::isfinite(err)) {
    r.max_rel_err = std::isfinite(err) ? err : INFINITY;
    r.worst = name + "[" + std::to_string(i) + "]";
  }
}

}  // namespace detail

/// Central-difference check of d f / d inputs. `f` receives fresh input leaves.
inline GradCheckResult gradcheck_inputs(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                                        std::vector<Mat> inputs, double h = 1e-5) {
  auto eval = [&](bool with_grad, std::vector<Mat>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.input(m));
    const Var out = f(tape, vars);
    const double value = tape.value(out)(0, 0);
    if (with_grad) {
      tape.backward(out);
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return value;
  };
  std::vector<Mat> analytic;
  eval(true, &analytic);
  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k].data()[i];
      inputs[k].data()[i] = x0 + h;
      const double fp = eval(false, nullptr);
      inputs[k].data()[i] = x0 - h;
      const double fm = eval(false, nullptr);
      inputs[k].data()[i] = x0;
      detail::track(r, grad_rel_err(analytic[k].data()[i], (fp - fm) / (2.0 * h)), "input" + std::to_string(k), i);
    }
  return r;
}

/// Central-difference check of d f / d every parameter in `store`.
inline GradCheckResult gradcheck_params(const std::function<Var(Tape&)>& f, ParamStore& store, double h = 1e-5) {
  store.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  std::vector<Mat> analytic;
  for (std::size_t k = 0; k < store.size(); ++k) analytic.push_back(store.at(k).grad);
  auto eval = [&] {
    Tape tape;
    return tape.value(f(tape))(0, 0);
  };
  GradCheckResult r;
  for (std::size_t k = 0; k < store.size(); ++k) {
    Mat& w = store.at(k).value;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double x0 = w.data()[i];
      w.data()[i] = x0 + h;
      const double fp = eval();
      w.data()[i] = x0 - h;
      const double fm = eval();
      w.data()[i] = x0;
      detail::track(r, grad_rel_err(analytic[k].data()[i], (fp - fm) / (2.0 * h)), store.name(k), i);
    }
  }
  store.zero_grad();
  return r;
}

}  // namespace bridgepolicy::net
