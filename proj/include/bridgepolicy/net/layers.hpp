#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bridgepolicy/net/ops.hpp"
#include "bridgepolicy/rng.hpp"

namespace bridgepolicy::net {

/// Dense layer with weights W (in x out) and bias b (1 x out), registered in a ParamStore.
class Linear {
 public:
  Linear() = default;

  /// Uniform(+-1/sqrt(in)) init; zero_init gives an all-zero layer.
  Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng, bool zero_init = false)
      : name_(name), in_(in), out_(out) {
    if (in < 1 || out < 1) throw DomainError("Linear " + name + ": widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Mat W = Mat::Zero(in, out), b = Mat::Zero(1, out);
    if (!zero_init) {
      for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = uniform(rng, -bound, bound);
      for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = uniform(rng, -bound, bound);
    }
    store.add(name + ".W", std::move(W));
    store.add(name + ".b", std::move(b));
  }

  Var operator()(Tape& tape, ParamStore& store, Var x) const {
    if (tape.value(x).cols() != in_)
      throw DomainError("Linear " + name_ + ": expected " + std::to_string(in_) + " input columns, got " +
                        std::to_string(tape.value(x).cols()));
    return linear(tape, x, tape.param(store.get(name_ + ".W")), tape.param(store.get(name_ + ".b")));
  }

  Eigen::Index in() const { return in_; }
  Eigen::Index out() const { return out_; }

 private:
  std::string name_;
  Eigen::Index in_ = 0, out_ = 0;
};

/// Layer normalization with learned gain (init 1) and bias (init 0).
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Eigen::Index width) : name_(name) {
    store.add(name + ".gain", Mat::Ones(1, width));
    store.add(name + ".bias", Mat::Zero(1, width));
  }

  Var operator()(Tape& tape, ParamStore& store, Var x) const {
    return layer_norm(tape, x, tape.param(store.get(name_ + ".gain")), tape.param(store.get(name_ + ".bias")));
  }

 private:
  std::string name_;
};

/// Sinusoidal embedding of (possibly fractional) step indices: [sin(k w_j), cos(k w_j)]
/// with w_j geometric from 1 down to 1e-4. Rows follow `steps`.
inline Mat time_embedding(const Eigen::VectorXd& steps, Eigen::Index dim) {
  if (dim < 2 || dim % 2 != 0) throw DomainError("time embedding dimension must be even and >= 2");
  const Eigen::Index half = dim / 2;
  Mat out(steps.size(), dim);
  for (Eigen::Index j = 0; j < half; ++j) {
    const double w = half == 1 ? 1.0 : std::pow(1e-4, static_cast<double>(j) / static_cast<double>(half - 1));
    for (Eigen::Index r = 0; r < steps.size(); ++r) {
      out(r, j) = std::sin(steps[r] * w);
      out(r, half + j) = std::cos(steps[r] * w);
    }
  }
  return out;
}

/// Stack of Linear layers with SiLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, Eigen::Index in, const std::vector<Eigen::Index>& hidden,
      Eigen::Index out, Rng& rng, bool zero_last = false) {
    Eigen::Index w = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers_.emplace_back(store, name + "." + std::to_string(i), w, hidden[i], rng);
      w = hidden[i];
    }
    layers_.emplace_back(store, name + "." + std::to_string(hidden.size()), w, out, rng, zero_last);
  }

  Var operator()(Tape& tape, ParamStore& store, Var x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](tape, store, x);
      if (i + 1 < layers_.size()) x = silu(tape, x);
    }
    return x;
  }

  Eigen::Index in() const { return layers_.front().in(); }
  Eigen::Index out() const { return layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
};

}  // namespace bridgepolicy::net
