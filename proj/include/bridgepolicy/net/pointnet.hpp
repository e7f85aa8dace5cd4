#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "bridgepolicy/net/ops.hpp"

namespace bridgepolicy::net {

/// Weights of the shared per-point MLP: Linear -> LN -> SiLU -> Linear -> LN -> SiLU.
struct PointMlpVars {
  Var W0, b0, g0, be0, W1, b1, g1, be1;
};

namespace detail {

using ArrayRM = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PointActs {
  Mat xhat0, y0, s0, xhat1, y1, s1;
  Eigen::VectorXd inv0, inv1;
};

inline void ln_rows(const Mat& h, const RowVec& g, const RowVec& be, Mat& xhat, Eigen::VectorXd& inv, Mat& y) {
  const Eigen::VectorXd mean = h.rowwise().mean();
  xhat = h.colwise() - mean;
  inv = (xhat.array().square().rowwise().mean() + kLayerNormEps).rsqrt().matrix();
  xhat = inv.asDiagonal() * xhat;
  y = (xhat.array().rowwise() * g.array()).matrix();
  y.rowwise() += be;
}

inline Mat silu_of(const Mat& y) { return (y.array() / (1.0 + (-y.array()).exp())).matrix(); }

inline Mat silu_grad(const Mat& y, const Mat& upstream) {
  const ArrayRM sig = (1.0 + (-y.array()).exp()).inverse();
  return (upstream.array() * sig * (1.0 + y.array() * (1.0 - sig))).matrix();
}

// Row-wise LN backward for dy (already multiplied by the gain).
inline Mat ln_rows_back(const Mat& gh, const Mat& xhat, const Eigen::VectorXd& inv) {
  const double n = static_cast<double>(gh.cols());
  const Eigen::VectorXd m1 = gh.rowwise().sum() / n;
  const Eigen::VectorXd m2 = gh.cwiseProduct(xhat).rowwise().sum() / n;
  Mat dx = gh.colwise() - m1;
  dx -= m2.asDiagonal() * xhat;
  return inv.asDiagonal() * dx;
}

inline void point_forward(const Tape& t, const PointMlpVars& v, const Mat& x, PointActs& a) {
  Mat h = x * t.value(v.W0);
  h.rowwise() += t.value(v.b0).row(0);
  ln_rows(h, t.value(v.g0).row(0), t.value(v.be0).row(0), a.xhat0, a.inv0, a.y0);
  a.s0 = silu_of(a.y0);
  h.noalias() = a.s0 * t.value(v.W1);
  h.rowwise() += t.value(v.b1).row(0);
  ln_rows(h, t.value(v.g1).row(0), t.value(v.be1).row(0), a.xhat1, a.inv1, a.y1);
  a.s1 = silu_of(a.y1);
}

}  // namespace detail

/// Shared per-point MLP followed by a max over each group of `group` points:
/// (B*group) x 3 points -> B x C features. Equivalent to composing linear,
/// layer_norm, silu and max_pool_rows, but evaluated one group at a time and
/// back-propagated only through the rows that won a max (all other rows have
/// zero gradient), which keeps large clouds cheap.
inline Var point_mlp_maxpool(Tape& tape, const Mat& points, const PointMlpVars& v, Eigen::Index group) {
  if (points.cols() != 3 || group < 1 || points.rows() % group != 0)
    throw DomainError("point_mlp_maxpool: expected (B*group) x 3 points");
  const Eigen::Index B = points.rows() / group, C = tape.value(v.W1).cols();
  Mat pooled(B, C);
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(B * C));
  detail::PointActs acts;
  for (Eigen::Index b = 0; b < B; ++b) {
    detail::point_forward(tape, v, points.middleRows(b * group, group), acts);
    if (!acts.s1.allFinite()) throw NumericalError("non-finite activations in point encoder");
    for (Eigen::Index c = 0; c < C; ++c) {
      Eigen::Index best = 0;
      double m = acts.s1(0, c);
      for (Eigen::Index r = 1; r < group; ++r)
        if (acts.s1(r, c) > m) {
          m = acts.s1(r, c);
          best = r;
        }
      pooled(b, c) = m;
      argmax[static_cast<std::size_t>(b * C + c)] = b * group + best;
    }
  }
  const bool grad = detail::any_grad(tape, {v.W0, v.b0, v.g0, v.be0, v.W1, v.b1, v.g1, v.be1});
  return tape.push(std::move(pooled), grad, [v, points, B, C, argmax = std::move(argmax)](Tape& t, std::size_t self) {
    const Mat& g = t.node_grad(self);
    // distinct winning rows and the upstream gradient each of them receives
    std::vector<Eigen::Index> rows(argmax);
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    const auto R = static_cast<Eigen::Index>(rows.size());
    Mat x(R, 3), ds1 = Mat::Zero(R, C);
    for (Eigen::Index i = 0; i < R; ++i) x.row(i) = points.row(rows[static_cast<std::size_t>(i)]);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index c = 0; c < C; ++c) {
        const auto r = argmax[static_cast<std::size_t>(b * C + c)];
        const auto i = std::lower_bound(rows.begin(), rows.end(), r) - rows.begin();
        ds1(i, c) += g(b, c);
      }
    detail::PointActs a;
    detail::point_forward(t, v, x, a);
    const Mat dy1 = detail::silu_grad(a.y1, ds1);
    t.accumulate(v.g1, dy1.cwiseProduct(a.xhat1).colwise().sum());
    t.accumulate(v.be1, dy1.colwise().sum());
    const Mat dh1 = detail::ln_rows_back((dy1.array().rowwise() * t.value(v.g1).row(0).array()).matrix(), a.xhat1, a.inv1);
    t.accumulate(v.W1, a.s0.transpose() * dh1);
    t.accumulate(v.b1, dh1.colwise().sum());
    const Mat dy0 = detail::silu_grad(a.y0, dh1 * t.value(v.W1).transpose());
    t.accumulate(v.g0, dy0.cwiseProduct(a.xhat0).colwise().sum());
    t.accumulate(v.be0, dy0.colwise().sum());
    const Mat dh0 = detail::ln_rows_back((dy0.array().rowwise() * t.value(v.g0).row(0).array()).matrix(), a.xhat0, a.inv0);
    t.accumulate(v.W0, x.transpose() * dh0);
    t.accumulate(v.b0, dh0.colwise().sum());
  });
}

}  // namespace bridgepolicy::net
