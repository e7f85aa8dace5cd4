#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <vector>

#include "bridgepolicy/errors.hpp"
#include "bridgepolicy/net/tape.hpp"

namespace bridgepolicy::net {

namespace detail {

inline bool any_grad(const Tape& tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (tape.requires_grad(v)) return true;
  return false;
}

inline void check_finite(const Mat& m, const char* op) {
  if (!m.allFinite()) throw NumericalError(std::string("non-finite values produced by ") + op);
}

// Sum that is independent of the order of its terms (sorted before summing).
inline double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace detail

/// y = x W + b, with W stored (in x out) and b a 1 x out row.
inline Var linear(Tape& tape, Var x, Var W, Var b) {
  const Mat& xv = tape.value(x);
  const Mat& Wv = tape.value(W);
  const Mat& bv = tape.value(b);
  if (xv.cols() != Wv.rows() || bv.cols() != Wv.cols() || bv.rows() != 1) throw DomainError("linear: shape mismatch");
  Mat y = xv * Wv;
  y.rowwise() += bv.row(0);
  return tape.push(std::move(y), detail::any_grad(tape, {x, W, b}), [x, W, b](Tape& t, std::size_t self) {
    const Mat& g = t.node_grad(self);
    if (t.requires_grad(x)) t.accumulate(x, g * t.value(W).transpose());
    if (t.requires_grad(W)) t.accumulate(W, t.value(x).transpose() * g);
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

/// Sigmoid-weighted linear unit x * sigmoid(x).
inline Var silu(Tape& tape, Var x) {
  const Mat& xv = tape.value(x);
  Mat sig = (1.0 + (-xv.array()).exp()).inverse().matrix();
  Mat y = (xv.array() * sig.array()).matrix();
  return tape.push(std::move(y), tape.requires_grad(x), [x, sig = std::move(sig)](Tape& t, std::size_t self) {
    const auto xa = t.value(x).array();
    const auto s = sig.array();
    t.accumulate(x, (t.node_grad(self).array() * s * (1.0 + xa * (1.0 - s))).matrix());
  });
}

inline constexpr double kLayerNormEps = 1e-8;

/// Row-wise layer normalization followed by the affine map gamma * xhat + beta.
inline Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps = kLayerNormEps) {
  const Mat& xv = tape.value(x);
  const auto n = xv.cols();
  const Mat& gv = tape.value(gamma);
  const Mat& bv = tape.value(beta);
  if (gv.cols() != n || bv.cols() != n) throw DomainError("layer_norm: affine shape mismatch");
  Eigen::VectorXd inv_std(xv.rows());
  Mat xhat(xv.rows(), n);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const auto centered = xv.row(r).array() - mean;
    const double var = centered.square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (centered * inv_std[r]).matrix();
  }
  Mat y = (xhat.array().rowwise() * gv.row(0).array()).matrix();
  y.rowwise() += bv.row(0);
  return tape.push(std::move(y), detail::any_grad(tape, {x, gamma, beta}),
                   [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                     const Mat& g = t.node_grad(self);
                     if (t.requires_grad(gamma)) t.accumulate(gamma, (g.array() * xhat.array()).colwise().sum().matrix());
                     if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
                     if (!t.requires_grad(x)) return;
                     const Mat gh = (g.array().rowwise() * t.value(gamma).row(0).array()).matrix();
                     const auto n = static_cast<double>(gh.cols());
                     Mat dx(gh.rows(), gh.cols());
                     for (Eigen::Index r = 0; r < gh.rows(); ++r) {
                       const double m1 = gh.row(r).sum() / n;
                       const double m2 = gh.row(r).dot(xhat.row(r)) / n;
                       dx.row(r) = inv_std[r] * (gh.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
                     }
                     t.accumulate(x, dx);
                   });
}

/// Row-major reinterpretation (data order unchanged).
inline Var reshape(Tape& tape, Var x, Eigen::Index rows, Eigen::Index cols) {
  const Mat& xv = tape.value(x);
  if (rows * cols != xv.size()) throw DomainError("reshape: element count mismatch");
  Mat y = Eigen::Map<const Mat>(xv.data(), rows, cols);
  const auto r0 = xv.rows(), c0 = xv.cols();
  return tape.push(std::move(y), tape.requires_grad(x), [x, r0, c0](Tape& t, std::size_t self) {
    const Mat& g = t.node_grad(self);
    t.accumulate(x, Eigen::Map<const Mat>(g.data(), r0, c0));
  });
}

/// Column-wise concatenation of matrices with equal row counts.
inline Var concat_cols(Tape& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw DomainError("concat_cols: no inputs");
  const auto rows = tape.value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (Var p : parts) {
    if (tape.value(p).rows() != rows) throw DomainError("concat_cols: row mismatch");
    cols += tape.value(p).cols();
    grad = grad || tape.requires_grad(p);
  }
  Mat y(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    y.middleCols(c, tape.value(p).cols()) = tape.value(p);
    c += tape.value(p).cols();
  }
  return tape.push(std::move(y), grad, [parts](Tape& t, std::size_t self) {
    const Mat& g = t.node_grad(self);
    Eigen::Index c = 0;
    for (Var p : parts) {
      const auto w = t.value(p).cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(c, w));
      c += w;
    }
  });
}

/// Max over consecutive groups of `group` rows: (B*group) x C -> B x C.
/// Gradient goes to the first maximizing row of each group and column.
inline Var max_pool_rows(Tape& tape, Var x, Eigen::Index group) {
  const Mat& xv = tape.value(x);
  if (group < 1 || xv.rows() % group != 0) throw DomainError("max_pool_rows: rows not divisible by group");
  const auto B = xv.rows() / group, C = xv.cols();
  Mat y(B, C);
  std::vector<Eigen::Index> argmax(static_cast<std::size_t>(B * C));
  for (Eigen::Index b = 0; b < B; ++b) {
    y.row(b) = xv.row(b * group);
    for (Eigen::Index c = 0; c < C; ++c) argmax[static_cast<std::size_t>(b * C + c)] = b * group;
    for (Eigen::Index r = 1; r < group; ++r) {
      const auto row = xv.row(b * group + r);
      for (Eigen::Index c = 0; c < C; ++c)
        if (row[c] > y(b, c)) {
          y(b, c) = row[c];
          argmax[static_cast<std::size_t>(b * C + c)] = b * group + r;
        }
    }
  }
  const auto rows = xv.rows();
  return tape.push(std::move(y), tape.requires_grad(x),
                   [x, rows, B, C, argmax = std::move(argmax)](Tape& t, std::size_t self) {
                     const Mat& g = t.node_grad(self);
                     Mat dx = Mat::Zero(rows, C);
                     for (Eigen::Index b = 0; b < B; ++b)
                       for (Eigen::Index c = 0; c < C; ++c) dx(argmax[static_cast<std::size_t>(b * C + c)], c) += g(b, c);
                     t.accumulate(x, dx);
                   });
}

/// Per-row affine map y_r = scale_r * x_r + offset_r with constant scale and offset.
inline Var scale_rows_add(Tape& tape, Var x, Eigen::VectorXd scale, Mat offset) {
  const Mat& xv = tape.value(x);
  if (scale.size() != xv.rows() || offset.rows() != xv.rows() || offset.cols() != xv.cols())
    throw DomainError("scale_rows_add: shape mismatch");
  Mat y = scale.asDiagonal() * xv + offset;
  return tape.push(std::move(y), tape.requires_grad(x), [x, scale = std::move(scale)](Tape& t, std::size_t self) {
    t.accumulate(x, scale.asDiagonal() * t.node_grad(self));
  });
}

/// a + alpha * b for scalars (1 x 1).
inline Var weighted_sum(Tape& tape, Var a, Var b, double alpha) {
  const Mat& av = tape.value(a);
  const Mat& bv = tape.value(b);
  if (av.size() != 1 || bv.size() != 1) throw DomainError("weighted_sum expects scalars");
  Mat y = av + alpha * bv;
  return tape.push(std::move(y), detail::any_grad(tape, {a, b}), [a, b, alpha](Tape& t, std::size_t self) {
    const Mat& g = t.node_grad(self);
    t.accumulate(a, g);
    t.accumulate(b, alpha * g);
  });
}

/// Value copy that blocks gradient flow.
inline Var stop_gradient(Tape& tape, Var x) { return tape.constant(tape.value(x)); }

/// Row-wise softmax with the max subtracted.
inline Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Fusion of state tokens and point-cloud tokens for a batch:
///   z_obs = softmax(z_s z_s^T / sqrt(d_s)) z_pc
/// per sample, where z_s is H x d_s (query and key) and z_pc is H x D_a (value).
/// Inputs are B x (H*d_s) and B x (H*D_a); output is B x (H*D_a).
inline Var cross_attention_fuse(Tape& tape, Var zs, Var zpc, Eigen::Index tokens) {
  const Mat& sv = tape.value(zs);
  const Mat& pv = tape.value(zpc);
  if (sv.rows() != pv.rows()) throw DomainError("cross_attention_fuse: batch mismatch");
  if (tokens < 1 || sv.cols() % tokens != 0 || pv.cols() % tokens != 0)
    throw DomainError("cross_attention_fuse: token counts differ");
  if (!sv.allFinite() || !pv.allFinite()) throw NumericalError("cross_attention_fuse: NaN input");
  const auto B = sv.rows(), ds = sv.cols() / tokens, da = pv.cols() / tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(ds));
  Mat y(B, tokens * da);
  std::vector<Mat> probs(static_cast<std::size_t>(B));
  for (Eigen::Index b = 0; b < B; ++b) {
    Eigen::Map<const Mat> S(sv.row(b).data(), tokens, ds);
    Eigen::Map<const Mat> P(pv.row(b).data(), tokens, da);
    Mat att = softmax_rows(scale * S * S.transpose());
    Eigen::Map<Mat>(y.row(b).data(), tokens, da) = att * P;
    probs[static_cast<std::size_t>(b)] = std::move(att);
  }
  return tape.push(std::move(y), detail::any_grad(tape, {zs, zpc}),
                   [zs, zpc, tokens, ds, da, scale, probs = std::move(probs)](Tape& t, std::size_t self) {
                     const Mat& g = t.node_grad(self);
                     const Mat& sv = t.value(zs);
                     const Mat& pv = t.value(zpc);
                     const auto B = g.rows();
                     Mat dS = Mat::Zero(B, tokens * ds);
                     Mat dP = Mat::Zero(B, tokens * da);
                     for (Eigen::Index b = 0; b < B; ++b) {
                       const Mat& att = probs[static_cast<std::size_t>(b)];
                       Eigen::Map<const Mat> S(sv.row(b).data(), tokens, ds);
                       Eigen::Map<const Mat> P(pv.row(b).data(), tokens, da);
                       Eigen::Map<const Mat> G(g.row(b).data(), tokens, da);
                       Eigen::Map<Mat>(dP.row(b).data(), tokens, da) = att.transpose() * G;
                       const Mat datt = G * P.transpose();
                       Mat dlogits = att.cwiseProduct(datt);
                       const Eigen::VectorXd row_dot = dlogits.rowwise().sum();
                       dlogits -= att.cwiseProduct(row_dot.replicate(1, tokens));
                       Eigen::Map<Mat>(dS.row(b).data(), tokens, ds) = scale * (dlogits + dlogits.transpose()) * S;
                     }
                     t.accumulate(zs, dS);
                     t.accumulate(zpc, dP);
                   });
}

/// Mean absolute error over all entries; subgradient 0 at ties.
inline Var l1_loss(Tape& tape, Var pred, Var target) {
  const Mat& pv = tape.value(pred);
  const Mat& tv = tape.value(target);
  if (pv.rows() != tv.rows() || pv.cols() != tv.cols()) throw DomainError("l1_loss: shape mismatch");
  const double n = static_cast<double>(pv.size());
  Mat y = Mat::Constant(1, 1, (pv - tv).cwiseAbs().sum() / n);
  return tape.push(std::move(y), detail::any_grad(tape, {pred, target}), [pred, target, n](Tape& t, std::size_t self) {
    const double g = t.node_grad(self)(0, 0);
    const Mat sign = (t.value(pred) - t.value(target)).unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
    t.accumulate(pred, (g / n) * sign);
    t.accumulate(target, (-g / n) * sign);
  });
}

inline constexpr double kClipNormEps = 1e-12;

/// Symmetric contrastive loss over a batch (rows are samples):
///   L = L_clip(x, y) + L_clip(y, x),
///   L_clip(x, y) = -1/n sum_j log( exp(x_j.y_j / tau) / sum_i exp(x_i.y_j / tau) )
/// with rows L2-normalized (norm + 1e-12) before the dot products. Sums are
/// order-independent, so jointly permuting rows of x and y leaves L bit-identical.
inline Var clip_loss(Tape& tape, Var x, Var y, double tau) {
  const Mat& xv = tape.value(x);
  const Mat& yv = tape.value(y);
  if (xv.rows() != yv.rows() || xv.cols() != yv.cols()) throw DomainError("clip_loss: shape mismatch");
  if (xv.rows() == 0) throw DomainError("clip_loss: empty batch");
  if (!(tau > 0.0)) throw DomainError("clip_loss: tau must be > 0");
  const auto n = xv.rows();
  const Eigen::VectorXd xn = xv.rowwise().norm();
  const Eigen::VectorXd yn = yv.rowwise().norm();
  const Mat u = (xn.array() + kClipNormEps).inverse().matrix().asDiagonal() * xv;
  const Mat v = (yn.array() + kClipNormEps).inverse().matrix().asDiagonal() * yv;
  // logits(i, j) = u_i . v_j / tau, each dot in a fixed order: a blocked GEMM
  // may sum differently depending on where a row lands, which would break
  // exact invariance under a joint permutation of the batch
  Mat logits(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < u.cols(); ++k) acc += u(i, k) * v(j, k);
      logits(i, j) = acc / tau;
    }

  // column softmax (over i for fixed j) for L_clip(x, y); row softmax (over j for fixed i) for L_clip(y, x)
  Mat pcol(n, n), prow(n, n);
  std::vector<double> terms_xy(static_cast<std::size_t>(n)), terms_yx(static_cast<std::size_t>(n));
  std::vector<double> buf(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const double m = logits.col(j).maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = std::exp(logits(i, j) - m);
    const double z = detail::sorted_sum(buf);
    for (Eigen::Index i = 0; i < n; ++i) pcol(i, j) = buf[static_cast<std::size_t>(i)] / z;
    terms_xy[static_cast<std::size_t>(j)] = -(logits(j, j) - m - std::log(z));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    for (Eigen::Index j = 0; j < n; ++j) buf[static_cast<std::size_t>(j)] = std::exp(logits(i, j) - m);
    const double z = detail::sorted_sum(buf);
    for (Eigen::Index j = 0; j < n; ++j) prow(i, j) = buf[static_cast<std::size_t>(j)] / z;
    terms_yx[static_cast<std::size_t>(i)] = -(logits(i, i) - m - std::log(z));
  }
  const double nn = static_cast<double>(n);
  const double loss = detail::sorted_sum(terms_xy) / nn + detail::sorted_sum(terms_yx) / nn;

  return tape.push(
      Mat::Constant(1, 1, loss), detail::any_grad(tape, {x, y}),
      [x, y, u, v, xn, yn, pcol = std::move(pcol), prow = std::move(prow), tau, nn](Tape& t, std::size_t self) {
        const double g = t.node_grad(self)(0, 0);
        // dL/dlogits = (pcol - I)/n + (prow - I)/n
        Mat dlog = (pcol + prow) / nn;
        dlog.diagonal().array() -= 2.0 / nn;
        dlog *= g / tau;
        const Mat du = dlog * v;
        const Mat dv = dlog.transpose() * u;
        // through u = x / (|x| + eps): dx = du / (|x|+eps) - x (x.du) / (|x| (|x|+eps)^2)
        auto through_norm = [](const Mat& raw, const Eigen::VectorXd& norms, const Mat& d) {
          Mat out(raw.rows(), raw.cols());
          for (Eigen::Index r = 0; r < raw.rows(); ++r) {
            const double s = norms[r] + kClipNormEps;
            out.row(r) = d.row(r) / s;
            if (norms[r] > 0.0) out.row(r) -= raw.row(r) * (raw.row(r).dot(d.row(r)) / (norms[r] * s * s));
          }
          return out;
        };
        if (t.requires_grad(x)) t.accumulate(x, through_norm(t.value(x), xn, du));
        if (t.requires_grad(y)) t.accumulate(y, through_norm(t.value(y), yn, dv));
      });
}

/// L = l_db + alpha * l_align.
inline double loss_total(double l_db, double l_align, double alpha) {
  if (!(alpha >= 0.0)) throw DomainError("loss weight alpha must be >= 0");
  return l_db + alpha * l_align;
}

}  // namespace bridgepolicy::net
