#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "bridgepolicy/net/adamw.hpp"
#include "bridgepolicy/net/gradcheck.hpp"
#include "bridgepolicy/net/layers.hpp"
#include "bridgepolicy/net/pointnet.hpp"

using namespace bridgepolicy;
using namespace bridgepolicy::net;

namespace {

constexpr double kGradTol = 1e-5;

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng = make_rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * uniform(rng, -1.0, 1.0);
  return m;
}

// Scalar readout sum(w .* x) with fixed random weights, so every output entry gets a distinct upstream gradient.
Var readout(Tape& tape, Var x, std::uint64_t seed = 99) {
  const auto rows = tape.value(x).rows(), cols = tape.value(x).cols();
  Var wv = tape.constant(random_mat(rows, cols, seed).reshaped<Eigen::RowMajor>(rows * cols, 1));
  Var flat = reshape(tape, x, 1, rows * cols);
  return linear(tape, flat, wv, tape.constant(Mat::Zero(1, 1)));
}

}  // namespace

TEST(GradCheck, Linear) {
  auto r = gradcheck_inputs([](Tape& t, const std::vector<Var>& in) { return readout(t, linear(t, in[0], in[1], in[2])); },
                            {random_mat(5, 4, 1), random_mat(4, 3, 2), random_mat(1, 3, 3)});
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(GradCheck, Silu) {
  auto r = gradcheck_inputs([](Tape& t, const std::vector<Var>& in) { return readout(t, silu(t, in[0])); },
                            {random_mat(3, 6, 4, 3.0)});
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(GradCheck, LayerNorm) {
  auto r = gradcheck_inputs(
      [](Tape& t, const std::vector<Var>& in) { return readout(t, layer_norm(t, in[0], in[1], in[2])); },
      {random_mat(4, 7, 5, 2.0), random_mat(1, 7, 6), random_mat(1, 7, 7)});
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(GradCheck, CrossAttention) {
  auto r = gradcheck_inputs(
      [](Tape& t, const std::vector<Var>& in) { return readout(t, cross_attention_fuse(t, in[0], in[1], 3)); },
      {random_mat(2, 3 * 4, 8, 1.5), random_mat(2, 3 * 2, 9)});
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(GradCheck, MaxPoolConcatReshape) {
  auto r = gradcheck_inputs(
      [](Tape& t, const std::vector<Var>& in) {
        Var pooled = max_pool_rows(t, in[0], 4);
        return readout(t, reshape(t, concat_cols(t, {pooled, in[1]}), 1, 2 * 5));
      },
      {random_mat(8, 3, 10), random_mat(2, 2, 11)});
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(GradCheck, ScaleRowsAdd) {
  Eigen::VectorXd scale(3);
  scale << 0.5, -1.0, 2.0;
  auto r = gradcheck_inputs(
      [&](Tape& t, const std::vector<Var>& in) { return readout(t, scale_rows_add(t, in[0], scale, random_mat(3, 2, 12))); },
      {random_mat(3, 2, 13)});
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(GradCheck, L1Loss) {
  // entries at least 0.1 apart, so no kink lies within h of the evaluation point
  Mat target = random_mat(4, 3, 14);
  Mat pred = target + random_mat(4, 3, 15).unaryExpr([](double d) { return d >= 0 ? d + 0.1 : d - 0.1; });
  auto r = gradcheck_inputs([](Tape& t, const std::vector<Var>& in) { return l1_loss(t, in[0], in[1]); }, {pred, target});
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(GradCheck, ClipLoss) {
  for (double tau : {0.07, 1.0}) {
    auto r = gradcheck_inputs([tau](Tape& t, const std::vector<Var>& in) { return clip_loss(t, in[0], in[1], tau); },
                              {random_mat(5, 6, 16), random_mat(5, 6, 17)});
    EXPECT_LT(r.max_rel_err, kGradTol) << "tau=" << tau << " " << r.worst;
  }
}

TEST(GradCheck, TwoLayerNetAllParameters) {
  ParamStore store;
  Rng rng = make_rng(18);
  Linear first(store, "first", 5, 8, rng);
  LayerNorm ln(store, "ln", 8);
  Linear head(store, "head", 8, 3, rng);
  const Mat x = random_mat(6, 5, 19), target = random_mat(6, 3, 20, 3.0);
  auto f = [&](Tape& t) {
    Var y = head(t, store, silu(t, ln(t, store, first(t, store, t.constant(x)))));
    Var l1 = l1_loss(t, y, t.constant(target));
    return weighted_sum(t, l1, clip_loss(t, y, t.constant(target), 0.5), 0.3);
  };
  auto r = gradcheck_params(f, store);
  EXPECT_EQ(r.checked, store.count());
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

namespace {

// inputs: points, W0, b0, g0, be0, W1, b1, g1, be1
std::vector<Mat> point_mlp_inputs(Eigen::Index B, Eigen::Index N) {
  return {random_mat(B * N, 3, 21), random_mat(3, 5, 22), random_mat(1, 5, 23, 0.3), random_mat(1, 5, 24),
          random_mat(1, 5, 25, 0.3), random_mat(5, 4, 26), random_mat(1, 4, 27, 0.3), random_mat(1, 4, 28),
          random_mat(1, 4, 29, 0.3)};
}

Var point_mlp_unfused(Tape& t, const std::vector<Var>& in, Eigen::Index group) {
  Var h = silu(t, layer_norm(t, linear(t, in[0], in[1], in[2]), in[3], in[4]));
  h = silu(t, layer_norm(t, linear(t, h, in[5], in[6]), in[7], in[8]));
  return max_pool_rows(t, h, group);
}

PointMlpVars point_vars(const std::vector<Var>& in) {
  return {in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]};
}

}  // namespace

TEST(PointMlp, FusedMatchesComposition) {
  const auto inputs = point_mlp_inputs(3, 7);
  Tape a, b;
  std::vector<Var> va, vb;
  for (const auto& m : inputs) {
    va.push_back(a.input(m));
    vb.push_back(b.input(m));
  }
  Var fa = point_mlp_unfused(a, va, 7);
  Var fb = point_mlp_maxpool(b, inputs[0], point_vars(vb), 7);
  EXPECT_LT((a.value(fa) - b.value(fb)).cwiseAbs().maxCoeff(), 1e-14);
  a.backward(readout(a, fa));
  b.backward(readout(b, fb));
  for (std::size_t i = 1; i < inputs.size(); ++i)
    EXPECT_LT((a.grad(va[i]) - b.grad(vb[i])).cwiseAbs().maxCoeff(), 1e-12) << i;
}

TEST(GradCheck, FusedPointMlp) {
  // points enter as a constant; gradients flow to the weights only
  const auto inputs = point_mlp_inputs(2, 6);
  const Mat points = inputs[0];
  auto r = gradcheck_inputs(
      [&](Tape& t, const std::vector<Var>& in) {
        std::vector<Var> all{Var{}};
        all.insert(all.end(), in.begin(), in.end());
        return readout(t, point_mlp_maxpool(t, points, point_vars(all), 6));
      },
      std::vector<Mat>(inputs.begin() + 1, inputs.end()));
  EXPECT_LT(r.max_rel_err, kGradTol) << r.worst;
}

TEST(PointMlp, Errors) {
  Tape t;
  std::vector<Var> v;
  for (const auto& m : point_mlp_inputs(2, 4)) v.push_back(t.input(m));
  EXPECT_THROW(point_mlp_maxpool(t, Mat::Zero(8, 2), point_vars(v), 4), DomainError);
  EXPECT_THROW(point_mlp_maxpool(t, Mat::Zero(7, 3), point_vars(v), 4), DomainError);
  Mat bad = Mat::Zero(8, 3);
  bad(0, 0) = NAN;
  EXPECT_THROW(point_mlp_maxpool(t, bad, point_vars(v), 4), NumericalError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  ParamStore store;
  Rng rng = make_rng(21);
  Linear lin(store, "lin", 3, 2, rng);
  Tape tape;
  Var y = lin(tape, store, tape.constant(random_mat(4, 3, 22)));
  tape.backward(l1_loss(tape, y, tape.constant(Mat::Ones(4, 2))), 0.0);
  for (std::size_t i = 0; i < store.size(); ++i) EXPECT_EQ(store.at(i).grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, TapeReuseRejected) {
  Tape tape;
  Var x = tape.input(Mat::Ones(2, 2));
  Var l = l1_loss(tape, x, tape.constant(Mat::Zero(2, 2)));
  tape.backward(l);
  EXPECT_THROW(tape.backward(l), std::logic_error);
}

TEST(Backward, NonScalarRootRejected) {
  Tape tape;
  EXPECT_THROW(tape.backward(tape.input(Mat::Ones(2, 2))), DomainError);
}

TEST(LayerNorm, NormalizedStatistics) {
  Tape tape;
  const Mat x = random_mat(10, 16, 23, 5.0);
  Var y = layer_norm(tape, tape.constant(x), tape.constant(Mat::Ones(1, 16)), tape.constant(Mat::Zero(1, 16)));
  const Mat& v = tape.value(y);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    EXPECT_NEAR(v.row(r).mean(), 0.0, 1e-9);
    EXPECT_NEAR((v.row(r).array() - v.row(r).mean()).square().mean(), 1.0, 1e-6);
  }
}

TEST(CrossAttention, SingleTokenPassesValueThrough) {
  Tape tape;
  const Mat zpc = random_mat(3, 2, 24);
  Var out = cross_attention_fuse(tape, tape.constant(random_mat(3, 5, 25)), tape.constant(zpc), 1);
  EXPECT_TRUE(tape.value(out).isApprox(zpc, 1e-15));
}

TEST(CrossAttention, DiagonalDominanceGivesIdentity) {
  Tape tape;
  Mat zs = 30.0 * Mat::Identity(4, 4);
  const Mat zpc = random_mat(1, 8, 26);
  Var out = cross_attention_fuse(tape, tape.constant(zs.reshaped<Eigen::RowMajor>(1, 16)), tape.constant(zpc), 4);
  EXPECT_LT((tape.value(out) - zpc).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossAttention, MatchesIndependentOracle) {
  // tests/oracle/attention_oracle.py
  Mat zs(4, 3), zpc(4, 2), want(4, 2);
  zs << 0.3, -1.2, 0.5, 0.8, 0.1, -0.4, -0.6, 0.9, 1.1, 0.2, 0.7, -0.3;
  zpc << 1.0, -0.5, 0.25, 0.75, -1.5, 0.3, 0.6, 1.2;
  want << 0.47791417668655123, 0.04390225630725688, 0.26383328589424343, 0.5403017562287923, -0.7003489734160653,
      0.41763499687385003, 0.019430371901999453, 0.6151753239836999;
  Tape tape;
  Var out = cross_attention_fuse(tape, tape.constant(zs.reshaped<Eigen::RowMajor>(1, 12)),
                                 tape.constant(zpc.reshaped<Eigen::RowMajor>(1, 8)), 4);
  const Mat got = tape.value(out).reshaped<Eigen::RowMajor>(4, 2);
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CrossAttention, RowsSumToOne) {
  const Mat p = softmax_rows(random_mat(6, 6, 27, 20.0));
  for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-9);
}

TEST(CrossAttention, Errors) {
  Tape tape;
  EXPECT_THROW(cross_attention_fuse(tape, tape.constant(Mat::Zero(2, 6)), tape.constant(Mat::Zero(3, 6)), 3), DomainError);
  Mat bad = Mat::Zero(1, 6);
  bad(0, 2) = std::nan("");
  EXPECT_THROW(cross_attention_fuse(tape, tape.constant(bad), tape.constant(Mat::Zero(1, 6)), 3), NumericalError);
}

TEST(L1Loss, Examples) {
  Tape tape;
  Mat p(1, 2), q(1, 2);
  p << 0.0, 1.0;
  q << 1.0, 3.0;
  EXPECT_DOUBLE_EQ(tape.value(l1_loss(tape, tape.constant(p), tape.constant(q)))(0, 0), 1.5);
  EXPECT_EQ(tape.value(l1_loss(tape, tape.constant(q), tape.constant(q)))(0, 0), 0.0);
  const Mat x = random_mat(3, 4, 28);
  EXPECT_NEAR(tape.value(l1_loss(tape, tape.constant((x.array() - 0.37).matrix()), tape.constant(x)))(0, 0), 0.37, 1e-15);
  EXPECT_THROW(l1_loss(tape, tape.constant(p), tape.constant(Mat::Zero(2, 1))), DomainError);
}

TEST(L1Loss, GradientIsSignOverN) {
  Tape tape;
  Var pred = tape.input(Mat::Constant(3, 4, 2.0));
  tape.backward(l1_loss(tape, pred, tape.constant(Mat::Ones(3, 4))));
  EXPECT_TRUE((tape.grad(pred).array() == 1.0 / 12.0).all());
}

TEST(L1Loss, ZeroSubgradientAtTies) {
  Tape tape;
  Var pred = tape.input(Mat::Ones(2, 2));
  tape.backward(l1_loss(tape, pred, tape.constant(Mat::Ones(2, 2))));
  EXPECT_EQ(tape.grad(pred).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ClipLoss, SingleSampleIsZero) {
  Tape tape;
  EXPECT_EQ(tape.value(clip_loss(tape, tape.constant(random_mat(1, 5, 29)), tape.constant(random_mat(1, 5, 30)), 0.07))(0, 0),
            0.0);
}

TEST(ClipLoss, OrthogonalPair) {
  Tape tape;
  const Mat e = Mat::Identity(2, 2);
  const double got = tape.value(clip_loss(tape, tape.constant(e), tape.constant(e), 1.0))(0, 0);
  EXPECT_NEAR(got, 2.0 * std::log1p(std::exp(-1.0)), 1e-9);
}

TEST(ClipLoss, JointPermutationInvarianceIsExact) {
  const Mat x = random_mat(7, 5, 31), y = random_mat(7, 5, 32);
  std::vector<int> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat px(7, 5), py(7, 5);
    for (int i = 0; i < 7; ++i) {
      px.row(i) = x.row(perm[i]);
      py.row(i) = y.row(perm[i]);
    }
    Tape tape;
    const double a = tape.value(clip_loss(tape, tape.constant(x), tape.constant(y), 0.07))(0, 0);
    const double b = tape.value(clip_loss(tape, tape.constant(px), tape.constant(py), 0.07))(0, 0);
    EXPECT_EQ(a, b);
  }
}

TEST(ClipLoss, PermutationInvarianceAtTrainingShapes) {
  // wide enough that a blocked matrix product would split rows unevenly
  for (Eigen::Index d : {6, 16}) {
    const Mat x = random_mat(64, d, 34), y = random_mat(64, d, 35);
    Rng rng = make_rng(36);
    Eigen::PermutationMatrix<Eigen::Dynamic> p(64);
    p.setIdentity();
    Tape tape;
    const double a = tape.value(clip_loss(tape, tape.constant(x), tape.constant(y), 0.07))(0, 0);
    for (int trial = 0; trial < 10; ++trial) {
      std::shuffle(p.indices().data(), p.indices().data() + 64, rng);
      const Mat px = p * x, py = p * y;
      EXPECT_EQ(tape.value(clip_loss(tape, tape.constant(px), tape.constant(py), 0.07))(0, 0), a) << "d=" << d;
    }
  }
}

TEST(ClipLoss, NonnegativeAndVanishesUnderStrictDominance) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tape tape;
    EXPECT_GE(tape.value(clip_loss(tape, tape.constant(random_mat(6, 4, 40 + s)), tape.constant(random_mat(6, 4, 80 + s)), 0.07))(0, 0),
              0.0);
  }
  Tape tape;
  const Mat e = Mat::Identity(4, 4);
  EXPECT_LT(tape.value(clip_loss(tape, tape.constant(e), tape.constant(e), 0.01))(0, 0), 1e-40);
}

TEST(ClipLoss, ZeroNormAndErrors) {
  Tape tape;
  Var l = clip_loss(tape, tape.constant(Mat::Zero(3, 4)), tape.constant(random_mat(3, 4, 34)), 0.07);
  EXPECT_TRUE(std::isfinite(tape.value(l)(0, 0)));
  EXPECT_THROW(clip_loss(tape, tape.constant(Mat::Zero(0, 4)), tape.constant(Mat::Zero(0, 4)), 0.07), DomainError);
  EXPECT_THROW(clip_loss(tape, tape.constant(Mat::Zero(2, 4)), tape.constant(Mat::Zero(2, 4)), 0.0), DomainError);
}

TEST(LossTotal, WeightedSum) {
  EXPECT_EQ(loss_total(1.0, 0.5, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(loss_total(1.0, 0.5, 0.3), 1.15);
  EXPECT_THROW(loss_total(1.0, 0.5, -0.1), DomainError);
}

TEST(TimeEmbedding, ShapeAndOrigin) {
  Eigen::VectorXd steps(3);
  steps << 0.0, 1.0, 100.0;
  const Mat e = time_embedding(steps, 64);
  EXPECT_EQ(e.rows(), 3);
  EXPECT_EQ(e.cols(), 64);
  EXPECT_EQ(e.row(0).head(32).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(e.row(0).tail(32).minCoeff(), 1.0);
  EXPECT_DOUBLE_EQ(e(1, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(e(2, 31), std::sin(100.0 * 1e-4));
  EXPECT_THROW(time_embedding(steps, 7), DomainError);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  ParamStore store;
  store.add("w", random_mat(3, 3, 35));
  const Mat before = store.get("w").value;
  AdamW opt({1e-3, 0.0});
  for (int i = 0; i < 5; ++i) opt.step(store);
  EXPECT_TRUE((store.get("w").value.array() == before.array()).all());
}

TEST(AdamW, FirstStepIsSignLike) {
  ParamStore store;
  store.add("w", Mat::Zero(1, 3));
  Mat g(1, 3);
  g << 2.0, -0.5, 1e-3;
  store.get("w").grad = g;
  AdamW opt({0.1, 0.0});
  opt.step(store);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(store.get("w").value(0, i), -0.1 * g(0, i) / (std::abs(g(0, i)) + 1e-8), 1e-15);
}

TEST(AdamW, DecoupledWeightDecay) {
  ParamStore store;
  store.add("w", Mat::Constant(1, 1, 2.0));
  AdamW opt({0.1, 0.5});
  opt.step(store);
  EXPECT_DOUBLE_EQ(store.get("w").value(0, 0), 2.0 * (1.0 - 0.05));
}

TEST(AdamW, DeterministicOverHundredSteps) {
  auto run = [] {
    ParamStore store;
    Rng rng = make_rng(36);
    Mlp mlp(store, "m", 4, {16}, 2, rng);
    AdamW opt({1e-2, 1e-6});
    const Mat x = random_mat(8, 4, 37), y = random_mat(8, 2, 38);
    for (int i = 0; i < 100; ++i) {
      store.zero_grad();
      Tape tape;
      tape.backward(l1_loss(tape, mlp(tape, store, tape.constant(x)), tape.constant(y)));
      opt.step(store);
    }
    std::vector<Mat> out;
    for (std::size_t i = 0; i < store.size(); ++i) out.push_back(store.at(i).value);
    return out;
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE((a[i].array() == b[i].array()).all());
}

TEST(AdamW, ShapeMismatch) {
  ParamStore store;
  store.add("w", Mat::Zero(2, 2));
  store.get("w").grad = Mat::Zero(1, 2);
  AdamW opt;
  EXPECT_THROW(opt.step(store), DomainError);
}
