#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "xmreid/nn.hpp"
#include "xmreid/trainer.hpp"

using namespace xmreid;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

LayerSpec dense(int width, bool bias = true) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.width = width;
  s.bias = bias;
  return s;
}

LayerSpec kind(LayerKind k) {
  LayerSpec s;
  s.kind = k;
  return s;
}

void jitter_biases(Encoder& e, Rng& rng) {
  for (std::size_t l = 0; l < e.layer_count(); ++l)
    for (auto& b : e.layer(l).blocks())
      if (b.name == "bias" || b.name == "beta")
        for (Eigen::Index i = 0; i < b.value.size(); ++i) b.value.data()[i] = 0.1 * rng.normal();
}

Activation vectors(const Matrix& x) {
  Activation a;
  a.values = x;
  return a;
}

}  // namespace

TEST(Forward, ZeroInputBiasFreeLinearStack) {
  Rng rng(1);
  const Encoder e(6, {dense(5, false), dense(4, false)}, rng);
  const Matrix f = forward_vision(e, Matrix::Zero(3, 6), Mode::eval);
  EXPECT_EQ(f.rows(), 3);
  EXPECT_EQ(f.cols(), 4);
  EXPECT_TRUE(f.isZero(0.0));
}

TEST(Forward, FeatureDimensionFollowsConfiguration) {
  Rng rng(2);
  const Encoder e(4, default_vision_layers(8, 2048, 0.25), rng);
  EXPECT_EQ(e.output_width(), 2048);
  EXPECT_EQ(forward_vision(e, random_matrix(2, 4, rng), Mode::eval).cols(), 2048);
}

TEST(Forward, EvalModeDeterministic) {
  Rng rng(3);
  const Encoder e(5, default_vision_layers(6, 4, 0.5), rng);
  const Matrix x = random_matrix(7, 5, rng);
  Rng a(10);
  Rng b(99);
  EXPECT_EQ(forward_vision(e, x, Mode::eval, &a), forward_vision(e, x, Mode::eval, &b));
  EXPECT_EQ(forward_vision(e, x, Mode::eval), forward_vision(e, x, Mode::eval));
}

TEST(Forward, ErrorsReported) {
  Rng rng(4);
  const Encoder e(3, {dense(2)}, rng);
  EXPECT_THROW(forward_vision(e, Matrix::Zero(1, 4), Mode::eval), ValidationError);
  Matrix bad = Matrix::Zero(1, 3);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    forward_vision(e, bad, Mode::eval);
    FAIL() << "expected NumericError";
  } catch (const NumericError& err) {
    EXPECT_NE(std::string(err.what()).find("layer 0"), std::string::npos) << err.what();
  }
  LayerSpec drop = kind(LayerKind::dropout);
  drop.keep_prob = 0.0;
  EXPECT_THROW(Encoder(3, {drop}, rng), ValidationError);
  LayerSpec res = dense(4);
  res.residual = true;
  EXPECT_THROW(Encoder(3, {res}, rng), ValidationError);
}

TEST(Forward, ConvolutionHandExample) {
  Rng rng(5);
  LayerSpec conv;
  conv.kind = LayerKind::conv1d_k3;
  conv.width = 4;
  conv.bias = false;
  Encoder e(4, {conv, kind(LayerKind::global_avg_pool)}, rng);
  // Taps [t-1, t, t+1] = [0.5 I, I, 0].
  Matrix w = Matrix::Zero(4, 12);
  w.block(0, 0, 4, 4) = 0.5 * Matrix::Identity(4, 4);
  w.block(0, 4, 4, 4) = Matrix::Identity(4, 4);
  e.layer(0).blocks()[0].value = w;
  const Matrix x = Matrix::Identity(4, 4);  // one-hot rows, 4 tokens
  const std::vector<Matrix> seq = {x};
  const Matrix f = forward_language(e, stack_sequences(seq), Mode::eval);
  ASSERT_EQ(f.rows(), 1);
  const Eigen::RowVector4d expected(1.5 / 4, 1.5 / 4, 1.5 / 4, 1.0 / 4);
  EXPECT_LT((f.row(0) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, PoolingConventions) {
  Rng rng(6);
  LayerSpec masked = kind(LayerKind::global_avg_pool);
  masked.masked = true;
  const Encoder all(2, {kind(LayerKind::global_avg_pool)}, rng);
  const Encoder tokens(2, {masked}, rng);
  Matrix x = Matrix::Zero(4, 2);
  x << 1, 2, 3, 4, 0, 0, 0, 0;
  const std::vector<Matrix> seq = {x};
  const std::vector<std::vector<int>> idx = {{5, 6, 0, 0}};
  const Activation a = stack_sequences(seq, idx);
  EXPECT_EQ(forward_language(all, a, Mode::eval), (Matrix(1, 2) << 1.0, 1.5).finished());
  EXPECT_EQ(forward_language(tokens, a, Mode::eval), (Matrix(1, 2) << 2.0, 3.0).finished());
}

TEST(Forward, AllPaddingRejected) {
  Rng rng(7);
  const Encoder e(3, default_language_layers(4, 4), rng);
  const std::vector<Matrix> seq = {Matrix::Zero(5, 3)};
  EXPECT_THROW(forward_language(e, stack_sequences(seq), Mode::eval), ValidationError);
  const std::vector<std::vector<int>> idx = {{0, 0, 0, 0, 0}};
  EXPECT_THROW(forward_language(e, stack_sequences(seq, idx), Mode::eval), ValidationError);
}

TEST(Forward, BatchNormEvalIsAffine) {
  Rng rng(8);
  Encoder e(3, {kind(LayerKind::batch_norm)}, rng);
  auto& b = e.layer(0).blocks();
  b[0].value << 2.0, -1.0, 0.5;
  b[1].value << 0.1, 0.2, 0.3;
  b[2].value << 1.0, -2.0, 0.0;
  b[3].value << 4.0, 0.25, 1.0;
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix f = forward_vision(e, x, Mode::eval);
  for (Eigen::Index r = 0; r < 5; ++r)
    for (Eigen::Index c = 0; c < 3; ++c) {
      const double expected = b[0].value(0, c) * (x(r, c) - b[2].value(0, c)) / std::sqrt(b[3].value(0, c) + 1e-5) +
                              b[1].value(0, c);
      EXPECT_NEAR(f(r, c), expected, 1e-14);
    }
  // Affine: f(a x + (1 - a) y) = a f(x) + (1 - a) f(y).
  const Matrix y = random_matrix(5, 3, rng);
  const double alpha = 0.3;
  const Matrix lhs = forward_vision(e, alpha * x + (1 - alpha) * y, Mode::eval);
  const Matrix rhs = alpha * f + (1 - alpha) * forward_vision(e, y, Mode::eval);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, DenseClosedFormGradient) {
  Rng rng(9);
  const Encoder e(4, {dense(3, false)}, rng);
  const Matrix x = random_matrix(1, 4, rng);
  Encoder::Trace trace;
  const Matrix y = forward_vision(e, x, Mode::train, nullptr, &trace);
  // L = 0.5 |y|^2, dL/dy = y.
  const Encoder::Gradients g = e.backward(trace, y);
  const Matrix expected = y.transpose() * x;  // y x^T with column vectors
  EXPECT_LT((g.layers[0][0] - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backward, ZeroOutputGradientGivesZeroGradients) {
  Rng rng(10);
  const Encoder e(5, default_vision_layers(6, 4, 0.5), rng);
  Encoder::Trace trace;
  Rng drop(1);
  const Matrix y = forward_vision(e, random_matrix(4, 5, rng), Mode::train, &drop, &trace);
  const Encoder::Gradients g = e.backward(trace, Matrix::Zero(y.rows(), y.cols()));
  for (const auto& layer : g.layers)
    for (const auto& m : layer) EXPECT_TRUE(m.isZero(0.0));
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(Backward, ReluNegativeUnitBlocksGradient) {
  Rng rng(11);
  const Encoder e(3, {kind(LayerKind::relu)}, rng);
  Encoder::Trace trace;
  forward_vision(e, (Matrix(1, 3) << -1.0, 2.0, -0.5).finished(), Mode::train, nullptr, &trace);
  const Encoder::Gradients g = e.backward(trace, Matrix::Ones(1, 3));
  EXPECT_EQ(g.input, (Matrix(1, 3) << 0.0, 1.0, 0.0).finished());
}

TEST(Backward, EvalTraceRejected) {
  Rng rng(12);
  const Encoder e(3, {dense(2)}, rng);
  Encoder::Trace trace;
  forward_vision(e, Matrix::Ones(1, 3), Mode::eval, nullptr, &trace);
  EXPECT_THROW(e.backward(trace, Matrix::Ones(1, 2)), ValidationError);
  const Encoder other(3, {dense(2), dense(2)}, rng);
  Encoder::Trace t2;
  forward_vision(e, Matrix::Ones(1, 3), Mode::train, nullptr, &t2);
  EXPECT_THROW(other.backward(t2, Matrix::Ones(1, 2)), ValidationError);
}

TEST(GradientCheck, LinearStackNearExact) {
  Rng rng(13);
  Encoder e(5, {dense(4), dense(3)}, rng);
  jitter_biases(e, rng);
  // Central differences carry no truncation error on a linear map, so a wide
  // step only shrinks the rounding term.
  GradientCheckOptions o;
  o.step = 1e-3;
  const GradientCheckReport r = gradient_check(e, vectors(random_matrix(6, 5, rng)), o);
  EXPECT_LT(r.max_relative_error, 1e-9) << r.worst_entry;
  EXPECT_GT(r.checked, e.parameter_count());
}

TEST(GradientCheck, VisionStack) {
  Rng rng(14);
  Encoder e(5, default_vision_layers(6, 4, 0.5), rng);
  jitter_biases(e, rng);
  const Activation in = vectors(random_matrix(6, 5, rng));
  for (Mode mode : {Mode::train, Mode::eval}) {
    GradientCheckOptions o;
    o.mode = mode;
    o.seed = 4;
    const GradientCheckReport r = gradient_check(e, in, o);
    EXPECT_TRUE(r.passed) << r.worst_entry << " " << r.max_relative_error;
    EXPECT_LT(r.max_relative_error, 1e-5);
  }
}

TEST(GradientCheck, LanguageStackMaskedAndResidual) {
  Rng rng(15);
  for (bool masked : {false, true}) {
    Encoder e(6, default_language_layers(6, 6, masked, true), rng);
    jitter_biases(e, rng);
    Activation a;
    a.positions = 5;
    a.values = random_matrix(10, 6, rng);
    a.mask = Vector::Ones(10);
    a.mask.tail(2).setZero();
    const GradientCheckReport r = gradient_check(e, a);
    EXPECT_LT(r.max_relative_error, 1e-5) << r.worst_entry;
  }
}

TEST(GradientCheck, CorruptedBlockFails) {
  Rng rng(16);
  Encoder e(5, {dense(4), kind(LayerKind::batch_norm), dense(3)}, rng);
  jitter_biases(e, rng);
  const Activation in = vectors(random_matrix(6, 5, rng));
  GradientCheckOptions o;
  Encoder::Gradients g = analytic_gradients(e, in, o);
  EXPECT_TRUE(compare_with_finite_differences(e, in, g, o).passed);
  g.layers[2][0] *= 2.0;
  const GradientCheckReport r = compare_with_finite_differences(e, in, g, o);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_relative_error, 0.1);
}

TEST(GradientCheck, SubsampleHonoured) {
  Rng rng(17);
  Encoder e(5, {dense(8), dense(8)}, rng);
  GradientCheckOptions o;
  o.max_checks = 20;
  o.check_input = false;
  EXPECT_EQ(gradient_check(e, vectors(random_matrix(3, 5, rng)), o).checked, 20u);
}

TEST(Encoder, CopiesAreDeepAndCommitUpdatesRunningStats) {
  Rng rng(18);
  Encoder e(3, {dense(3), kind(LayerKind::batch_norm)}, rng);
  Encoder copy = e;
  copy.layer(0).blocks()[0].value.setZero();
  EXPECT_FALSE(e.layer(0).blocks()[0].value.isZero(0.0));

  Encoder::Trace trace;
  forward_vision(e, random_matrix(8, 3, rng), Mode::train, nullptr, &trace);
  const Matrix before = e.layer(1).blocks()[2].value;
  e.commit_running_stats(trace, [](const LayerSpec&) { return false; });
  EXPECT_EQ(e.layer(1).blocks()[2].value, before);
  e.commit_running_stats(trace);
  EXPECT_NE(e.layer(1).blocks()[2].value, before);
  EXPECT_EQ(e.parameter_count(), 3u * 3u + 3u + 3u + 3u);
}
