#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "celmnav/error.hpp"
#include "celmnav/neural.hpp"
#include "oracles.hpp"

using namespace celmnav;

namespace {

Tensor3 random_tensor(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  Tensor3 t(h, w, c);
  for (double& x : t.data) x = g(rng);
  return t;
}

LayerParams random_layer(int c_in, int c_out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  LayerParams l;
  l.weights = Eigen::MatrixXd::NullaryExpr(9 * c_in, c_out, [&] { return g(rng); });
  l.biases = Eigen::VectorXd::NullaryExpr(c_out, [&] { return g(rng); });
  return l;
}

ArchSpec spec_of(int depth, Distribution dist, Activation act, Pooling pool, int side = 128) {
  ArchSpec s;
  s.depth = depth;
  s.distribution = dist;
  s.activation = act;
  s.pooling = pool;
  s.input_side = side;
  return s;
}

}  // namespace

TEST(Conv, IdentityKernel) {
  LayerParams l;
  l.weights = Eigen::MatrixXd::Zero(9, 1);
  l.biases = Eigen::VectorXd::Zero(1);
  l.kernel(1, 1, 0, 0) = 1.0;
  const Tensor3 x = random_tensor(6, 5, 1, 1);
  EXPECT_EQ(conv2d_same(x, l).data, x.data);
}

TEST(Conv, OnesKernelCountsNeighbours) {
  LayerParams l;
  l.weights = Eigen::MatrixXd::Ones(9, 1);
  l.biases = Eigen::VectorXd::Zero(1);
  const Tensor3 y = conv2d_same(Tensor3(5, 5, 1, 1.0), l);
  EXPECT_DOUBLE_EQ(y.at(2, 2, 0), 9.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y.at(0, 2, 0), 6.0);
}

TEST(Conv, MatchesNestedLoopOracle) {
  const Tensor3 x = random_tensor(8, 8, 2, 3);
  const LayerParams l = random_layer(2, 3, 4);
  const Tensor3 a = conv2d_same(x, l), b = oracle::conv_same(x, l);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-6);
}

TEST(Conv, RejectsChannelMismatch) {
  EXPECT_THROW(conv2d_same(random_tensor(4, 4, 3, 1), random_layer(2, 2, 1)), ShapeError);
}

TEST(Conv, Col2imIsTheAdjointOfIm2col) {
  const Tensor3 x = random_tensor(7, 6, 3, 8);
  const RowMatrix cols = im2col(x);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0, 1);
  const RowMatrix y = RowMatrix::NullaryExpr(cols.rows(), cols.cols(), [&] { return g(rng); });
  const Tensor3 back = col2im(y, 7, 6, 3);
  const double lhs = (cols.array() * y.array()).sum();
  const double rhs = x.flat().dot(back.flat());
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::abs(lhs));
}

TEST(Activation, PointValues) {
  EXPECT_EQ(activate(-2.0, Activation::Relu), 0.0);
  EXPECT_EQ(activate(3.0, Activation::Relu), 3.0);
  EXPECT_EQ(activate(-2.0, Activation::NRelu), -2.0);
  EXPECT_EQ(activate(3.0, Activation::NRelu), 0.0);
  EXPECT_NEAR(activate(0.5, Activation::Tanh), 0.46211715726, 1e-11);
  for (double x : {-7.5, -1e-3, 0.0, 2.0, 1e6}) EXPECT_EQ(activate(x, Activation::None), x);
}

TEST(Activation, GradientsMatchDifferences) {
  for (Activation a : {Activation::NRelu, Activation::Relu, Activation::Tanh, Activation::None})
    for (double x : {-1.3, -0.2, 0.4, 2.1}) {
      const double h = 1e-6;
      const double fd = (activate(x + h, a) - activate(x - h, a)) / (2 * h);
      EXPECT_NEAR(activate_grad(x, a), fd, 1e-6);
    }
}

TEST(Pool, SingleWindow) {
  Tensor3 t(2, 2, 1);
  t.data = {1, 2, 3, 4};
  EXPECT_EQ(pool2(t, Pooling::Max).data[0], 4.0);
  EXPECT_EQ(pool2(t, Pooling::Mean).data[0], 2.5);
}

TEST(Pool, ConstantIsFixed) {
  const Tensor3 t(6, 4, 3, -1.25);
  for (Pooling p : {Pooling::Mean, Pooling::Max})
    for (double v : pool2(t, p).data) EXPECT_EQ(v, -1.25);
}

TEST(Pool, MatchesWindowScanOracle) {
  const Tensor3 t = random_tensor(6, 6, 2, 5);
  for (Pooling p : {Pooling::Mean, Pooling::Max}) {
    const Tensor3 a = pool2(t, p), b = oracle::pool(t, p == Pooling::Max);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-15);
  }
  EXPECT_THROW(pool2(random_tensor(5, 4, 1, 1), Pooling::Max), ShapeError);
}

TEST(Encode, FeatureLengthsFollowTheArchitecture) {
  const Tensor3 x = random_tensor(128, 128, 1, 2);
  const ArchSpec d5 = spec_of(5, Distribution::Uniform, Activation::Relu, Pooling::Max);
  EXPECT_EQ(encode(x, init_kernels(d5, 1), d5).size(), 4096);
  const ArchSpec d1 = spec_of(1, Distribution::Normal, Activation::Tanh, Pooling::Mean);
  EXPECT_EQ(encode(x, init_kernels(d1, 1), d1).size(), 64 * 64 * 16);
  const ArchSpec d0 = spec_of(0, Distribution::Normal, Activation::Tanh, Pooling::Mean);
  EXPECT_EQ(encode(x, init_kernels(d0, 1), d0), x.flat());
}

TEST(Encode, FlattensInRowMajorOrderAfterPooling) {
  const ArchSpec s = spec_of(1, Distribution::Normal, Activation::Tanh, Pooling::Max, 8);
  const ModelParams p = init_kernels(s, 4);
  const Tensor3 x = random_tensor(8, 8, 1, 6);
  Tensor3 expected = oracle::conv_same(x, p.layers[0]);
  for (double& v : expected.data) v = std::tanh(v);
  expected = oracle::pool(expected, true);
  const Eigen::VectorXd f = encode(x, p, s);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(f[static_cast<Eigen::Index>(i)], expected.data[i], 1e-12);
}

TEST(Forward, ZeroInputZeroBiasReluGivesZero) {
  const ArchSpec s = spec_of(3, Distribution::Normal, Activation::Relu, Pooling::Mean, 32);
  ModelParams p = init_kernels(s, 3);
  for (auto& l : p.layers) l.biases.setZero();
  p.head.beta = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(s.feature_size()), 3);
  const ForwardResult r = forward(Tensor3(32, 32, 1), p, s);
  EXPECT_EQ(r.features.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.output.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, RejectsInconsistentParams) {
  const ArchSpec s = spec_of(2, Distribution::Normal, Activation::Relu, Pooling::Mean, 16);
  ModelParams p = init_kernels(s, 3);
  p.layers.pop_back();
  EXPECT_THROW(forward(Tensor3(16, 16, 1), p, s), ShapeError);
  EXPECT_THROW(encode(Tensor3(8, 8, 1), init_kernels(s, 3), s), ShapeError);
}

TEST(Init, UniformKernelsInOpenInterval) {
  const ArchSpec s = spec_of(5, Distribution::Uniform, Activation::Relu, Pooling::Mean);
  for (const auto& l : init_kernels(s, 77).layers) {
    EXPECT_LT(l.weights.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_LT(l.biases.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Init, OrthogonalKernelsHaveOrthonormalColumnsOrRows) {
  const ArchSpec s = spec_of(5, Distribution::Orthogonal, Activation::Relu, Pooling::Mean);
  for (const auto& l : init_kernels(s, 78).layers) {
    const Eigen::MatrixXd& m = l.weights;
    if (m.rows() >= m.cols()) {
      EXPECT_LT((m.transpose() * m - Eigen::MatrixXd::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff(), 1e-6);
    } else {
      EXPECT_LT((m * m.transpose() - Eigen::MatrixXd::Identity(m.rows(), m.rows())).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Init, SameSeedSameKernels) {
  const ArchSpec s = spec_of(3, Distribution::Normal, Activation::Relu, Pooling::Mean);
  const ModelParams a = init_kernels(s, 5), b = init_kernels(s, 5), c = init_kernels(s, 6);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].weights, b.layers[i].weights);
    EXPECT_EQ(a.layers[i].biases, b.layers[i].biases);
  }
  EXPECT_EQ(encoder_hash(a), encoder_hash(b));
  EXPECT_NE(encoder_hash(a), encoder_hash(c));
  EXPECT_EQ(a.head.beta.rows(), static_cast<Eigen::Index>(s.feature_size()));
  EXPECT_FALSE(a.head.beta0.has_value());
}

TEST(ModelIo, RoundTripAtSinglePrecision) {
  ArchSpec s = spec_of(2, Distribution::Orthogonal, Activation::Tanh, Pooling::Max, 16);
  StoredModel m{s, init_kernels(s, 12), R"({"note":"x"})"};
  m.params.head.beta.setConstant(0.25);
  m.params.head.beta0 = Eigen::VectorXd::Constant(3, -0.5);
  const auto path = std::filesystem::temp_directory_path() / "celmnav_model_io.bin";
  save_model(path, m);
  const StoredModel back = load_model(path);
  EXPECT_EQ(back.spec.key(), s.key());
  ASSERT_EQ(back.params.layers.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_LT((back.params.layers[i].weights - m.params.layers[i].weights).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(back.params.head.beta, m.params.head.beta);
  ASSERT_TRUE(back.params.head.beta0.has_value());
  EXPECT_EQ(*back.params.head.beta0, *m.params.head.beta0);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}
