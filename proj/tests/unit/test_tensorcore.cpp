#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fd.hpp"
#include "polex/network.hpp"
#include "polex/optim.hpp"
#include "polex/serialize.hpp"

namespace polex {
namespace {

using testing::check_gradients;

std::vector<int> labels_for(int batch, int classes) {
  std::vector<int> y;
  for (int j = 0; j < batch; ++j) y.push_back(j % classes);
  return y;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = uniform(rng, lo, hi);
  return m;
}

TEST(MlpForward, ZeroWeightsGiveZeroOutput) {
  Rng rng(1);
  auto net = init_network(mlp_architecture(3, {5}, 2), rng);
  for (auto& [_, m] : net.params) m.setZero();
  const Matrix out = mlp_forward(net, random_matrix(3, 4, rng));
  EXPECT_EQ(out, Matrix::Zero(2, 4));
}

TEST(MlpForward, IdentityLinearLayerPassesInputThrough) {
  NetworkBundle net;
  net.arch = mlp_architecture(3, {}, 3);
  net.params["L0.W"] = Matrix::Identity(3, 3);
  net.params["L0.b"] = Matrix::Zero(3, 1);
  Rng rng(2);
  const Matrix x = random_matrix(3, 5, rng);
  EXPECT_EQ(mlp_forward(net, x), x);
}

TEST(MlpForward, MatchesExplicitMatrixChain) {
  Rng rng(3);
  auto net = init_network(mlp_architecture(4, {64, 64}, 2), rng);
  for (auto& [k, m] : net.params)
    if (k.back() == 'b') m = random_matrix(m.rows(), 1, rng, -0.1, 0.1);
  Vector x(4);
  x << 0.3, -1.2, 0.05, 0.7;
  // Hand-rolled loops, independent of the Eigen expression code path.
  auto layer = [](const Matrix& W, const Matrix& b, const std::vector<double>& in, bool squash) {
    std::vector<double> y(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      double acc = b(i, 0);
      for (Eigen::Index j = 0; j < W.cols(); ++j) acc += W(i, j) * in[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = squash ? std::tanh(acc) : acc;
    }
    return y;
  };
  std::vector<double> h(x.data(), x.data() + 4);
  h = layer(net.param("L0.W"), net.param("L0.b"), h, true);
  h = layer(net.param("L1.W"), net.param("L1.b"), h, true);
  h = layer(net.param("L2.W"), net.param("L2.b"), h, false);
  const Vector out = mlp_forward(net, x);
  ASSERT_EQ(out.size(), 2);
  EXPECT_NEAR(out[0], h[0], 1e-12);
  EXPECT_NEAR(out[1], h[1], 1e-12);
}

TEST(MlpForward, RejectsWrongInputWidth) {
  Rng rng(4);
  auto net = init_network(mlp_architecture(3, {4}, 2), rng);
  EXPECT_THROW(mlp_forward(net, Matrix(Matrix::Zero(4, 1))), ShapeError);
}

TEST(LstmForward, ZeroWeightsGiveUniformProbabilities) {
  Rng rng(5);
  auto net = init_network(lstm_classifier_architecture(2, 4, 3), rng);
  for (auto& [_, m] : net.params) m.setZero();
  const std::vector<Matrix> seq(6, random_matrix(2, 3, rng));
  const Matrix p = lstm_forward(net, seq);
  EXPECT_TRUE(p.isApprox(Matrix::Constant(3, 3, 1.0 / 3.0), 1e-15));
}

TEST(LstmForward, ClosedForgetGateForgetsHistory) {
  Rng rng(6);
  auto net = init_network(lstm_classifier_architecture(3, 4, 3), rng);
  const int H = 4;
  net.params["L0.Wh"].setZero();
  // Gate order i, f, g, o: a huge negative forget bias pins f to 0.
  net.params["L0.b"].middleRows(H, H).setConstant(-1e4);
  const Matrix x = random_matrix(3, 2, rng);
  const Matrix single = lstm_forward(net, std::vector<Matrix>{x});
  const Matrix repeated = lstm_forward(net, std::vector<Matrix>(7, x));
  EXPECT_TRUE(single.isApprox(repeated, 1e-14));
}

TEST(LstmForward, ProbabilitiesSumToOne) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    auto net = init_network(lstm_classifier_architecture(3, 8, 3), rng);
    std::vector<Matrix> seq;
    for (int t = 0; t < 10; ++t) seq.push_back(random_matrix(3, 4, rng, -2, 2));
    const Matrix p = lstm_forward(net, seq);
    EXPECT_TRUE((p.array() >= 0).all());
    for (Eigen::Index j = 0; j < p.cols(); ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-9);
  }
}

TEST(LstmForward, StatesStayFiniteOverLongSequences) {
  Rng rng(8);
  auto net = init_network(lstm_classifier_architecture(2, 6, 3), rng);
  for (auto& [_, m] : net.params) m *= 5.0;
  std::vector<Matrix> seq;
  for (int t = 0; t < 1000; ++t) seq.push_back(random_matrix(2, 2, rng, -3, 3));
  LstmTape<double> tape;
  const Matrix logits = lstm_logits(net, seq, &tape);
  EXPECT_TRUE(logits.allFinite());
  for (const auto& s : tape.steps) {
    EXPECT_TRUE(s.h.allFinite());
    EXPECT_TRUE(s.c.allFinite());
    EXPECT_LE(s.h.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(Gradients, MlpMatchesFiniteDifferencesOnTenParameterNet) {
  Rng rng(9);
  // 2 -> 2 -> 2: 4 + 2 + 4 + 2 = 12 parameters.
  auto net = init_network(mlp_architecture(2, {2}, 2), rng);
  const Matrix x = random_matrix(2, 5, rng);
  const auto y = labels_for(5, 2);
  auto loss_fn = [&](const Matrix& out) {
    LossGrad<double> lg{0.0, Matrix()};
    lg.loss = nn::softmax_cross_entropy(out, y, &lg.grad);
    return lg;
  };
  const auto g = gradients(net, x, loss_fn);
  const auto fd = check_gradients(net.params, g.params, [&] { return loss_fn(mlp_forward(net, x)).loss; }, 1e-4);
  EXPECT_LT(fd.max_rel_error, 1e-3);
  EXPECT_EQ(fd.entries, 12u);
}

TEST(Gradients, LstmMatchesFiniteDifferences) {
  Rng rng(10);
  for (int trial = 0; trial < 3; ++trial) {
    auto net = init_network(lstm_classifier_architecture(2, 3, 3), rng);
    for (auto& [k, m] : net.params)
      if (k.back() == 'b') m = random_matrix(m.rows(), 1, rng, -0.5, 0.5);
    std::vector<Matrix> seq;
    for (int t = 0; t < 5; ++t) seq.push_back(random_matrix(2, 4, rng));
    const auto y = labels_for(4, 3);
    auto loss_fn = [&](const Matrix& out) {
      LossGrad<double> lg{0.0, Matrix()};
      lg.loss = nn::softmax_cross_entropy(out, y, &lg.grad);
      return lg;
    };
    const auto g = gradients(net, seq, loss_fn);
    const auto fd = check_gradients(net.params, g.params, [&] { return loss_fn(lstm_logits(net, seq)).loss; });
    EXPECT_LT(fd.max_rel_error, 1e-3);
  }
}

TEST(Gradients, ActivationsMatchFiniteDifferences) {
  for (auto act : {nn::Activation::Tanh, nn::Activation::Sigmoid, nn::Activation::Identity}) {
    Rng rng(11);
    auto net = init_network(mlp_architecture(3, {4}, 1, act), rng);
    const Matrix x = random_matrix(3, 6, rng);
    const Matrix target = random_matrix(1, 6, rng);
    auto mse = [&](const Matrix& out) {
      const Matrix d = out - target;
      return LossGrad<double>{0.5 * d.squaredNorm(), d};
    };
    const auto g = gradients(net, x, mse);
    const auto fd = check_gradients(net.params, g.params, [&] { return mse(mlp_forward(net, x)).loss; });
    EXPECT_LT(fd.max_rel_error, 1e-3) << nn::to_string(act);
  }
}

TEST(Gradients, ConstantLossHasZeroGradient) {
  Rng rng(12);
  auto net = init_network(mlp_architecture(3, {4}, 2), rng);
  const auto g = gradients(net, random_matrix(3, 2, rng),
                           [](const Matrix& out) { return LossGrad<double>{3.0, Matrix::Zero(out.rows(), out.cols())}; });
  for (const auto& [_, m] : g.params) EXPECT_EQ(m.squaredNorm(), 0.0);
}

TEST(Gradients, MseAtTargetHasZeroGradient) {
  Rng rng(13);
  auto net = init_network(mlp_architecture(3, {4}, 2), rng);
  const Matrix x = random_matrix(3, 5, rng);
  const Matrix target = mlp_forward(net, x);
  const auto g = gradients(net, x, [&](const Matrix& out) {
    const Matrix d = out - target;
    return LossGrad<double>{0.5 * d.squaredNorm(), d};
  });
  EXPECT_EQ(g.loss, 0.0);
  for (const auto& [_, m] : g.params) EXPECT_EQ(m.squaredNorm(), 0.0);
}

TEST(Softmax, OutputsAreADistribution) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix logits = random_matrix(4, 3, rng, -50, 50);
    const Matrix p = nn::softmax_columns(logits);
    EXPECT_TRUE((p.array() >= 0).all());
    for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-9);
    const Vector ls = nn::log_softmax(Vector(logits.col(0)));
    EXPECT_NEAR(ls.array().exp().sum(), 1.0, 1e-9);
  }
}

TEST(Optimizer, ZeroGradientsLeaveParametersUnchanged) {
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    Rng rng(15);
    auto net = init_network(mlp_architecture(3, {4}, 2), rng);
    const ParamSet before = net.params;
    OptimizerConfig oc;
    oc.kind = kind;
    Optimizer opt(oc);
    opt.step(net.params, zeros_like(net.params));
    EXPECT_EQ(net.params, before);
  }
}

TEST(Optimizer, SgdOnQuadraticDecaysGeometrically) {
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Sgd;
  oc.learning_rate = 0.1;
  Optimizer opt(oc);
  ParamSet p{{"x", Matrix::Constant(1, 1, 1.0)}};
  int k = 0;
  for (; k < 200 && std::abs(p["x"](0, 0)) >= 1e-6; ++k) {
    ParamSet g{{"x", 2.0 * p["x"]}};  // d/dx x^2
    opt.step(p, g);
    ASSERT_NEAR(p["x"](0, 0), std::pow(0.8, k + 1), 1e-12);
  }
  EXPECT_LT(std::abs(p["x"](0, 0)), 1e-6);
  EXPECT_LE(k, 200);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  OptimizerConfig oc;
  oc.learning_rate = 0.01;
  Optimizer opt(oc);
  ParamSet p{{"w", Matrix::Zero(3, 1)}};
  Matrix g(3, 1);
  g << 2.0, -0.5, 1e-3;
  opt.step(p, {{"w", g}});
  // Bias correction makes the first update lr * g / (|g| + eps).
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p["w"](i, 0), -0.01 * g(i, 0) / (std::abs(g(i, 0)) + 1e-8), 1e-12);
}

TEST(Optimizer, PlateauOfEqualLossesDecaysLearningRate) {
  OptimizerConfig oc;
  oc.learning_rate = 0.005;
  oc.decay_factor = 0.7;
  oc.plateau_window = 3;
  Optimizer opt(oc);
  EXPECT_FALSE(opt.observe_loss(1.0));
  EXPECT_FALSE(opt.observe_loss(1.0));
  EXPECT_TRUE(opt.observe_loss(1.0));
  EXPECT_DOUBLE_EQ(opt.learning_rate(), 0.005 * 0.7);
}

TEST(Optimizer, ImprovingLossKeepsLearningRate) {
  OptimizerConfig oc;
  oc.learning_rate = 0.005;
  Optimizer opt(oc);
  for (double l : {1.0, 0.9, 0.8, 0.7, 0.6}) EXPECT_FALSE(opt.observe_loss(l));
  EXPECT_DOUBLE_EQ(opt.learning_rate(), 0.005);
}

TEST(Optimizer, ClippingBoundsTheUpdate) {
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Sgd;
  oc.learning_rate = 1.0;
  oc.max_grad_norm = 1.0;
  Optimizer opt(oc);
  ParamSet p{{"w", Matrix::Zero(2, 1)}};
  Matrix g(2, 1);
  g << 30.0, 40.0;
  opt.step(p, {{"w", g}});
  EXPECT_NEAR(p["w"].norm(), 1.0, 1e-12);
}

class BundleFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("polex_tc_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

TEST_F(BundleFile, SaveLoadSaveIsByteIdentical) {
  Rng rng(16);
  const auto net = init_network(lstm_classifier_architecture(3, 5, 3), rng);
  save_bundle(net, dir_ / "a.bin");
  const auto back = load_bundle(dir_ / "a.bin");
  save_bundle(back, dir_ / "b.bin");
  EXPECT_EQ(slurp(dir_ / "a.bin"), slurp(dir_ / "b.bin"));
  EXPECT_EQ(back.arch, net.arch);
  EXPECT_EQ(back.params, net.params);
}

TEST_F(BundleFile, ForwardPassSurvivesRoundTrip) {
  Rng rng(17);
  const auto net = init_network(mlp_architecture(4, {8, 8}, 2), rng);
  save_bundle(net, dir_ / "m.bin");
  const auto back = load_bundle(dir_ / "m.bin");
  const Matrix x = random_matrix(4, 7, rng);
  EXPECT_EQ(mlp_forward(net, x), mlp_forward(back, x));
}

TEST_F(BundleFile, TruncatedFileIsRejected) {
  Rng rng(18);
  save_bundle(init_network(mlp_architecture(2, {3}, 2), rng), dir_ / "t.bin");
  std::string bytes = slurp(dir_ / "t.bin");
  bytes.resize(bytes.size() - 5);
  std::ofstream(dir_ / "t.bin", std::ios::binary) << bytes;
  EXPECT_THROW(load_bundle(dir_ / "t.bin"), FormatError);
}

TEST(Bundle, BadMagicAndVersionAreRejected) {
  Rng rng(19);
  const auto net = init_network(mlp_architecture(2, {3}, 2), rng);
  std::string bytes = encode_bundle(net);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_bundle(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(decode_bundle(bad_version), VersionError);
}

TEST(Bundle, ValidateCatchesShapeMismatch) {
  Rng rng(20);
  auto net = init_network(mlp_architecture(2, {3}, 2), rng);
  net.validate();
  net.params["L0.W"] = Matrix::Zero(2, 2);
  EXPECT_THROW(net.validate(), ShapeError);
}

TEST(Architecture, DescribeParseRoundTrip) {
  const auto a = mlp_architecture(4, {64, 64}, 2);
  EXPECT_EQ(Architecture::parse(a.describe()), a);
  const auto l = lstm_classifier_architecture(2, 64, 3);
  EXPECT_EQ(Architecture::parse(l.describe()), l);
  EXPECT_THROW(Architecture::parse("dense 4 3 tanh;dense 2 2 identity"), FormatError);
}

}  // namespace
}  // namespace polex
