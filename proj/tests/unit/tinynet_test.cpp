// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "hinge/dataset.hpp"
#include "hinge/train.hpp"
#include "hinge/verify.hpp"
#include "oracles.hpp"

using namespace hinge;

namespace {

std::vector<int> labels_of(std::initializer_list<int> l) { return l; }

DatasetSpec toy_data(std::uint64_t seed) {
  DatasetSpec d;
  d.seed = seed;
  d.input = toy_resnet_arch().input;
  return d;
}

double total_abs(Network& net) {
  double s = 0.0;
  for (const auto& p : param_views(net))
    for (double v : p.values) s += std::abs(v);
  return s;
}

}  // namespace

TEST(Conv, MatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  for (std::size_t k : {1, 3})
    for (std::size_t stride : {1, 2})
      for (std::size_t groups : {1, 2}) {
        const ConvMeta m = make_conv_meta(4, 6, k, stride, 5, 7, groups);
        HingedLayer l{"c", m, oracle::random_matrix(m.patch_size(), 6, rng), {}, {}};
        for (int j = 0; j < 6; ++j) l.bias.push_back(0.1 * j);
        const Matrix x = oracle::random_matrix(2 * 35, 4, rng);
        const Matrix ref = oracle::direct_conv(x, 2, m, l.weight, l.bias);
        EXPECT_LE(max_abs_diff(layer_forward(l, x, 2, nullptr), ref), 1e-12)
            << k << ' ' << stride << ' ' << groups;
      }
}

TEST(Conv, HingedLayerIsConvThenMix) {
  std::mt19937_64 rng(2);
  const ConvMeta m = make_conv_meta(3, 4, 3, 1, 4, 4);
  const HingedLayer l{"h", m, oracle::random_matrix(27, 4, rng), oracle::random_matrix(4, 4, rng), {}};
  const Matrix x = oracle::random_matrix(16, 3, rng);
  const Matrix ref = matmul(oracle::direct_conv(x, 1, m, l.weight, {}), l.hinge);
  EXPECT_LE(max_abs_diff(layer_forward(l, x, 1, nullptr), ref), 1e-12);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  Network net = build_network(toy_resnet_arch(), 3);
  for (auto& p : param_views(net))
    for (auto& v : p.values) v = 0.0;
  std::mt19937_64 rng(3);
  const Matrix logits = forward(net, oracle::random_matrix(2 * 256, 3, rng), 2);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityPointwiseNetworkAveragesInput) {
  ArchSpec a;
  a.input = {2, 3, 3};
  a.classes = 2;
  a.blocks = {{BlockKind::plain, 2, 1, 1}};
  Network net = build_network(a, 4);
  net.blocks[0].layers[0].weight = Matrix::identity(2);
  net.blocks[0].layers[0].bias.assign(2, 0.0);
  net.head.weight = Matrix::identity(2);
  net.head.bias.assign(2, 0.0);
  Matrix x(9, 2);
  for (std::size_t r = 0; r < 9; ++r) {
    x(r, 0) = static_cast<double>(r);
    x(r, 1) = -1.0;
  }
  const Matrix logits = forward(net, x, 1);
  EXPECT_DOUBLE_EQ(logits(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(logits(0, 1), 0.0);
}

TEST(Forward, WrongInputShapeThrows) {
  const Network net = build_network(toy_resnet_arch(), 5);
  EXPECT_THROW(forward(net, Matrix(10, 3), 1), DimensionError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Network net = build_network(toy_resnet_arch(), 6);
  attach_hinges(net, {});
  std::mt19937_64 rng(6);
  ForwardCache cache;
  const Matrix logits = forward(net, oracle::random_matrix(2 * 256, 3, rng), 2, &cache);
  Gradients g = backward(net, cache, Matrix(logits.rows(), logits.cols()));
  for (const auto& s : grad_views(net, g))
    for (double v : s) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ChainRuleThroughHinge) {
  std::mt19937_64 rng(7);
  const ConvMeta m = make_conv_meta(3, 4, 1, 1, 2, 2);
  const HingedLayer l{"h", m, oracle::random_matrix(3, 4, rng), oracle::random_matrix(4, 4, rng), {}};
  const Matrix x = oracle::random_matrix(8, 3, rng);
  const Matrix dz = oracle::random_matrix(8, 4, rng);
  LayerCache cache;
  layer_forward(l, x, 2, &cache);
  LayerGrad g = zero_grad_like(l);
  const Matrix dx = layer_backward(l, cache, dz, 2, g, true);
  EXPECT_LE(max_abs_diff(g.weight, matmul_tn(x, matmul_nt(dz, l.hinge))), 1e-12);
  EXPECT_LE(max_abs_diff(g.hinge, matmul_tn(matmul(x, l.weight), dz)), 1e-12);
  EXPECT_LE(max_abs_diff(dx, matmul_nt(dz, matmul(l.weight, l.hinge))), 1e-12);
}

TEST(Backward, FiniteDifferences) {
  for (std::uint64_t seed : {3, 4}) {
    const auto rs = verify_grad(seed, 30);
    for (const auto& r : rs) EXPECT_TRUE(r.passed) << r.name << ": " << r.failure;
  }
}

TEST(CrossEntropy, UniformLogits) {
  const Matrix z(2, 4);
  const auto r = cross_entropy(z, labels_of({0, 3}));
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(r.grad(0, 0), (0.25 - 1.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.grad(0, 1), 0.25 / 2.0, 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectLogitIsFreeAndStable) {
  Matrix z(1, 3);
  z(0, 1) = 800.0;
  const auto r = cross_entropy(z, labels_of({1}));
  EXPECT_LT(r.loss, 1e-300);
  EXPECT_TRUE(std::isfinite(r.grad(0, 0)));
  z(0, 1) = -800.0;
  EXPECT_NEAR(cross_entropy(z, labels_of({1})).loss, 800.0 + std::log(2.0), 1e-9);
}

TEST(CrossEntropy, MatchesLogSumExp) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    const Matrix z = oracle::random_matrix(1, 5, rng, 3.0);
    const int y = i % 5;
    double s = 0.0;
    for (double v : z.data()) s += std::exp(v);
    EXPECT_NEAR(cross_entropy(z, labels_of({y})).loss, std::log(s) - z(0, y), 1e-12);
  }
}

TEST(CrossEntropy, BadLabelsThrow) {
  EXPECT_THROW(cross_entropy(Matrix(1, 3), labels_of({3})), DimensionError);
  EXPECT_THROW(cross_entropy(Matrix(2, 3), labels_of({0})), DimensionError);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(9);
  for (double t : {0.5, 1.0, 4.0}) {
    const Matrix p = softmax(oracle::random_matrix(6, 5, rng, 10.0), t);
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-14);
    }
  }
}

TEST(Distill, ZeroBalanceIsCrossEntropy) {
  std::mt19937_64 rng(10);
  const Matrix s = oracle::random_matrix(3, 4, rng), t = oracle::random_matrix(3, 4, rng);
  const auto y = labels_of({0, 1, 2});
  const auto d = distill_loss(s, t, y, {0.0, 4.0});
  const auto c = cross_entropy(s, y);
  EXPECT_EQ(d.loss, c.loss);
  EXPECT_EQ(d.grad, c.grad);
}

TEST(Distill, TermWeights) {
  std::mt19937_64 rng(11);
  const Matrix s = oracle::random_matrix(2, 3, rng), t = oracle::random_matrix(2, 3, rng);
  const auto y = labels_of({0, 2});
  const DistillConfig cfg{0.4, 4.0};
  const Matrix pt = softmax(t, 4.0), ls = log_softmax(s, 4.0);
  double soft = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) soft -= pt.data()[i] * ls.data()[i];
  soft /= 2.0;
  const double expect = 0.6 * cross_entropy(s, y).loss + 12.8 * soft;
  EXPECT_NEAR(distill_loss(s, t, y, cfg).loss, expect, 1e-12);
}

TEST(Distill, MatchingTeacherHasNoSoftGradient) {
  std::mt19937_64 rng(12);
  const Matrix s = oracle::random_matrix(3, 4, rng);
  const auto y = labels_of({1, 2, 3});
  const auto d = distill_loss(s, s, y, {0.4, 4.0});
  Matrix hard = cross_entropy(s, y).grad;
  for (auto& v : hard.data()) v *= 0.6;
  EXPECT_LE(max_abs_diff(d.grad, hard), 1e-15);
}

TEST(Distill, FullBalanceIgnoresLabels) {
  std::mt19937_64 rng(13);
  const Matrix s = oracle::random_matrix(2, 3, rng), t = oracle::random_matrix(2, 3, rng);
  const auto a = distill_loss(s, t, labels_of({0, 0}), {1.0, 2.0});
  const auto b = distill_loss(s, t, labels_of({2, 1}), {1.0, 2.0});
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(Distill, ShapeMismatchAndBadConfigThrow) {
  EXPECT_THROW(distill_loss(Matrix(2, 3), Matrix(2, 4), labels_of({0, 1}), {}), DimensionError);
  EXPECT_THROW(validate(DistillConfig{1.5, 4.0}), ParameterError);
  EXPECT_THROW(validate(DistillConfig{0.5, 0.0}), ParameterError);
}

TEST(Dataset, DeterministicAndBalanced) {
  const auto a = make_synthetic_dataset(toy_data(1));
  const auto b = make_synthetic_dataset(toy_data(1));
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.test.labels, b.test.labels);
  const auto c = make_synthetic_dataset(toy_data(2));
  EXPECT_NE(a.train.images, c.train.images);
  std::vector<int> counts(4, 0);
  for (int y : a.train.labels) ++counts[static_cast<std::size_t>(y)];
  for (int n : counts) EXPECT_EQ(n, 128);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  const auto data = make_synthetic_dataset(toy_data(3));
  Network net = build_network(toy_resnet_arch(), 3);
  Network before = net;
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(train(net, data.train, cfg, {}, 3).history.empty());
  EXPECT_EQ(total_abs(net), total_abs(before));
}

TEST(Train, RandomModelIsNearChance) {
  const auto data = make_synthetic_dataset(toy_data(4));
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) mean += evaluate(build_network(toy_resnet_arch(), s), data.test).accuracy;
  EXPECT_NEAR(mean / 4.0, 0.25, 0.15);
}

TEST(Train, OverfitsTinySubset) {
  auto spec = toy_data(5);
  spec.input = {3, 8, 8};
  spec.n_train = 16;
  spec.noise = 1.0;
  const auto data = make_synthetic_dataset(spec);
  ArchSpec a;
  a.input = spec.input;
  a.blocks = {{BlockKind::plain, 8, 3, 1}, {BlockKind::basic, 8, 3, 1}};
  Network net = build_network(a, 5);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 16;
  cfg.weight_decay = 0.0;
  train(net, data.train, cfg, {}, 5);
  const auto ev = evaluate(net, data.train);
  EXPECT_EQ(ev.accuracy, 1.0);
  EXPECT_LT(ev.loss, 0.05);
}

TEST(Train, Deterministic) {
  auto spec = toy_data(6);
  spec.n_train = 64;
  const auto data = make_synthetic_dataset(spec);
  Network a = build_network(toy_resnet_arch(), 6), b = build_network(toy_resnet_arch(), 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  const auto ra = train(a, data.train, cfg, {}, 6);
  const auto rb = train(b, data.train, cfg, {}, 6);
  EXPECT_EQ(ra.history[0].loss, rb.history[0].loss);
  EXPECT_EQ(predict_logits(a, data.test), predict_logits(b, data.test));
}

TEST(Train, BaselineLearnsToyTask) {
  const auto data = make_synthetic_dataset(toy_data(42));
  Network net = build_network(toy_resnet_arch(), 42);
  TrainConfig cfg;
  cfg.epochs = 6;
  const auto start = std::chrono::steady_clock::now();
  const auto r = train(net, data.train, cfg, {}, 42);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(r.history.back().loss, r.history.front().loss);
  EXPECT_GE(evaluate(net, data.test).accuracy, 0.95);
  EXPECT_LT(secs, 60.0);
}
