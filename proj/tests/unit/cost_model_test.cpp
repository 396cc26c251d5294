// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "hinge/cost_model.hpp"
#include "hinge/network.hpp"

using namespace hinge;

namespace {

Network hinged_toy(std::uint64_t seed, AttachOptions opts = {}) {
  Network net = build_network(toy_resnet_arch(), seed);
  attach_hinges(net, opts);
  return net;
}

std::vector<double> all_norms(const Network& net) {
  std::vector<double> out;
  for (const auto& b : net.blocks)
    for (const auto& t : b.targets) {
      const auto n = group_norms(target_matrices(b, t), t.scheme);
      out.insert(out.end(), n.begin(), n.end());
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

TEST(ConvFlops, HandComputed) {
  const ConvMeta m = make_conv_meta(16, 32, 3, 1, 8, 8);
  EXPECT_EQ(conv_flops(m, 16, 32), 589824u);
  const ConvMeta p = make_conv_meta(4, 4, 1, 1, 1, 1);
  EXPECT_EQ(conv_flops(p, 4, 4), 32u);
}

TEST(ConvFlops, LinearInAliveOutputs) {
  const ConvMeta m = make_conv_meta(16, 32, 3, 1, 8, 8);
  EXPECT_EQ(conv_flops(m, 16, 16) * 2, conv_flops(m, 16, 32));
  EXPECT_EQ(conv_flops(m, 8, 32) * 2, conv_flops(m, 16, 32));
  EXPECT_EQ(conv_params(m, 16, 32), 16u * 9u * 32u);
}

TEST(ConvFlops, GroupedConvDividesInputs) {
  const ConvMeta m = make_conv_meta(8, 8, 3, 1, 4, 4, 4);
  EXPECT_EQ(conv_flops(m, 8, 8, 4), 2u * 2u * 9u * 8u * 16u);
}

TEST(DecomposeSaves, Breakeven) {
  // c·k·k = 144, n = 32: break-even rank 144·32/176 ≈ 26.18.
  const ConvMeta m = make_conv_meta(16, 32, 3, 1, 8, 8);
  EXPECT_TRUE(decompose_saves(m, 16));
  EXPECT_TRUE(decompose_saves(m, 26));
  EXPECT_FALSE(decompose_saves(m, 27));
  EXPECT_FALSE(decompose_saves(m, 32));
}

TEST(DecomposeSaves, AgreesWithFlopCount) {
  for (std::size_t c : {1, 3, 8})
    for (std::size_t n : {2, 5, 16})
      for (std::size_t r = 0; r <= n; ++r) {
        const ConvMeta m = make_conv_meta(c, n, 3, 1, 6, 6);
        const ConvMeta a = make_conv_meta(r, n, 1, 1, 6, 6);
        const Count pair = conv_flops(m, c, r) + conv_flops(a, r, n);
        EXPECT_EQ(decompose_saves(m, r), pair < conv_flops(m, c, n)) << c << ' ' << n << ' ' << r;
      }
}

TEST(Gamma, ZeroThresholdIsOneForPruneOnlyModels) {
  AttachOptions opts;
  opts.basic_first = SchemeKind::columns;
  opts.plain = SchemeKind::columns;
  const Network net = hinged_toy(1, opts);
  EXPECT_DOUBLE_EQ(compression_ratio(net, 0.0), 1.0);
}

TEST(Gamma, RowGroupsNeverExceedOriginal) {
  const Network net = hinged_toy(2);
  EXPECT_LE(compression_ratio(net, 0.0), 1.0);
}

TEST(Gamma, InfiniteThresholdReachesPositiveFloor) {
  const Network net = hinged_toy(3);
  const auto masks = threshold_masks(net, std::numeric_limits<double>::infinity());
  for (const auto& bm : masks)
    for (const auto& m : bm) EXPECT_EQ(alive_count(m), 1u);
  const double floor = cost_for_masks(net, masks).gamma;
  EXPECT_GT(floor, 0.0);
  EXPECT_LT(floor, 1.0);
}

TEST(Gamma, StaircaseIsMonotone) {
  for (std::uint64_t seed : {4, 5, 6}) {
    AttachOptions opts;
    opts.basic_first = seed % 2 ? SchemeKind::columns : SchemeKind::rows;
    const Network net = hinged_toy(seed, opts);
    double prev = compression_ratio(net, 0.0);
    for (double t : all_norms(net)) {
      const double g = compression_ratio(net, std::nextafter(t, 1e300));
      EXPECT_LE(g, prev + 1e-15);
      prev = g;
    }
  }
}

TEST(Gamma, RatioDoesNotModifyModel) {
  const Network net = hinged_toy(7);
  const Network before = net;
  const double t = all_norms(net)[all_norms(net).size() / 2];
  const double g1 = compression_ratio(net, t);
  EXPECT_EQ(compression_ratio(net, t), g1);
  for (std::size_t i = 0; i < net.blocks.size(); ++i)
    for (std::size_t k = 0; k < net.blocks[i].targets.size(); ++k)
      EXPECT_EQ(net.blocks[i].targets[k].alive, before.blocks[i].targets[k].alive);
  EXPECT_EQ(net.blocks[1].layers[0].hinge, before.blocks[1].layers[0].hinge);
}

TEST(Gamma, OriginalFlopsIgnoreHinges) {
  const Network plain = build_network(toy_resnet_arch(), 8);
  Network h = plain;
  attach_hinges(h, {});
  EXPECT_EQ(original_cost(plain), original_cost(h));
  const auto per = original_layer_flops(h);
  Count sum = 0;
  for (auto f : per) sum += f;
  EXPECT_EQ(sum, original_cost(h).first);
}

TEST(Gamma, SetMasksMatchesCostForMasks) {
  Network net = hinged_toy(9);
  const double t = all_norms(net)[all_norms(net).size() / 3];
  const auto masks = threshold_masks(net, t);
  const double g = cost_for_masks(net, masks).gamma;
  set_masks(net, masks);
  EXPECT_EQ(cost_for_masks(net, current_masks(net)).gamma, g);
  EXPECT_EQ(compression_ratio(net, 0.0), g);
}

TEST(Gamma, SetMasksRejectsWrongShape) {
  Network net = hinged_toy(10);
  auto masks = current_masks(net);
  masks[1][0].pop_back();
  EXPECT_THROW(set_masks(net, masks), DimensionError);
  masks.pop_back();
  EXPECT_THROW(set_masks(net, masks), DimensionError);
}

TEST(Gamma, KeepsLargestGroupAlive) {
  const Network net = hinged_toy(11);
  const auto masks = threshold_masks(net, 1e300);
  for (std::size_t i = 0; i < net.blocks.size(); ++i)
    for (std::size_t k = 0; k < net.blocks[i].targets.size(); ++k) {
      const auto& b = net.blocks[i];
      const auto n = group_norms(target_matrices(b, b.targets[k]), b.targets[k].scheme);
      const auto best = std::max_element(n.begin(), n.end()) - n.begin();
      EXPECT_TRUE(masks[i][k][best]);
    }
}
