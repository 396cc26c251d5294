// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hinge/group_scheme.hpp"
#include "hinge/hinge_layer.hpp"
#include "hinge/matrix.hpp"

namespace hinge {

enum class BlockKind : std::uint8_t { plain, basic, bottleneck, grouped_bottleneck };

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::plain: return "plain";
    case BlockKind::basic: return "basic";
    case BlockKind::bottleneck: return "bottleneck";
    case BlockKind::grouped_bottleneck: return "grouped-bottleneck";
  }
  return "?";
}

inline BlockKind block_kind_from_string(std::string_view s) {
  if (s == "plain") return BlockKind::plain;
  if (s == "basic" || s == "basic-block") return BlockKind::basic;
  if (s == "bottleneck") return BlockKind::bottleneck;
  if (s == "grouped-bottleneck") return BlockKind::grouped_bottleneck;
  throw ParameterError("unknown block kind '" + std::string(s) + "'");
}

/// Reference to one matrix of a block: layers[layer].weight or .hinge.
struct ParamRef {
  std::size_t layer = 0;
  bool hinge = false;
  bool operator==(const ParamRef&) const = default;
};

/// A set of group-sparse matrices inside a block together with its mask.
struct SparseTarget {
  std::string name;
  Position position = Position::plain;
  GroupScheme scheme;
  std::vector<ParamRef> slots;
  Mask alive;
  /// Layer whose bias entries die with column groups, and the bias indices
  /// belonging to each group. Empty for row schemes.
  std::optional<std::size_t> bias_layer;
  std::vector<std::vector<std::size_t>> bias_of_group;
};

/// plain: [conv]. basic: [conv1, conv2]. bottleneck / grouped: [lead, mid, end].
/// Residual blocks add either the input (identity) or `shortcut(x)`.
struct Block {
  BlockKind kind = BlockKind::plain;
  std::vector<HingedLayer> layers;
  std::optional<HingedLayer> shortcut;
  std::size_t cardinality = 1;
  std::vector<SparseTarget> targets;

  bool residual() const noexcept { return kind != BlockKind::plain; }
  const ConvMeta& in_meta() const { return layers.front().meta; }
  const ConvMeta& out_meta() const { return layers.back().meta; }
};

struct InputSpec {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  bool operator==(const InputSpec&) const = default;
};

/// Global-average-pool + linear classifier.
struct Linear {
  Matrix weight;  // in × classes
  std::vector<double> bias;
};

struct Network {
  InputSpec input;
  std::vector<Block> blocks;
  Linear head;

  std::size_t classes() const noexcept { return head.weight.cols(); }
};

struct BlockConfig {
  BlockKind kind = BlockKind::plain;
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t mid_channels = 0;  // bottleneck
  std::size_t cardinality = 1;   // grouped bottleneck
  std::size_t width = 0;         // grouped bottleneck: channels per cardinal group
};

struct ArchSpec {
  InputSpec input;
  std::size_t classes = 4;
  std::vector<BlockConfig> blocks;
};

/// Toy residual net: 3×3 stem, a 16-channel basic block and a 32-channel
/// strided basic block with a projection shortcut.
inline ArchSpec toy_resnet_arch() {
  ArchSpec a;
  a.input = {3, 16, 16};
  a.classes = 4;
  a.blocks = {{BlockKind::plain, 16, 3, 1},
              {BlockKind::basic, 16, 3, 1},
              {BlockKind::basic, 32, 3, 2}};
  return a;
}

namespace detail {

inline HingedLayer random_conv(std::string name, const ConvMeta& meta, std::mt19937_64& rng,
                               bool with_bias) {
  HingedLayer l;
  l.name = std::move(name);
  l.meta = meta;
  l.weight = Matrix(meta.patch_size(), meta.out_channels);
  // He initialization on the fan-in.
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(meta.patch_size())));
  for (auto& v : l.weight.data()) v = dist(rng);
  if (with_bias) l.bias.assign(meta.out_channels, 0.0);
  return l;
}

}  // namespace detail

/// Builds an un-hinged network with seeded random weights.
inline Network build_network(const ArchSpec& arch, std::uint64_t seed) {
  if (arch.blocks.empty()) throw ParameterError("architecture needs at least one block");
  std::mt19937_64 rng(seed);
  Network net;
  net.input = arch.input;
  std::size_t c = arch.input.channels, h = arch.input.height, w = arch.input.width;
  for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
    const BlockConfig& bc = arch.blocks[i];
    Block b;
    b.kind = bc.kind;
    const std::string p = "block" + std::to_string(i) + ".";
    switch (bc.kind) {
      case BlockKind::plain:
        b.layers.push_back(detail::random_conv(
            p + "conv", make_conv_meta(c, bc.out_channels, bc.kernel, bc.stride, h, w), rng, true));
        break;
      case BlockKind::basic: {
        const ConvMeta m1 = make_conv_meta(c, bc.out_channels, bc.kernel, bc.stride, h, w);
        b.layers.push_back(detail::random_conv(p + "conv1", m1, rng, true));
        const ConvMeta m2 =
            make_conv_meta(bc.out_channels, bc.out_channels, bc.kernel, 1, m1.out_h, m1.out_w);
        b.layers.push_back(detail::random_conv(p + "conv2", m2, rng, true));
        break;
      }
      case BlockKind::bottleneck:
      case BlockKind::grouped_bottleneck: {
        std::size_t mid = bc.mid_channels;
        std::size_t groups = 1;
        if (bc.kind == BlockKind::grouped_bottleneck) {
          if (bc.cardinality == 0 || bc.width == 0)
            throw ParameterError("grouped bottleneck needs cardinality and width");
          mid = bc.cardinality * bc.width;
          groups = bc.cardinality;
          b.cardinality = bc.cardinality;
        }
        if (mid == 0) throw ParameterError("bottleneck needs mid_channels");
        const ConvMeta lead = make_conv_meta(c, mid, 1, 1, h, w);
        b.layers.push_back(detail::random_conv(p + "lead", lead, rng, true));
        const ConvMeta midm = make_conv_meta(mid, mid, bc.kernel, bc.stride, h, w, groups);
        b.layers.push_back(detail::random_conv(p + "mid", midm, rng, true));
        const ConvMeta end = make_conv_meta(mid, bc.out_channels, 1, 1, midm.out_h, midm.out_w);
        b.layers.push_back(detail::random_conv(p + "end", end, rng, true));
        break;
      }
    }
    if (b.residual() && (c != bc.out_channels || bc.stride != 1))
      b.shortcut = detail::random_conv(p + "shortcut",
                                       make_conv_meta(c, bc.out_channels, 1, bc.stride, h, w),
                                       rng, false);
    c = bc.out_channels;
    h = b.out_meta().out_h;
    w = b.out_meta().out_w;
    net.blocks.push_back(std::move(b));
  }
  net.head.weight = Matrix(c, arch.classes);
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(c)));
  for (auto& v : net.head.weight.data()) v = dist(rng);
  net.head.bias.assign(arch.classes, 0.0);
  return net;
}

inline Matrix& param(Block& b, const ParamRef& r) {
  return r.hinge ? b.layers.at(r.layer).hinge : b.layers.at(r.layer).weight;
}
inline const Matrix& param(const Block& b, const ParamRef& r) {
  return r.hinge ? b.layers.at(r.layer).hinge : b.layers.at(r.layer).weight;
}

inline std::vector<Matrix*> target_matrices(Block& b, const SparseTarget& t) {
  std::vector<Matrix*> out;
  for (const auto& r : t.slots) out.push_back(&param(b, r));
  return out;
}
inline std::vector<const Matrix*> target_matrices(const Block& b, const SparseTarget& t) {
  std::vector<const Matrix*> out;
  for (const auto& r : t.slots) out.push_back(&param(b, r));
  return out;
}

/// Zeroes dead groups and the biases of dead output channels.
inline void apply_target_mask(Block& b, const SparseTarget& t) {
  const auto mats = target_matrices(b, t);
  apply_mask(mats, t.scheme, t.alive);
  if (!t.bias_layer) return;
  auto& bias = b.layers.at(*t.bias_layer).bias;
  if (bias.empty()) return;
  for (std::size_t g = 0; g < t.alive.size(); ++g)
    if (!t.alive[g])
      for (std::size_t j : t.bias_of_group[g]) bias[j] = 0.0;
}

inline void apply_all_masks(Network& net) {
  for (auto& b : net.blocks)
    for (const auto& t : b.targets) apply_target_mask(b, t);
}

/// True when the block's input channel count is pinned by an identity skip.
inline bool input_pinned(const Block& b) { return b.residual() && !b.shortcut.has_value(); }

struct AttachOptions {
  HingeInit init = HingeInit::svd;
  /// Scheme of the first matrix in a basic block.
  SchemeKind basic_first = SchemeKind::rows;
  /// Scheme of plain layers whose outputs may be pruned.
  SchemeKind plain = SchemeKind::columns;
};

namespace detail {

inline SparseTarget single_target(const Block& b, std::size_t layer, bool hinge, Position pos,
                                  GroupScheme scheme) {
  SparseTarget t;
  t.name = b.layers[layer].name + (hinge ? ".A" : ".W");
  t.position = pos;
  t.scheme = std::move(scheme);
  t.slots = {{layer, hinge}};
  t.alive.assign(t.scheme.group_count(), 1);
  if (t.scheme.kind == SchemeKind::columns) {
    t.bias_layer = layer;
    t.bias_of_group.resize(t.scheme.group_count());
    for (std::size_t g = 0; g < t.scheme.group_count(); ++g) t.bias_of_group[g] = {g};
  }
  return t;
}

}  // namespace detail

/// Defines the group-sparse targets of a block whose layers are already in
/// hinged form. `kind` is the scheme of the block's configurable matrix (the
/// plain layer or the first matrix of a basic block).
inline void define_targets(Block& b, SchemeKind kind) {
  b.targets.clear();
  switch (b.kind) {
    case BlockKind::plain:
      b.targets.push_back(detail::single_target(b, 0, true, Position::plain,
                                                make_scheme(b.layers[0], Position::plain, kind)));
      break;
    case BlockKind::basic:
      b.targets.push_back(detail::single_target(
          b, 0, true, Position::first_in_basic,
          make_scheme(b.layers[0], Position::first_in_basic, kind)));
      b.targets.push_back(detail::single_target(
          b, 1, true, Position::second_in_basic,
          make_scheme(b.layers[1], Position::second_in_basic, SchemeKind::rows)));
      break;
    case BlockKind::bottleneck:
      b.targets.push_back(detail::single_target(
          b, 0, false, Position::leading_1x1, make_scheme(b.layers[0], Position::leading_1x1)));
      b.targets.push_back(detail::single_target(
          b, 2, false, Position::ending_1x1, make_scheme(b.layers[2], Position::ending_1x1)));
      break;
    case BlockKind::grouped_bottleneck: {
      SparseTarget t;
      t.name = b.layers[0].name + "+" + b.layers[2].name;
      t.position = Position::grouped;
      t.scheme = make_grouped_scheme(b.layers[0], b.layers[2], b.cardinality);
      t.slots = {{0, false}, {2, false}};
      t.alive.assign(t.scheme.group_count(), 1);
      t.bias_layer = 0;
      const std::size_t width = b.layers[0].weight.cols() / b.cardinality;
      t.bias_of_group.resize(b.cardinality);
      for (std::size_t k = 0; k < b.cardinality; ++k)
        for (std::size_t j = k * width; j < (k + 1) * width; ++j) t.bias_of_group[k].push_back(j);
      b.targets.push_back(std::move(t));
      break;
    }
  }
}

/// Scheme of the configurable matrix of a block (see define_targets).
inline SchemeKind configurable_scheme(const Block& b) {
  return b.targets.empty() ? SchemeKind::rows : b.targets.front().scheme.kind;
}

/// Appends sparsity-inducing matrices after every conv of plain and basic
/// blocks and defines the group-sparse targets of every block. Bottleneck
/// blocks reuse their own 1×1 convs as the sparsity-inducing matrices.
inline void attach_hinges(Network& net, const AttachOptions& opts) {
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    Block& b = net.blocks[i];
    if (!b.targets.empty()) throw LegalityError("attach_hinges: network is already hinged");
    SchemeKind kind = opts.basic_first;
    if (b.kind == BlockKind::plain || b.kind == BlockKind::basic) {
      for (auto& l : b.layers) l = attach(l.weight, l.meta, opts.init, l.name, l.bias);
    }
    if (b.kind == BlockKind::plain) {
      // Output pruning is illegal when the consumer adds an identity skip.
      const bool next_pinned = i + 1 < net.blocks.size() && input_pinned(net.blocks[i + 1]);
      kind = next_pinned ? SchemeKind::rows : opts.plain;
    }
    define_targets(b, kind);
  }
}

inline bool is_hinged(const Network& net) {
  for (const auto& b : net.blocks)
    if (!b.targets.empty()) return true;
  return false;
}

/// Parameter roles for update rules.
enum class ParamRole : std::uint8_t { weight, sparse, bias };

struct ParamInfo {
  std::string name;
  ParamRole role;
};

/// Per-layer gradient buffers mirroring HingedLayer.
struct LayerGrad {
  Matrix weight;
  Matrix hinge;
  std::vector<double> bias;
};

struct Gradients {
  std::vector<std::vector<LayerGrad>> blocks;
  std::vector<std::optional<LayerGrad>> shortcuts;
  LayerGrad head;
};

inline LayerGrad zero_grad_like(const HingedLayer& l) {
  return {Matrix(l.weight.rows(), l.weight.cols()), Matrix(l.hinge.rows(), l.hinge.cols()),
          std::vector<double>(l.bias.size(), 0.0)};
}

inline Gradients zero_gradients(const Network& net) {
  Gradients g;
  for (const auto& b : net.blocks) {
    auto& gl = g.blocks.emplace_back();
    for (const auto& l : b.layers) gl.push_back(zero_grad_like(l));
    g.shortcuts.push_back(b.shortcut ? std::optional<LayerGrad>(zero_grad_like(*b.shortcut))
                                     : std::nullopt);
  }
  g.head = {Matrix(net.head.weight.rows(), net.head.weight.cols()), {},
            std::vector<double>(net.head.bias.size(), 0.0)};
  return g;
}

namespace detail {

inline bool is_sparse_slot(const Block& b, std::size_t layer, bool hinge) {
  for (const auto& t : b.targets)
    for (const auto& r : t.slots)
      if (r.layer == layer && r.hinge == hinge) return true;
  return false;
}

}  // namespace detail

struct ParamView {
  ParamInfo info;
  std::span<double> values;
};

/// Every parameter tensor in a fixed order: per layer W, A (if hinged),
/// bias (if any); then the shortcut W; then the head.
inline std::vector<ParamView> param_views(Network& net) {
  std::vector<ParamView> out;
  for (auto& b : net.blocks) {
    for (std::size_t li = 0; li < b.layers.size(); ++li) {
      auto& l = b.layers[li];
      out.push_back({{l.name + ".W", detail::is_sparse_slot(b, li, false) ? ParamRole::sparse
                                                                          : ParamRole::weight},
                     std::span(l.weight.data())});
      if (l.hinged())
        out.push_back({{l.name + ".A", detail::is_sparse_slot(b, li, true) ? ParamRole::sparse
                                                                           : ParamRole::weight},
                       std::span(l.hinge.data())});
      if (!l.bias.empty()) out.push_back({{l.name + ".b", ParamRole::bias}, std::span(l.bias)});
    }
    if (b.shortcut)
      out.push_back({{b.shortcut->name + ".W", ParamRole::weight},
                     std::span(b.shortcut->weight.data())});
  }
  out.push_back({{"head.W", ParamRole::weight}, std::span(net.head.weight.data())});
  out.push_back({{"head.b", ParamRole::bias}, std::span(net.head.bias)});
  return out;
}

/// Gradient buffers in the same order as param_views(net).
inline std::vector<std::span<double>> grad_views(const Network& net, Gradients& g) {
  std::vector<std::span<double>> out;
  for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
    const auto& b = net.blocks[bi];
    for (std::size_t li = 0; li < b.layers.size(); ++li) {
      auto& gl = g.blocks[bi][li];
      out.emplace_back(gl.weight.data());
      if (b.layers[li].hinged()) out.emplace_back(gl.hinge.data());
      if (!b.layers[li].bias.empty()) out.emplace_back(gl.bias);
    }
    if (b.shortcut) out.emplace_back(g.shortcuts[bi]->weight.data());
  }
  out.emplace_back(g.head.weight.data());
  out.emplace_back(g.head.bias);
  return out;
}

}  // namespace hinge
