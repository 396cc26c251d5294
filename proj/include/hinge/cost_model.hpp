// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hinge/group_scheme.hpp"
#include "hinge/hinge_layer.hpp"
#include "hinge/network.hpp"

// FLOP convention: one multiply-accumulate counts as 2 FLOPs; biases,
// activations and pooling are ignored. Parameters count weights only.

namespace hinge {

using Count = std::uint64_t;

/// 2 · (in/groups) · w · h · out · H_out · W_out.
inline Count conv_flops(const ConvMeta& m, std::size_t in_alive, std::size_t out_alive,
                        std::size_t groups = 1) {
  return Count{2} * (in_alive / groups) * m.kernel_area() * out_alive * m.out_pixels();
}

inline Count conv_params(const ConvMeta& m, std::size_t in_alive, std::size_t out_alive,
                         std::size_t groups = 1) {
  return Count{in_alive / groups} * m.kernel_area() * out_alive;
}

/// True iff running W_r (c·w·h → rank) followed by A_r (rank → n, 1×1) costs
/// fewer FLOPs than the merged c·w·h → n convolution, i.e.
/// rank < c·w·h·n / (c·w·h + n). in_alive defaults to the nominal channels.
inline bool decompose_saves(const ConvMeta& m, std::size_t rank, std::size_t in_alive = 0) {
  const std::size_t c = in_alive ? in_alive : m.in_channels;
  const Count patch = Count{c / m.groups} * m.kernel_area();
  const Count n = m.out_channels;
  return Count{rank} * (patch + n) < patch * n;
}

enum class LayerMode : std::uint8_t { untouched = 0, prune = 1, decompose = 2 };

inline const char* to_string(LayerMode m) {
  switch (m) {
    case LayerMode::untouched: return "untouched";
    case LayerMode::prune: return "prune";
    case LayerMode::decompose: return "decompose";
  }
  return "?";
}

struct LayerCost {
  std::string name;
  LayerMode mode = LayerMode::untouched;
  std::size_t alive_in = 0;
  std::size_t alive_out = 0;
  std::size_t rank = 0;  // decompose only
  Count flops = 0;
  Count params = 0;
  Count flops_original = 0;
};

struct CostReport {
  Count flops_original = 0;
  Count flops_compressed = 0;
  Count params_original = 0;
  Count params_compressed = 0;
  double gamma = 1.0;
  std::vector<LayerCost> per_layer;
};

/// FLOPs and parameters of the un-hinged network the model was built from.
inline std::pair<Count, Count> original_cost(const Network& net) {
  Count f = 0, p = 0;
  for (const auto& b : net.blocks) {
    for (const auto& l : b.layers) {
      f += conv_flops(l.meta, l.meta.in_channels, l.meta.out_channels, l.meta.groups);
      p += conv_params(l.meta, l.meta.in_channels, l.meta.out_channels, l.meta.groups);
    }
    if (b.shortcut) {
      const auto& m = b.shortcut->meta;
      f += conv_flops(m, m.in_channels, m.out_channels);
      p += conv_params(m, m.in_channels, m.out_channels);
    }
  }
  f += Count{2} * net.head.weight.size();
  p += net.head.weight.size();
  return {f, p};
}

/// Per-layer FLOPs of the un-hinged network, in report order.
inline std::vector<Count> original_layer_flops(const Network& net) {
  std::vector<Count> out;
  for (const auto& b : net.blocks) {
    for (const auto& l : b.layers)
      out.push_back(conv_flops(l.meta, l.meta.in_channels, l.meta.out_channels, l.meta.groups));
    if (b.shortcut) {
      const auto& m = b.shortcut->meta;
      out.push_back(conv_flops(m, m.in_channels, m.out_channels));
    }
  }
  out.push_back(Count{2} * net.head.weight.size());
  return out;
}

/// Masks per block per target.
using MaskSet = std::vector<std::vector<Mask>>;

inline MaskSet current_masks(const Network& net) {
  MaskSet out;
  for (const auto& b : net.blocks) {
    auto& bm = out.emplace_back();
    for (const auto& t : b.targets) bm.push_back(t.alive);
  }
  return out;
}

/// Masks that would result from nullifying every alive group whose norm is
/// strictly below `threshold`, keeping at least the largest group per target.
inline MaskSet threshold_masks(const Network& net, double threshold) {
  MaskSet out;
  for (const auto& b : net.blocks) {
    auto& bm = out.emplace_back();
    for (const auto& t : b.targets) {
      const auto norms = group_norms(target_matrices(b, t), t.scheme);
      Mask m = t.alive;
      std::size_t best = norms.size();
      for (std::size_t g = 0; g < norms.size(); ++g) {
        if (!m[g]) continue;
        if (best == norms.size() || norms[g] > norms[best]) best = g;
      }
      for (std::size_t g = 0; g < norms.size(); ++g)
        if (m[g] && norms[g] < threshold) m[g] = 0;
      if (alive_count(m) == 0 && best < norms.size()) m[best] = 1;
      bm.push_back(std::move(m));
    }
  }
  return out;
}

/// Installs `masks` as the permanent masks of the network and zeroes the dead
/// groups and their biases.
inline void set_masks(Network& net, const MaskSet& masks) {
  if (masks.size() != net.blocks.size()) throw DimensionError("set_masks: block count");
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    auto& b = net.blocks[i];
    if (masks[i].size() != b.targets.size()) throw DimensionError("set_masks: target count");
    for (std::size_t k = 0; k < b.targets.size(); ++k) {
      if (masks[i][k].size() != b.targets[k].alive.size())
        throw DimensionError("set_masks: group count of " + b.targets[k].name);
      b.targets[k].alive = masks[i][k];
      apply_target_mask(b, b.targets[k]);
    }
  }
}

namespace detail {

inline LayerCost merged_cost(const HingedLayer& l, std::size_t in, std::size_t out,
                             LayerMode mode) {
  return {l.name, mode, in, out, 0, conv_flops(l.meta, in, out, l.meta.groups),
          conv_params(l.meta, in, out, l.meta.groups)};
}

/// Row-grouped hinge: kept as a pair when that is cheaper, merged otherwise.
inline LayerCost decomposed_cost(const HingedLayer& l, std::size_t in, std::size_t rank) {
  const std::size_t n = l.meta.out_channels;
  if (!decompose_saves(l.meta, rank, in)) return merged_cost(l, in, n, LayerMode::untouched);
  const ConvMeta& m = l.meta;
  LayerCost c{l.name, LayerMode::decompose, in, n, rank, 0, 0};
  c.flops = conv_flops(m, in, rank) + Count{2} * rank * n * m.out_pixels();
  c.params = conv_params(m, in, rank) + Count{rank} * n;
  return c;
}

/// Cost of a hinged layer under its target mask; returns the output width.
inline std::size_t hinged_layer_cost(const HingedLayer& l, const SparseTarget& t, const Mask& m,
                                     std::size_t in, std::vector<LayerCost>& out) {
  const std::size_t alive = alive_count(m);
  if (t.scheme.kind == SchemeKind::columns) {
    out.push_back(merged_cost(l, in, alive, LayerMode::prune));
    return alive;
  }
  out.push_back(decomposed_cost(l, in, alive));
  return l.meta.out_channels;
}

inline void shortcut_cost(const Block& b, std::size_t in, std::vector<LayerCost>& out) {
  if (!b.shortcut) return;
  out.push_back(merged_cost(*b.shortcut, in, b.shortcut->meta.out_channels, LayerMode::untouched));
}

}  // namespace detail

/// Cost of the compact model that compaction would produce from `masks`.
inline CostReport cost_for_masks(const Network& net, const MaskSet& masks) {
  CostReport r;
  std::tie(r.flops_original, r.params_original) = original_cost(net);
  std::size_t in = net.input.channels;
  for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
    const Block& b = net.blocks[bi];
    auto& out = r.per_layer;
    if (b.targets.empty()) {
      std::size_t c = in;
      for (const auto& l : b.layers) {
        out.push_back(detail::merged_cost(l, c, l.meta.out_channels, LayerMode::untouched));
        c = l.meta.out_channels;
      }
      detail::shortcut_cost(b, in, out);
      in = c;
      continue;
    }
    const auto& bm = masks.at(bi);
    switch (b.kind) {
      case BlockKind::plain:
        in = detail::hinged_layer_cost(b.layers[0], b.targets[0], bm[0], in, out);
        break;
      case BlockKind::basic: {
        const std::size_t mid = detail::hinged_layer_cost(b.layers[0], b.targets[0], bm[0], in, out);
        detail::hinged_layer_cost(b.layers[1], b.targets[1], bm[1], mid, out);
        detail::shortcut_cost(b, in, out);
        in = b.out_meta().out_channels;
        break;
      }
      case BlockKind::bottleneck: {
        const std::size_t a_lead = alive_count(bm[0]);
        const std::size_t a_end = alive_count(bm[1]);
        out.push_back(detail::merged_cost(b.layers[0], in, a_lead, LayerMode::prune));
        out.push_back(detail::merged_cost(b.layers[1], a_lead, a_end, LayerMode::prune));
        out.push_back(detail::merged_cost(b.layers[2], a_end, b.layers[2].meta.out_channels,
                                          LayerMode::prune));
        detail::shortcut_cost(b, in, out);
        in = b.out_meta().out_channels;
        break;
      }
      case BlockKind::grouped_bottleneck: {
        const std::size_t g = alive_count(bm[0]);
        const std::size_t w = b.layers[1].meta.in_channels / b.cardinality;
        const auto& mm = b.layers[1].meta;
        out.push_back(detail::merged_cost(b.layers[0], in, g * w, LayerMode::prune));
        out.push_back({b.layers[1].name, LayerMode::prune, g * w, g * w, 0,
                       conv_flops(mm, g * w, g * w, g), conv_params(mm, g * w, g * w, g)});
        out.push_back(detail::merged_cost(b.layers[2], g * w, b.layers[2].meta.out_channels,
                                          LayerMode::prune));
        detail::shortcut_cost(b, in, out);
        in = b.out_meta().out_channels;
        break;
      }
    }
  }
  r.per_layer.push_back({"head", LayerMode::untouched, in, net.classes(), 0,
                         Count{2} * in * net.classes(), Count{in} * net.classes()});
  for (const auto& l : r.per_layer) {
    r.flops_compressed += l.flops;
    r.params_compressed += l.params;
  }
  r.gamma = static_cast<double>(r.flops_compressed) / static_cast<double>(r.flops_original);
  return r;
}

/// γ = g(threshold): FLOPs of the hypothetically compacted model over the
/// FLOPs of the original un-hinged model. Does not modify the model.
inline double compression_ratio(const Network& net, double threshold) {
  return cost_for_masks(net, threshold_masks(net, threshold)).gamma;
}

/// Cost of an already materialized network, read off its stored tensor
/// shapes. `reference` supplies the original FLOPs/params.
inline CostReport network_cost(const Network& net, std::pair<Count, Count> reference) {
  CostReport r;
  std::tie(r.flops_original, r.params_original) = reference;
  const auto add = [&](const HingedLayer& l) {
    const Count pix = l.meta.out_pixels();
    LayerCost c{l.name, l.hinged() ? LayerMode::decompose : LayerMode::untouched,
                l.meta.in_channels, l.meta.out_channels, l.hinged() ? l.hinge.rows() : 0, 0, 0};
    c.flops = Count{2} * l.weight.rows() * l.weight.cols() * pix;
    c.params = l.weight.size();
    if (l.hinged()) {
      c.flops += Count{2} * l.hinge.rows() * l.hinge.cols() * pix;
      c.params += l.hinge.size();
    }
    r.per_layer.push_back(std::move(c));
  };
  for (const auto& b : net.blocks) {
    for (const auto& l : b.layers) add(l);
    if (b.shortcut) add(*b.shortcut);
  }
  r.per_layer.push_back({"head", LayerMode::untouched, net.head.weight.rows(), net.classes(), 0,
                         Count{2} * net.head.weight.size(), net.head.weight.size()});
  for (const auto& l : r.per_layer) {
    r.flops_compressed += l.flops;
    r.params_compressed += l.params;
  }
  r.gamma = static_cast<double>(r.flops_compressed) / static_cast<double>(r.flops_original);
  return r;
}

}  // namespace hinge
