// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "hinge/cost_model.hpp"
#include "hinge/matrix.hpp"
#include "hinge/network.hpp"
#include "hinge/nn.hpp"

namespace hinge {

inline std::vector<std::size_t> alive_indices(const Mask& m) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) idx.push_back(i);
  return idx;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

/// Merges W·A into a single filter (no hinge).
inline HingedLayer merge_hinge(const HingedLayer& l) {
  HingedLayer out = l;
  if (l.hinged()) {
    out.weight = matmul(l.weight, l.hinge);
    out.hinge = Matrix();
  }
  return out;
}

struct PrunedLayer {
  HingedLayer layer;
  std::vector<std::size_t> kept_outputs;
};

/// Column-grouped hinge: the merged filter W·A restricted to alive columns.
inline PrunedLayer compact_prune(const HingedLayer& l, const Mask& alive_columns) {
  if (!l.hinged()) throw LegalityError(l.name + ": compact_prune needs a hinged layer");
  if (alive_columns.size() != l.hinge.cols())
    throw DimensionError(l.name + ": column mask length mismatch");
  PrunedLayer out;
  out.kept_outputs = alive_indices(alive_columns);
  out.layer = l;
  out.layer.weight = select_columns(matmul(l.weight, l.hinge), out.kept_outputs);
  out.layer.hinge = Matrix();
  if (!l.bias.empty()) {
    out.layer.bias.clear();
    for (auto j : out.kept_outputs) out.layer.bias.push_back(l.bias[j]);
  }
  out.layer.meta.out_channels = out.kept_outputs.size();
  return out;
}

/// Row-grouped hinge: W_r = W restricted to alive columns, A_r = A
/// restricted to alive rows, so W_r·A_r equals W·(masked A). Bias stays on
/// the second factor.
inline HingedLayer compact_decompose(const HingedLayer& l, const Mask& alive_rows) {
  if (!l.hinged()) throw LegalityError(l.name + ": compact_decompose needs a hinged layer");
  if (alive_rows.size() != l.hinge.rows())
    throw DimensionError(l.name + ": row mask length mismatch");
  const auto keep = alive_indices(alive_rows);
  HingedLayer out = l;
  out.weight = select_columns(l.weight, keep);
  out.hinge = select_rows(l.hinge, keep);
  return out;
}

/// Drops filter rows of removed input channels (channel-major patches).
inline void restrict_inputs(HingedLayer& l, const std::vector<std::size_t>& kept_channels) {
  if (kept_channels.size() == l.meta.in_channels) return;
  if (l.meta.groups != 1) throw LegalityError(l.name + ": cannot drop inputs of a grouped conv");
  const std::size_t area = l.meta.kernel_area();
  std::vector<std::size_t> rows;
  for (auto c : kept_channels)
    for (std::size_t k = 0; k < area; ++k) rows.push_back(c * area + k);
  l.weight = select_rows(l.weight, rows);
  l.meta.in_channels = kept_channels.size();
}

namespace detail {

inline HingedLayer restrict_outputs(const HingedLayer& l, const std::vector<std::size_t>& keep) {
  HingedLayer out = l;
  if (l.hinged())
    out.hinge = select_columns(l.hinge, keep);
  else
    out.weight = select_columns(l.weight, keep);
  if (!l.bias.empty()) {
    out.bias.clear();
    for (auto j : keep) out.bias.push_back(l.bias[j]);
  }
  out.meta.out_channels = keep.size();
  return out;
}

/// Rows → decomposed pair, or merged back when the pair saves nothing.
inline HingedLayer finish_rows(const HingedLayer& l, const Mask& alive) {
  HingedLayer d = compact_decompose(l, alive);
  if (decompose_saves(d.meta, d.hinge.rows())) return d;
  return merge_hinge(d);
}

inline PrunedLayer finish_hinged(const HingedLayer& l, const SparseTarget& t, const Mask& m) {
  if (t.scheme.kind == SchemeKind::columns) return compact_prune(l, m);
  return {finish_rows(l, m), all_indices(l.meta.out_channels)};
}

}  // namespace detail

struct CompactModel {
  Network net;
  std::vector<LayerMode> modes;  // per layer, in topological order
  CostReport report;
};

/// Restructures a masked hinged network into its compact form: merges
/// column-pruned layers, splits row-grouped ones into a reduced pair (when
/// cheaper), and removes the input rows of every consumer of a pruned
/// channel. Residual outputs are never pruned.
inline CompactModel compact(const Network& net, const MaskSet& masks) {
  CompactModel cm;
  cm.net.input = net.input;
  std::vector<std::size_t> kept = all_indices(net.input.channels);
  for (std::size_t bi = 0; bi < net.blocks.size(); ++bi) {
    const Block& b = net.blocks[bi];
    Block nb;
    nb.kind = b.kind;
    nb.cardinality = b.cardinality;
    const std::vector<std::size_t> block_in = kept;
    if (input_pinned(b) && block_in.size() != b.in_meta().in_channels)
      throw LegalityError("block " + std::to_string(bi) + ": identity skip input was pruned");
    std::vector<LayerMode> modes;
    if (b.targets.empty()) {
      for (const auto& l : b.layers) {
        HingedLayer c = merge_hinge(l);
        restrict_inputs(c, kept);
        kept = all_indices(c.meta.out_channels);
        nb.layers.push_back(std::move(c));
        modes.push_back(LayerMode::untouched);
      }
    } else {
      const auto& bm = masks.at(bi);
      switch (b.kind) {
        case BlockKind::plain:
        case BlockKind::basic: {
          for (std::size_t li = 0; li < b.layers.size(); ++li) {
            HingedLayer in = b.layers[li];
            restrict_inputs(in, kept);
            PrunedLayer p = detail::finish_hinged(in, b.targets[li], bm[li]);
            if (b.kind == BlockKind::basic && li == 1 &&
                p.kept_outputs.size() != b.layers[1].meta.out_channels)
              throw LegalityError(b.layers[1].name + ": output feeds a skip connection");
            modes.push_back(b.targets[li].scheme.kind == SchemeKind::columns ? LayerMode::prune
                            : p.layer.hinged()                               ? LayerMode::decompose
                                                                             : LayerMode::untouched);
            kept = std::move(p.kept_outputs);
            nb.layers.push_back(std::move(p.layer));
          }
          break;
        }
        case BlockKind::bottleneck: {
          const auto lead_keep = alive_indices(bm[0]);
          const auto end_keep = alive_indices(bm[1]);
          HingedLayer lead = detail::restrict_outputs(b.layers[0], lead_keep);
          restrict_inputs(lead, kept);
          HingedLayer mid = detail::restrict_outputs(b.layers[1], end_keep);
          restrict_inputs(mid, lead_keep);
          HingedLayer end = b.layers[2];
          end.weight = select_rows(end.weight, end_keep);
          end.meta.in_channels = end_keep.size();
          nb.layers = {std::move(lead), std::move(mid), std::move(end)};
          modes = {LayerMode::prune, LayerMode::prune, LayerMode::prune};
          kept = all_indices(b.out_meta().out_channels);
          break;
        }
        case BlockKind::grouped_bottleneck: {
          const auto groups = alive_indices(bm[0]);
          const std::size_t w = b.layers[1].meta.in_channels / b.cardinality;
          std::vector<std::size_t> chans;
          for (auto g : groups)
            for (std::size_t j = 0; j < w; ++j) chans.push_back(g * w + j);
          HingedLayer lead = detail::restrict_outputs(b.layers[0], chans);
          restrict_inputs(lead, kept);
          // Each kept group keeps its own input slice, so only columns go.
          HingedLayer mid = detail::restrict_outputs(b.layers[1], chans);
          mid.meta.in_channels = chans.size();
          mid.meta.groups = groups.size();
          HingedLayer end = b.layers[2];
          end.weight = select_rows(end.weight, chans);
          end.meta.in_channels = chans.size();
          nb.layers = {std::move(lead), std::move(mid), std::move(end)};
          modes = {LayerMode::prune, LayerMode::prune, LayerMode::prune};
          nb.cardinality = groups.size();
          kept = all_indices(b.out_meta().out_channels);
          break;
        }
      }
    }
    if (b.shortcut) {
      HingedLayer s = *b.shortcut;
      restrict_inputs(s, block_in);
      nb.shortcut = std::move(s);
      modes.push_back(LayerMode::untouched);
    }
    for (const auto& l : nb.layers) check_layer(l);
    cm.modes.insert(cm.modes.end(), modes.begin(), modes.end());
    cm.net.blocks.push_back(std::move(nb));
  }
  cm.net.head.weight = select_rows(net.head.weight, kept);
  cm.net.head.bias = net.head.bias;
  cm.report = network_cost(cm.net, original_cost(net));
  for (std::size_t i = 0; i < cm.modes.size(); ++i) cm.report.per_layer[i].mode = cm.modes[i];
  const auto orig = original_layer_flops(net);
  for (std::size_t i = 0; i < orig.size(); ++i) cm.report.per_layer[i].flops_original = orig[i];
  return cm;
}

inline CompactModel compact(const Network& net) { return compact(net, current_masks(net)); }

/// Max |Δ| over the logits of both models on n seeded random inputs.
inline double verify_equivalence(const Network& masked, const Network& compacted,
                                 std::size_t n_inputs, std::uint64_t seed = 7) {
  if (!(masked.input == compacted.input) || masked.classes() != compacted.classes())
    throw DimensionError("verify_equivalence: models disagree on input or logit shape");
  const auto& in = masked.input;
  Matrix x(n_inputs * in.height * in.width, in.channels);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : x.data()) v = dist(rng);
  const Matrix a = forward(masked, x, n_inputs);
  const Matrix b = forward(compacted, x, n_inputs);
  return max_abs_diff(a, b);
}

}  // namespace hinge
