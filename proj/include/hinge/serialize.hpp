// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hinge/checkpoint.hpp"
#include "hinge/cost_model.hpp"
#include "hinge/network.hpp"

// Network layout inside an HNGW file:
//   net.input                  [3]  channels, height, width
//   block{i}.kind              [2]  block kind, cardinality
//   block{i}.{role}.W / .A / <target>.mask / <target>.scheme / .b / .geom / .mode
//   block{i}.shortcut.W / .geom / .mode
//   head.W, head.b
// geom = in, out, kernel_h, kernel_w, stride, padding, groups.
// scheme = scheme kind, position. mode exists only for compacted networks.

namespace hinge {

struct LoadedNetwork {
  Network net;
  /// Per layer in topological order; empty unless the file is compacted.
  std::vector<LayerMode> modes;
};

namespace detail {

inline std::vector<std::string> layer_roles(BlockKind k) {
  switch (k) {
    case BlockKind::plain: return {"conv"};
    case BlockKind::basic: return {"conv1", "conv2"};
    default: return {"lead", "mid", "end"};
  }
}

inline std::vector<float> to_f32(std::span<const double> v) { return {v.begin(), v.end()}; }

inline Tensor matrix_tensor(const std::string& name, const Matrix& m) {
  return f32_tensor(name, {m.rows(), m.cols()}, to_f32(m.data()));
}

inline void put_layer(std::vector<Tensor>& out, const Block& b, std::size_t li,
                      const HingedLayer& l, const std::vector<LayerMode>* modes,
                      std::size_t& mode_pos) {
  out.push_back(matrix_tensor(l.name + ".W", l.weight));
  if (l.hinged()) out.push_back(matrix_tensor(l.name + ".A", l.hinge));
  // A target is stored after the last layer it touches.
  for (const auto& t : b.targets) {
    std::size_t last = 0;
    for (const auto& r : t.slots) last = std::max(last, r.layer);
    if (last != li || &l != &b.layers[li]) continue;
    out.push_back(byte_tensor(t.name + ".mask", t.alive));
    out.push_back(byte_tensor(t.name + ".scheme", {static_cast<std::uint8_t>(t.scheme.kind),
                                                   static_cast<std::uint8_t>(t.position)}));
  }
  if (!l.bias.empty())
    out.push_back(f32_tensor(l.name + ".b", {l.bias.size()}, to_f32(l.bias)));
  const auto& m = l.meta;
  out.push_back(f32_tensor(l.name + ".geom", {7},
                           {static_cast<float>(m.in_channels), static_cast<float>(m.out_channels),
                            static_cast<float>(m.kernel_h), static_cast<float>(m.kernel_w),
                            static_cast<float>(m.stride), static_cast<float>(m.padding),
                            static_cast<float>(m.groups)}));
  if (modes) out.push_back(byte_tensor(l.name + ".mode", {static_cast<std::uint8_t>(modes->at(mode_pos++))}));
}

class TensorMap {
 public:
  explicit TensorMap(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
      if (!map_.emplace(t.name, &t).second) throw FormatError("duplicate tensor " + t.name);
  }
  const Tensor* find(const std::string& name) const {
    auto it = map_.find(name);
    return it == map_.end() ? nullptr : it->second;
  }
  const Tensor& at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw FormatError("missing tensor " + name);
    return *t;
  }
  Matrix matrix(const std::string& name) const {
    const Tensor& t = at(name);
    if (t.dims.size() != 2) throw FormatError(name + ": expected a matrix");
    return Matrix(t.dims[0], t.dims[1], std::vector<double>(t.values.begin(), t.values.end()));
  }
  std::vector<double> vec(const std::string& name, std::size_t n) const {
    const Tensor& t = at(name);
    if (t.dims.size() != 1 || t.values.size() != n)
      throw FormatError(name + ": expected " + std::to_string(n) + " values");
    return {t.values.begin(), t.values.end()};
  }

 private:
  std::map<std::string, const Tensor*> map_;
};

inline std::size_t as_count(float f, const std::string& what) {
  if (!(f >= 0.0f) || f != static_cast<float>(static_cast<std::size_t>(f)))
    throw FormatError(what + ": not a count");
  return static_cast<std::size_t>(f);
}

inline HingedLayer get_layer(const TensorMap& tm, const std::string& name, std::size_t in_h,
                             std::size_t in_w) {
  const auto g = tm.vec(name + ".geom", 7);
  ConvMeta m;
  m.in_channels = as_count(static_cast<float>(g[0]), name);
  m.out_channels = as_count(static_cast<float>(g[1]), name);
  m.kernel_h = as_count(static_cast<float>(g[2]), name);
  m.kernel_w = as_count(static_cast<float>(g[3]), name);
  m.stride = as_count(static_cast<float>(g[4]), name);
  m.padding = as_count(static_cast<float>(g[5]), name);
  m.groups = as_count(static_cast<float>(g[6]), name);
  if (m.stride == 0 || m.groups == 0 || m.kernel_h == 0 || m.kernel_w == 0 ||
      in_h + 2 * m.padding < m.kernel_h || in_w + 2 * m.padding < m.kernel_w ||
      m.in_channels % m.groups || m.out_channels % m.groups)
    throw FormatError(name + ": bad geometry");
  m.in_h = in_h;
  m.in_w = in_w;
  m.out_h = (in_h + 2 * m.padding - m.kernel_h) / m.stride + 1;
  m.out_w = (in_w + 2 * m.padding - m.kernel_w) / m.stride + 1;
  HingedLayer l;
  l.name = name;
  l.meta = m;
  l.weight = tm.matrix(name + ".W");
  if (tm.find(name + ".A")) l.hinge = tm.matrix(name + ".A");
  if (tm.find(name + ".b")) l.bias = tm.vec(name + ".b", m.out_channels);
  try {
    check_layer(l);
  } catch (const DimensionError& e) {
    throw FormatError(e.what());
  }
  return l;
}

}  // namespace detail

/// Flattens a network into named tensors. Pass `modes` for compacted models.
inline std::vector<Tensor> to_tensors(const Network& net,
                                      const std::vector<LayerMode>* modes = nullptr) {
  std::vector<Tensor> out;
  out.push_back(f32_tensor("net.input", {3},
                           {static_cast<float>(net.input.channels),
                            static_cast<float>(net.input.height),
                            static_cast<float>(net.input.width)}));
  std::size_t mode_pos = 0;
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const Block& b = net.blocks[i];
    out.push_back(f32_tensor("block" + std::to_string(i) + ".kind", {2},
                             {static_cast<float>(b.kind), static_cast<float>(b.cardinality)}));
    for (std::size_t li = 0; li < b.layers.size(); ++li)
      detail::put_layer(out, b, li, b.layers[li], modes, mode_pos);
    if (b.shortcut) detail::put_layer(out, b, 0, *b.shortcut, modes, mode_pos);
  }
  out.push_back(detail::matrix_tensor("head.W", net.head.weight));
  out.push_back(f32_tensor("head.b", {net.head.bias.size()}, detail::to_f32(net.head.bias)));
  return out;
}

inline LoadedNetwork from_tensors(const std::vector<Tensor>& tensors) {
  const detail::TensorMap tm(tensors);
  LoadedNetwork ln;
  Network& net = ln.net;
  const auto in = tm.vec("net.input", 3);
  net.input = {detail::as_count(static_cast<float>(in[0]), "net.input"),
               detail::as_count(static_cast<float>(in[1]), "net.input"),
               detail::as_count(static_cast<float>(in[2]), "net.input")};
  std::size_t c = net.input.channels, h = net.input.height, w = net.input.width;
  for (std::size_t i = 0;; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    if (!tm.find(p + "kind")) break;
    const auto kind = tm.vec(p + "kind", 2);
    const auto k = detail::as_count(static_cast<float>(kind[0]), p + "kind");
    if (k > static_cast<std::size_t>(BlockKind::grouped_bottleneck))
      throw FormatError(p + "kind: unknown block kind");
    Block b;
    b.kind = static_cast<BlockKind>(k);
    b.cardinality = detail::as_count(static_cast<float>(kind[1]), p + "kind");
    std::size_t lh = h, lw = w;
    for (const auto& role : detail::layer_roles(b.kind)) {
      HingedLayer l = detail::get_layer(tm, p + role, lh, lw);
      lh = l.meta.out_h;
      lw = l.meta.out_w;
      b.layers.push_back(std::move(l));
    }
    if (tm.find(p + "shortcut.W")) b.shortcut = detail::get_layer(tm, p + "shortcut", h, w);
    for (std::size_t li = 0; li < b.layers.size(); ++li) {
      const std::size_t want = li == 0 ? c : b.layers[li - 1].meta.out_channels;
      if (b.layers[li].meta.in_channels != want) throw FormatError(b.layers[li].name + ": channel chain");
    }
    if (b.residual()) {
      const auto& o = b.out_meta();
      const std::size_t skip_c = b.shortcut ? b.shortcut->meta.out_channels : c;
      const std::size_t skip_h = b.shortcut ? b.shortcut->meta.out_h : h;
      if (skip_c != o.out_channels || skip_h != o.out_h)
        throw FormatError(p + ": skip connection shape");
    }

    // Targets: the configurable scheme is stored with the first target.
    const std::vector<std::string> first_names = {p + "conv.A", p + "conv1.A", p + "lead.W",
                                                  p + "lead+" + p + "end"};
    std::optional<SchemeKind> kind0;
    for (const auto& n : first_names)
      if (const Tensor* t = tm.find(n + ".scheme")) {
        if (t->bytes.size() != 2 || t->bytes[0] > static_cast<std::uint8_t>(SchemeKind::concat))
          throw FormatError(n + ".scheme: bad payload");
        kind0 = static_cast<SchemeKind>(t->bytes[0]);
      }
    if (kind0) {
      try {
        define_targets(b, *kind0);
      } catch (const std::exception& e) {
        throw FormatError(p + ": " + e.what());
      }
      for (auto& t : b.targets) {
        const Tensor& m = tm.at(t.name + ".mask");
        if (m.bytes.size() != t.alive.size()) throw FormatError(t.name + ".mask: group count");
        for (std::size_t g = 0; g < m.bytes.size(); ++g) t.alive[g] = m.bytes[g] ? 1 : 0;
        apply_target_mask(b, t);
      }
    }
    for (const auto& l : b.layers)
      if (const Tensor* t = tm.find(l.name + ".mode")) {
        if (t->bytes.size() != 1 || t->bytes[0] > 2) throw FormatError(l.name + ".mode: bad payload");
        ln.modes.push_back(static_cast<LayerMode>(t->bytes[0]));
      }
    if (b.shortcut)
      if (const Tensor* t = tm.find(b.shortcut->name + ".mode"))
        ln.modes.push_back(static_cast<LayerMode>(t->bytes.at(0)));
    c = b.out_meta().out_channels;
    h = b.out_meta().out_h;
    w = b.out_meta().out_w;
    net.blocks.push_back(std::move(b));
  }
  if (net.blocks.empty()) throw FormatError("checkpoint holds no blocks");
  net.head.weight = tm.matrix("head.W");
  if (net.head.weight.rows() != c) throw FormatError("head.W: input width");
  net.head.bias = tm.vec("head.b", net.head.weight.cols());
  return ln;
}

inline void save_network(const std::string& path, const Network& net,
                         const std::vector<LayerMode>* modes = nullptr) {
  write_hngw(path, to_tensors(net, modes));
}

inline LoadedNetwork load_network(const std::string& path) { return from_tensors(read_hngw(path)); }

/// Rounds every parameter to f32, as a save/load round trip would.
inline Network round_to_f32(const Network& net) { return from_tensors(to_tensors(net)).net; }

}  // namespace hinge
