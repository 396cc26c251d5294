// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "hinge/hinge_layer.hpp"
#include "hinge/matrix.hpp"
#include "hinge/network.hpp"

// Activations are (batch * H * W) × C matrices, row index (b * H + y) * W + x.
// A convolution unfolds its input into patch rows (im2col) and multiplies by
// the reshaped filter, so conv and hinge share the same matmul path.

namespace hinge {

namespace detail {

inline bool is_pointwise(const ConvMeta& m) {
  return m.kernel_h == 1 && m.kernel_w == 1 && m.stride == 1 && m.padding == 0 && m.groups == 1;
}

}  // namespace detail

/// Patch matrix of one channel group: (batch * out_h * out_w) × patch_size.
inline Matrix im2col(const Matrix& x, std::size_t batch, const ConvMeta& m, std::size_t group = 0) {
  if (x.rows() != batch * m.in_h * m.in_w || x.cols() != m.in_channels)
    throw DimensionError("im2col: input " + shape_str(x) + " vs conv geometry");
  const std::size_t cg = m.in_channels / m.groups;
  const std::size_t c0 = group * cg;
  Matrix cols(batch * m.out_pixels(), m.patch_size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < m.out_h; ++oy)
      for (std::size_t ox = 0; ox < m.out_w; ++ox) {
        double* dst = cols.row((b * m.out_h + oy) * m.out_w + ox).data();
        for (std::size_t ky = 0; ky < m.kernel_h; ++ky) {
          const long iy = static_cast<long>(oy * m.stride + ky) - static_cast<long>(m.padding);
          for (std::size_t kx = 0; kx < m.kernel_w; ++kx) {
            const long ix = static_cast<long>(ox * m.stride + kx) - static_cast<long>(m.padding);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(m.in_h) ||
                ix >= static_cast<long>(m.in_w))
              continue;
            const double* src = x.row((b * m.in_h + iy) * m.in_w + ix).data() + c0;
            for (std::size_t c = 0; c < cg; ++c)
              dst[(c * m.kernel_h + ky) * m.kernel_w + kx] = src[c];
          }
        }
      }
  return cols;
}

/// Adjoint of im2col: scatters patch gradients back into dx.
inline void col2im_add(const Matrix& dcols, std::size_t batch, const ConvMeta& m,
                       std::size_t group, Matrix& dx) {
  const std::size_t cg = m.in_channels / m.groups;
  const std::size_t c0 = group * cg;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < m.out_h; ++oy)
      for (std::size_t ox = 0; ox < m.out_w; ++ox) {
        const double* src = dcols.row((b * m.out_h + oy) * m.out_w + ox).data();
        for (std::size_t ky = 0; ky < m.kernel_h; ++ky) {
          const long iy = static_cast<long>(oy * m.stride + ky) - static_cast<long>(m.padding);
          for (std::size_t kx = 0; kx < m.kernel_w; ++kx) {
            const long ix = static_cast<long>(ox * m.stride + kx) - static_cast<long>(m.padding);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(m.in_h) ||
                ix >= static_cast<long>(m.in_w))
              continue;
            double* dst = dx.row((b * m.in_h + iy) * m.in_w + ix).data() + c0;
            for (std::size_t c = 0; c < cg; ++c)
              dst[c] += src[(c * m.kernel_h + ky) * m.kernel_w + kx];
          }
        }
      }
}

struct LayerCache {
  std::vector<Matrix> cols;  // per channel group
  Matrix inner;              // X·W, kept when the layer is hinged
};

namespace detail {

inline Matrix group_weight(const HingedLayer& l, std::size_t g) {
  const std::size_t og = l.weight.cols() / l.meta.groups;
  std::vector<std::size_t> idx(og);
  for (std::size_t j = 0; j < og; ++j) idx[j] = g * og + j;
  return select_columns(l.weight, idx);
}

}  // namespace detail

/// Z = X·W (·A) + b for one layer.
inline Matrix layer_forward(const HingedLayer& l, const Matrix& x, std::size_t batch,
                            LayerCache* cache) {
  const ConvMeta& m = l.meta;
  Matrix inner;
  std::vector<Matrix> cols(m.groups);
  if (m.groups == 1) {
    cols[0] = detail::is_pointwise(m) ? x : im2col(x, batch, m, 0);
    inner = matmul(cols[0], l.weight);
  } else {
    const std::size_t og = l.weight.cols() / m.groups;
    inner = Matrix(batch * m.out_pixels(), l.weight.cols());
    for (std::size_t g = 0; g < m.groups; ++g) {
      cols[g] = im2col(x, batch, m, g);
      const Matrix part = matmul(cols[g], detail::group_weight(l, g));
      for (std::size_t r = 0; r < part.rows(); ++r)
        std::copy(part.row(r).begin(), part.row(r).end(), inner.row(r).begin() + g * og);
    }
  }
  Matrix z = l.hinged() ? matmul(inner, l.hinge) : inner;
  if (!l.bias.empty())
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += l.bias[c];
  if (cache) {
    cache->cols = std::move(cols);
    if (l.hinged()) cache->inner = std::move(inner);
  }
  return z;
}

/// Accumulates parameter gradients into g and returns dL/dX (empty when
/// need_dx is false).
inline Matrix layer_backward(const HingedLayer& l, const LayerCache& cache, const Matrix& dz,
                             std::size_t batch, LayerGrad& g, bool need_dx) {
  const ConvMeta& m = l.meta;
  if (!g.bias.empty())
    for (std::size_t r = 0; r < dz.rows(); ++r)
      for (std::size_t c = 0; c < dz.cols(); ++c) g.bias[c] += dz(r, c);
  Matrix dinner;
  if (l.hinged()) {
    g.hinge += matmul_tn(cache.inner, dz);
    dinner = matmul_nt(dz, l.hinge);
  }
  const Matrix& di = l.hinged() ? dinner : dz;
  Matrix dx;
  if (need_dx) dx = Matrix(batch * m.in_h * m.in_w, m.in_channels);
  if (m.groups == 1) {
    g.weight += matmul_tn(cache.cols[0], di);
    if (need_dx) {
      Matrix dcols = matmul_nt(di, l.weight);
      if (detail::is_pointwise(m))
        dx = std::move(dcols);
      else
        col2im_add(dcols, batch, m, 0, dx);
    }
  } else {
    const std::size_t og = l.weight.cols() / m.groups;
    for (std::size_t gi = 0; gi < m.groups; ++gi) {
      std::vector<std::size_t> idx(og);
      for (std::size_t j = 0; j < og; ++j) idx[j] = gi * og + j;
      const Matrix dpart = select_columns(di, idx);
      const Matrix gw = matmul_tn(cache.cols[gi], dpart);
      for (std::size_t r = 0; r < gw.rows(); ++r)
        for (std::size_t j = 0; j < og; ++j) g.weight(r, gi * og + j) += gw(r, j);
      if (need_dx) col2im_add(matmul_nt(dpart, detail::group_weight(l, gi)), batch, m, gi, dx);
    }
  }
  return dx;
}

struct BlockCache {
  std::vector<LayerCache> layers;
  std::optional<LayerCache> shortcut;
  std::vector<Matrix> acts;  // post-ReLU output of every layer; last = block output
};

struct ForwardCache {
  std::size_t batch = 0;
  std::vector<Matrix> inputs;  // input of every block
  std::vector<BlockCache> blocks;
  Matrix pooled;
};

namespace detail {

inline void relu_inplace(Matrix& m) {
  for (auto& v : m.data()) v = v > 0.0 ? v : 0.0;
}

inline void relu_backward_inplace(Matrix& d, const Matrix& act) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!(act.data()[i] > 0.0)) d.data()[i] = 0.0;
}

}  // namespace detail

inline Matrix block_forward(const Block& b, const Matrix& x, std::size_t batch, BlockCache* cache) {
  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  c.layers.assign(b.layers.size(), {});
  c.acts.clear();
  Matrix h = x;
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    Matrix z = layer_forward(b.layers[i], h, batch, cache ? &c.layers[i] : nullptr);
    if (i + 1 == b.layers.size() && b.residual()) {
      if (b.shortcut) {
        c.shortcut.emplace();
        z += layer_forward(*b.shortcut, x, batch, cache ? &*c.shortcut : nullptr);
      } else {
        z += x;
      }
    }
    detail::relu_inplace(z);
    h = std::move(z);
    if (cache) c.acts.push_back(h);
  }
  return h;
}

/// Returns dL/dx for the block input.
inline Matrix block_backward(const Block& b, const BlockCache& c, const Matrix& dout,
                             std::size_t batch, std::vector<LayerGrad>& g,
                             std::optional<LayerGrad>& gshort, bool need_dx) {
  Matrix d = dout;
  Matrix dskip;
  for (std::size_t i = b.layers.size(); i-- > 0;) {
    detail::relu_backward_inplace(d, c.acts[i]);
    if (i + 1 == b.layers.size() && b.residual()) {
      if (b.shortcut)
        dskip = layer_backward(*b.shortcut, *c.shortcut, d, batch, *gshort, need_dx);
      else if (need_dx)
        dskip = d;
    }
    d = layer_backward(b.layers[i], c.layers[i], d, batch, g[i], i > 0 || need_dx);
  }
  if (need_dx && b.residual()) d += dskip;
  return d;
}

/// Logits (batch × classes). x is (batch * H * W) × C.
inline Matrix forward(const Network& net, const Matrix& x, std::size_t batch,
                      ForwardCache* cache = nullptr) {
  if (x.rows() != batch * net.input.height * net.input.width || x.cols() != net.input.channels)
    throw DimensionError("forward: input " + shape_str(x) + " does not match input spec");
  if (cache) {
    cache->batch = batch;
    cache->inputs.clear();
    cache->blocks.assign(net.blocks.size(), {});
  }
  Matrix h = x;
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    h = block_forward(net.blocks[i], h, batch, cache ? &cache->blocks[i] : nullptr);
  }
  const std::size_t pixels = h.rows() / batch;
  Matrix pooled(batch, h.cols());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < pixels; ++p) {
      const auto r = h.row(b * pixels + p);
      for (std::size_t c = 0; c < h.cols(); ++c) pooled(b, c) += r[c];
    }
  for (auto& v : pooled.data()) v /= static_cast<double>(pixels);
  Matrix logits = matmul(pooled, net.head.weight);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < logits.cols(); ++k) logits(b, k) += net.head.bias[k];
  require_finite(logits, "forward");
  if (cache) cache->pooled = std::move(pooled);
  return logits;
}

/// Exact reverse-mode gradients of a scalar loss given dL/dlogits.
inline Gradients backward(const Network& net, const ForwardCache& cache, const Matrix& dlogits) {
  if (cache.blocks.size() != net.blocks.size() || cache.pooled.empty())
    throw std::logic_error("backward: forward cache missing or stale");
  const std::size_t batch = cache.batch;
  Gradients g = zero_gradients(net);
  g.head.weight = matmul_tn(cache.pooled, dlogits);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < dlogits.cols(); ++k) g.head.bias[k] += dlogits(b, k);
  const Matrix dpooled = matmul_nt(dlogits, net.head.weight);
  const ConvMeta& last = net.blocks.back().out_meta();
  const std::size_t pixels = last.out_pixels();
  Matrix d(batch * pixels, dpooled.cols());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t c = 0; c < d.cols(); ++c)
        d(b * pixels + p, c) = dpooled(b, c) / static_cast<double>(pixels);
  for (std::size_t i = net.blocks.size(); i-- > 0;)
    d = block_backward(net.blocks[i], cache.blocks[i], d, batch, g.blocks[i], g.shortcuts[i], i > 0);
  return g;
}

}  // namespace hinge
