// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hinge/group_scheme.hpp"
#include "hinge/matrix.hpp"
#include "hinge/svd.hpp"

namespace hinge {

/// Geometry of a 2-D convolution. Filters are stored reshaped as a
/// (in_channels/groups * kernel_h * kernel_w) × out_channels matrix whose row
/// index is (channel * kernel_h + ky) * kernel_w + kx.
struct ConvMeta {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;

  std::size_t kernel_area() const noexcept { return kernel_h * kernel_w; }
  std::size_t patch_size() const noexcept { return in_channels / groups * kernel_area(); }
  std::size_t out_pixels() const noexcept { return out_h * out_w; }
  bool operator==(const ConvMeta&) const = default;
};

/// Square kernel, "same" padding.
inline ConvMeta make_conv_meta(std::size_t in_channels, std::size_t out_channels,
                               std::size_t kernel, std::size_t stride, std::size_t in_h,
                               std::size_t in_w, std::size_t groups = 1) {
  if (kernel == 0 || stride == 0 || groups == 0 || in_channels % groups || out_channels % groups)
    throw DimensionError("conv geometry: bad kernel/stride/groups");
  ConvMeta m;
  m.in_channels = in_channels;
  m.out_channels = out_channels;
  m.kernel_h = m.kernel_w = kernel;
  m.stride = stride;
  m.padding = kernel / 2;
  m.groups = groups;
  m.in_h = in_h;
  m.in_w = in_w;
  m.out_h = (in_h + 2 * m.padding - kernel) / stride + 1;
  m.out_w = (in_w + 2 * m.padding - kernel) / stride + 1;
  return m;
}

/// A convolution Z = X·W·A + b. When `hinge` is empty the layer is a plain
/// convolution Z = X·W + b. A compacted decomposition keeps a non-square
/// hinge (rank × out_channels).
struct HingedLayer {
  std::string name;
  ConvMeta meta;
  Matrix weight;
  Matrix hinge;
  std::vector<double> bias;

  bool hinged() const noexcept { return !hinge.empty(); }
  /// Output width of W (the hinge's input side).
  std::size_t inner_width() const noexcept { return weight.cols(); }
};

inline void check_layer(const HingedLayer& l) {
  if (l.weight.rows() != l.meta.patch_size())
    throw DimensionError(l.name + ": W rows " + std::to_string(l.weight.rows()) +
                         " != c*w*h " + std::to_string(l.meta.patch_size()));
  const std::size_t out = l.hinged() ? l.hinge.cols() : l.weight.cols();
  if (out != l.meta.out_channels)
    throw DimensionError(l.name + ": output width " + std::to_string(out) +
                         " != out_channels " + std::to_string(l.meta.out_channels));
  if (l.hinged() && l.hinge.rows() != l.weight.cols())
    throw DimensionError(l.name + ": hinge " + shape_str(l.hinge) + " after W " +
                         shape_str(l.weight));
  if (!l.bias.empty() && l.bias.size() != l.meta.out_channels)
    throw DimensionError(l.name + ": bias length mismatch");
}

enum class HingeInit : std::uint8_t { identity, svd };

/// Appends a sparsity-inducing n×n matrix after W.
///
/// identity: (W, I). svd: W = U·S·Vᵀ becomes (U, S·Vᵀ); the stored filters
/// then have unit norm. When W has fewer rows than columns the thin factors
/// are zero-padded to keep the hinge square; the padded filters are zero.
inline HingedLayer attach(const Matrix& weight, const ConvMeta& meta, HingeInit init,
                          std::string name = {}, std::vector<double> bias = {}) {
  if (weight.rows() != meta.patch_size() || weight.cols() != meta.out_channels)
    throw DimensionError("attach: W " + shape_str(weight) + " does not match conv geometry");
  const std::size_t n = weight.cols();
  HingedLayer out{std::move(name), meta, {}, {}, std::move(bias)};
  if (init == HingeInit::identity) {
    out.weight = weight;
    out.hinge = Matrix::identity(n);
  } else {
    const SvdResult s = svd(weight);
    const std::size_t k = s.singular_values.size();
    out.weight = Matrix(weight.rows(), n);
    out.hinge = Matrix(n, n);
    for (std::size_t r = 0; r < weight.rows(); ++r)
      for (std::size_t c = 0; c < k; ++c) out.weight(r, c) = s.u(r, c);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < n; ++c) out.hinge(r, c) = s.singular_values[r] * s.vt(r, c);
  }
  check_layer(out);
  return out;
}

/// Where a sparsity-inducing matrix sits inside its block.
enum class Position : std::uint8_t {
  plain,
  first_in_basic,
  second_in_basic,
  leading_1x1,
  ending_1x1,
  grouped,
};

inline const char* to_string(Position p) {
  switch (p) {
    case Position::plain: return "plain";
    case Position::first_in_basic: return "first-in-basic-block";
    case Position::second_in_basic: return "second-in-basic-block";
    case Position::leading_1x1: return "leading-1x1";
    case Position::ending_1x1: return "ending-1x1";
    case Position::grouped: return "grouped";
  }
  return "?";
}

/// Group scheme for a single-matrix position. Hinged positions group the
/// hinge A; 1×1 positions of a bottleneck group the conv's own W.
///
/// The second matrix of a basic block may only use rows: its output feeds the
/// skip connection. The first defaults to rows.
inline GroupScheme make_scheme(const HingedLayer& layer, Position position,
                               std::optional<SchemeKind> preference = std::nullopt) {
  switch (position) {
    case Position::second_in_basic:
      if (preference && *preference != SchemeKind::rows)
        throw LegalityError(layer.name + ": second matrix of a basic block must use row groups");
      [[fallthrough]];
    case Position::first_in_basic:
    case Position::plain: {
      if (!layer.hinged()) throw LegalityError(layer.name + ": position needs a hinged layer");
      const SchemeKind kind = preference.value_or(SchemeKind::rows);
      if (kind == SchemeKind::concat) throw LegalityError("concat groups need a grouped block");
      return kind == SchemeKind::columns ? column_scheme(layer.hinge.rows(), layer.hinge.cols())
                                         : row_scheme(layer.hinge.rows(), layer.hinge.cols());
    }
    case Position::leading_1x1:
      if (preference && *preference != SchemeKind::columns)
        throw LegalityError(layer.name + ": leading 1x1 selects output channels (columns)");
      return column_scheme(layer.weight.rows(), layer.weight.cols());
    case Position::ending_1x1:
      if (preference && *preference != SchemeKind::rows)
        throw LegalityError(layer.name + ": ending 1x1 selects input channels (rows)");
      return row_scheme(layer.weight.rows(), layer.weight.cols());
    case Position::grouped:
      throw LegalityError("grouped position needs both 1x1 layers; use make_grouped_scheme");
  }
  throw LegalityError("unknown position");
}

/// Concatenated groups over the leading and ending 1×1 convolutions of a
/// grouped bottleneck, one group per cardinal group of the middle conv.
inline GroupScheme make_grouped_scheme(const HingedLayer& lead, const HingedLayer& end,
                                       std::size_t cardinality) {
  const std::size_t mid = lead.weight.cols();
  if (cardinality == 0 || mid % cardinality || end.weight.rows() != mid)
    throw DimensionError("grouped scheme: lead " + shape_str(lead.weight) + ", end " +
                         shape_str(end.weight) + ", cardinality " + std::to_string(cardinality));
  return concat_scheme(lead.weight.rows(), end.weight.cols(), cardinality, mid / cardinality);
}

struct GroupStats {
  std::vector<double> norms;  // all groups
  double mean_norm = 0.0;     // over alive groups
  std::size_t alive_count = 0;
};

inline GroupStats group_stats(std::span<const Matrix* const> mats, const GroupScheme& scheme,
                              const Mask& alive) {
  GroupStats s;
  s.norms = group_norms(mats, scheme);
  double sum = 0.0;
  for (std::size_t g = 0; g < s.norms.size(); ++g) {
    if (!alive.empty() && !alive[g]) continue;
    sum += s.norms[g];
    ++s.alive_count;
  }
  s.mean_norm = s.alive_count ? sum / static_cast<double>(s.alive_count) : 0.0;
  return s;
}

inline GroupStats group_stats(const Matrix& a, const GroupScheme& scheme, const Mask& alive = {}) {
  const Matrix* m[] = {&a};
  return group_stats(m, scheme, alive);
}

}  // namespace hinge
