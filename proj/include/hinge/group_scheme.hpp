// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hinge/matrix.hpp"

namespace hinge {

enum class SchemeKind : std::uint8_t { columns, rows, concat };

inline const char* to_string(SchemeKind k) {
  switch (k) {
    case SchemeKind::columns: return "columns";
    case SchemeKind::rows: return "rows";
    case SchemeKind::concat: return "concat";
  }
  return "?";
}

/// One entry of a group: matrix slot plus (row, col) inside that matrix.
struct GroupEntry {
  std::uint32_t slot = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool operator==(const GroupEntry&) const = default;
};

/// Partition of (part of) one or more matrices into disjoint groups.
/// Single-matrix schemes use slot 0 only; concat schemes span two slots.
struct GroupScheme {
  SchemeKind kind = SchemeKind::columns;
  std::vector<std::vector<GroupEntry>> groups;
  std::size_t slot_count = 1;

  std::size_t group_count() const noexcept { return groups.size(); }
};

/// Per-group liveness; 1 = alive, 0 = nullified.
using Mask = std::vector<std::uint8_t>;

inline GroupScheme column_scheme(std::size_t rows, std::size_t cols, std::uint32_t slot = 0) {
  GroupScheme s{SchemeKind::columns, {}, slot + 1u};
  s.groups.resize(cols);
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r)
      s.groups[c].push_back({slot, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
  return s;
}

inline GroupScheme row_scheme(std::size_t rows, std::size_t cols, std::uint32_t slot = 0) {
  GroupScheme s{SchemeKind::rows, {}, slot + 1u};
  s.groups.resize(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      s.groups[r].push_back({slot, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
  return s;
}

/// Joint groups for a grouped bottleneck: group k holds the output-side
/// columns [k*width, (k+1)*width) of the leading matrix (slot 0, shape
/// in × cardinality*width) and the input-side rows of the same range of the
/// ending matrix (slot 1, shape cardinality*width × out).
inline GroupScheme concat_scheme(std::size_t lead_rows, std::size_t end_cols,
                                 std::size_t cardinality, std::size_t width) {
  GroupScheme s{SchemeKind::concat, {}, 2};
  s.groups.resize(cardinality);
  for (std::size_t k = 0; k < cardinality; ++k) {
    auto& g = s.groups[k];
    for (std::size_t c = k * width; c < (k + 1) * width; ++c)
      for (std::size_t r = 0; r < lead_rows; ++r)
        g.push_back({0, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
    for (std::size_t r = k * width; r < (k + 1) * width; ++r)
      for (std::size_t c = 0; c < end_cols; ++c)
        g.push_back({1, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
  }
  return s;
}

/// Checks bounds and disjointness against the given matrices.
inline void validate_scheme(std::span<const Matrix* const> mats, const GroupScheme& scheme) {
  if (mats.size() < scheme.slot_count)
    throw DimensionError("group scheme needs " + std::to_string(scheme.slot_count) +
                         " matrices, got " + std::to_string(mats.size()));
  std::vector<std::vector<std::uint8_t>> seen(mats.size());
  for (std::size_t s = 0; s < mats.size(); ++s) seen[s].assign(mats[s]->size(), 0);
  for (const auto& g : scheme.groups) {
    for (const auto& e : g) {
      if (e.slot >= mats.size() || e.row >= mats[e.slot]->rows() || e.col >= mats[e.slot]->cols())
        throw DimensionError("group scheme entry out of range for " + shape_str(*mats[e.slot]));
      auto& flag = seen[e.slot][e.row * mats[e.slot]->cols() + e.col];
      if (flag) throw DimensionError("group scheme entries overlap");
      flag = 1;
    }
  }
}

inline std::vector<double> group_norms(std::span<const Matrix* const> mats,
                                       const GroupScheme& scheme) {
  validate_scheme(mats, scheme);
  std::vector<double> norms(scheme.group_count(), 0.0);
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    double s = 0.0;
    for (const auto& e : scheme.groups[g]) {
      const double v = (*mats[e.slot])(e.row, e.col);
      s += v * v;
    }
    norms[g] = std::sqrt(s);
  }
  return norms;
}

inline std::vector<double> group_norms(const Matrix& a, const GroupScheme& scheme) {
  const Matrix* m[] = {&a};
  return group_norms(m, scheme);
}

/// Multiplies every entry of group g by scales[g].
inline void scale_groups(std::span<Matrix* const> mats, const GroupScheme& scheme,
                         std::span<const double> scales) {
  if (scales.size() != scheme.group_count())
    throw DimensionError("scale_groups: " + std::to_string(scales.size()) + " scales for " +
                         std::to_string(scheme.group_count()) + " groups");
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    if (scales[g] == 1.0) continue;
    for (const auto& e : scheme.groups[g]) (*mats[e.slot])(e.row, e.col) *= scales[g];
  }
}

/// Zeroes every entry of the dead groups.
inline void apply_mask(std::span<Matrix* const> mats, const GroupScheme& scheme, const Mask& alive) {
  if (alive.size() != scheme.group_count())
    throw DimensionError("apply_mask: mask length mismatch");
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    if (alive[g]) continue;
    for (const auto& e : scheme.groups[g]) (*mats[e.slot])(e.row, e.col) = 0.0;
  }
}

inline void apply_mask(Matrix& a, const GroupScheme& scheme, const Mask& alive) {
  Matrix* m[] = {&a};
  apply_mask(m, scheme, alive);
}

inline std::size_t alive_count(const Mask& alive) {
  std::size_t n = 0;
  for (auto a : alive) n += a ? 1 : 0;
  return n;
}

}  // namespace hinge
