// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hinge/group_scheme.hpp"
#include "hinge/matrix.hpp"

namespace hinge {

enum class RegularizerKind : std::uint8_t { l1, l_half, l1_minus_2, logsum };

inline const char* to_string(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::l1: return "l1";
    case RegularizerKind::l_half: return "l_half";
    case RegularizerKind::l1_minus_2: return "l1_minus_2";
    case RegularizerKind::logsum: return "logsum";
  }
  return "?";
}

inline RegularizerKind regularizer_from_string(std::string_view s) {
  if (s == "l1") return RegularizerKind::l1;
  if (s == "l_half") return RegularizerKind::l_half;
  if (s == "l1_minus_2") return RegularizerKind::l1_minus_2;
  if (s == "logsum") return RegularizerKind::logsum;
  throw ParameterError("unknown regularizer '" + std::string(s) + "'");
}

/// Default regularization factor per regularizer.
inline double default_lambda(RegularizerKind k) {
  switch (k) {
    case RegularizerKind::l1: return 2e-4;
    case RegularizerKind::l1_minus_2: return 2e-4;
    case RegularizerKind::l_half: return 4e-4;
    case RegularizerKind::logsum: return 9e-5;
  }
  return 2e-4;
}

struct RegularizerSpec {
  RegularizerKind kind = RegularizerKind::l1;
  double lambda = 2e-4;
  /// logsum only. Zero selects 0.5 * sqrt(step) at each prox call.
  double epsilon = 0.0;
};

inline void validate(const RegularizerSpec& spec) {
  if (!(spec.lambda >= 0.0) || !std::isfinite(spec.lambda))
    throw ParameterError("regularizer lambda must be finite and >= 0");
  if (spec.epsilon < 0.0 || !std::isfinite(spec.epsilon))
    throw ParameterError("regularizer epsilon must be finite and >= 0");
}

/// logsum epsilon actually used for a prox with the given step.
inline double logsum_epsilon(const RegularizerSpec& spec, double step) {
  const double eps = spec.epsilon > 0.0 ? spec.epsilon : 0.5 * std::sqrt(step);
  if (!(eps > 0.0) || !(eps < std::sqrt(step)))
    throw ParameterError("logsum epsilon " + std::to_string(eps) +
                         " outside (0, sqrt(step)) for step " + std::to_string(step));
  return eps;
}

// ---------------------------------------------------------------------------
// Scalar closed forms on a group norm. Each returns the group's new norm.

inline double prox_norm_l1(double norm, double step) {
  return norm > step ? norm - step : 0.0;
}

/// Nullification cutoff of the half-thresholding operator.
inline double l_half_cutoff(double step) {
  return std::cbrt(54.0) / 4.0 * std::pow(step, 2.0 / 3.0);
}

inline double prox_norm_l_half(double norm, double step) {
  if (step == 0.0) return norm;
  if (norm <= l_half_cutoff(step)) return 0.0;
  const double phi = std::acos(step / 8.0 * std::pow(norm / 3.0, -1.5));
  return 2.0 / 3.0 * norm * (1.0 + std::cos(2.0 * std::numbers::pi / 3.0 - 2.0 / 3.0 * phi));
}

/// Stationary root of step*log(eps + t) + (t - norm)^2 / 2 on t > 0, or zero
/// when no root exists. When the root exists but the objective is lower at
/// t = 0, zero is returned.
inline double prox_norm_logsum(double norm, double step, double eps) {
  if (step == 0.0) return norm;
  const double c1 = norm - eps;
  const double c2 = c1 * c1 - 4.0 * (step - eps * norm);
  if (c2 <= 0.0) return 0.0;
  const double root = (c1 + std::sqrt(c2)) / 2.0;
  if (root <= 0.0) return 0.0;
  const auto objective = [&](double t) {
    return step * std::log(eps + t) + 0.5 * (t - norm) * (t - norm);
  };
  return objective(root) <= objective(0.0) ? root : 0.0;
}

/// ℓ1−2 couples all groups of a layer through the shrunk-norm vector c.
inline std::vector<double> prox_norms_l1_minus_2(std::span<const double> norms, double step) {
  std::vector<double> out(norms.begin(), norms.end());
  if (step == 0.0) return out;
  double c2 = 0.0;
  for (double n : norms) {
    const double c = n > step ? n - step : 0.0;
    c2 += c * c;
  }
  if (c2 == 0.0)
    throw NumericError("prox_l1_minus_2: every group norm is <= step " + std::to_string(step));
  const double expand = 1.0 + step / std::sqrt(c2);
  for (auto& n : out) n = n > step ? expand * (n - step) : 0.0;
  return out;
}

/// New group norms for any regularizer at the given step (= lambda * eta).
inline std::vector<double> prox_norms(std::span<const double> norms, const RegularizerSpec& spec,
                                      double step) {
  if (!(step >= 0.0) || !std::isfinite(step))
    throw ParameterError("prox step must be finite and >= 0");
  std::vector<double> out(norms.size());
  switch (spec.kind) {
    case RegularizerKind::l1:
      for (std::size_t g = 0; g < norms.size(); ++g) out[g] = prox_norm_l1(norms[g], step);
      break;
    case RegularizerKind::l_half:
      for (std::size_t g = 0; g < norms.size(); ++g) out[g] = prox_norm_l_half(norms[g], step);
      break;
    case RegularizerKind::l1_minus_2:
      out = prox_norms_l1_minus_2(norms, step);
      break;
    case RegularizerKind::logsum: {
      if (step == 0.0) return {norms.begin(), norms.end()};
      const double eps = logsum_epsilon(spec, step);
      for (std::size_t g = 0; g < norms.size(); ++g)
        out[g] = prox_norm_logsum(norms[g], step, eps);
      break;
    }
  }
  return out;
}

/// Applies the group prox in place: each group keeps its direction and takes
/// the new norm. Zero groups stay zero.
inline void prox_inplace(std::span<Matrix* const> mats, const GroupScheme& scheme,
                         const RegularizerSpec& spec, double step) {
  std::vector<const Matrix*> cmats(mats.begin(), mats.end());
  const auto norms = group_norms(cmats, scheme);
  const auto next = prox_norms(norms, spec, step);
  std::vector<double> scales(norms.size());
  for (std::size_t g = 0; g < norms.size(); ++g)
    scales[g] = norms[g] > 0.0 ? next[g] / norms[g] : 0.0;
  scale_groups(mats, scheme, scales);
}

inline Matrix prox(const Matrix& a, const GroupScheme& scheme, const RegularizerSpec& spec,
                   double step) {
  Matrix out = a;
  Matrix* m[] = {&out};
  prox_inplace(m, scheme, spec, step);
  return out;
}

inline Matrix prox_l1(const Matrix& a, const GroupScheme& scheme, double step) {
  return prox(a, scheme, {RegularizerKind::l1, 0.0, 0.0}, step);
}

inline Matrix prox_l_half(const Matrix& a, const GroupScheme& scheme, double step) {
  return prox(a, scheme, {RegularizerKind::l_half, 0.0, 0.0}, step);
}

inline Matrix prox_l1_minus_2(const Matrix& a, const GroupScheme& scheme, double step) {
  return prox(a, scheme, {RegularizerKind::l1_minus_2, 0.0, 0.0}, step);
}

inline Matrix prox_logsum(const Matrix& a, const GroupScheme& scheme, double step,
                          double epsilon) {
  if (step > 0.0 && !(epsilon > 0.0 && epsilon < std::sqrt(step)))
    throw ParameterError("prox_logsum: epsilon must lie in (0, sqrt(step))");
  return prox(a, scheme, {RegularizerKind::logsum, 0.0, epsilon}, step);
}

/// Value of Φ over the group norms. For ℓ1−2 and logsum this is a
/// monitoring quantity only; the prox operators above are authoritative.
inline double regularizer_value(std::span<const double> norms, const RegularizerSpec& spec) {
  double s = 0.0, sq = 0.0;
  switch (spec.kind) {
    case RegularizerKind::l1:
      for (double n : norms) s += n;
      return s;
    case RegularizerKind::l_half:
      for (double n : norms) s += std::sqrt(n);
      return s;
    case RegularizerKind::l1_minus_2:
      for (double n : norms) {
        s += n;
        sq += n * n;
      }
      return s - std::sqrt(sq);
    case RegularizerKind::logsum:
      if (!(spec.epsilon > 0.0)) throw ParameterError("logsum value needs epsilon > 0");
      for (double n : norms) s += std::log1p(n / spec.epsilon);
      return s;
  }
  return s;
}

inline double regularizer_value(const Matrix& a, const GroupScheme& scheme,
                                const RegularizerSpec& spec) {
  return regularizer_value(group_norms(a, scheme), spec);
}

/// Per-unit-step penalty of a single group of norm t, in the normalization
/// under which the closed forms above are exact proxes of
/// step * penalty(t) + (t - x)^2 / 2. The half-thresholding operator solves
/// (t - x)^2 + step * sqrt(t), hence the factor 1/2 for ℓ1/2.
inline double scalar_penalty(RegularizerKind kind, double t, double eps) {
  switch (kind) {
    case RegularizerKind::l1: return t;
    case RegularizerKind::l_half: return 0.5 * std::sqrt(t);
    case RegularizerKind::l1_minus_2: return 0.0;  // t - |t| for a lone group
    case RegularizerKind::logsum: return std::log1p(t / eps);
  }
  return 0.0;
}

/// Brute-force scalar prox: dense grid over [0, 2x + 1] followed by ternary
/// refinement. Independent of the closed forms; used to verify them.
inline double prox_oracle(double group_norm, const RegularizerSpec& spec, double step) {
  if (!(group_norm >= 0.0)) throw ParameterError("prox_oracle: group_norm must be >= 0");
  if (step == 0.0 || spec.kind == RegularizerKind::l1_minus_2) return group_norm;
  const double eps = spec.kind == RegularizerKind::logsum ? logsum_epsilon(spec, step) : 0.0;
  const auto f = [&](double t) {
    const double d = t - group_norm;
    return step * scalar_penalty(spec.kind, t, eps) + 0.5 * d * d;
  };
  constexpr int kGrid = 100000;
  const double hi = 2.0 * group_norm + 1.0;
  const double h = hi / kGrid;
  int best = 0;
  double best_f = f(0.0);
  for (int i = 1; i <= kGrid; ++i) {
    const double v = f(i * h);
    if (v < best_f) {
      best_f = v;
      best = i;
    }
  }
  double lo_t = std::max(0.0, (best - 1) * h);
  double hi_t = std::min(hi, (best + 1) * h);
  while (hi_t - lo_t > 1e-9) {
    const double m1 = lo_t + (hi_t - lo_t) / 3.0;
    const double m2 = hi_t - (hi_t - lo_t) / 3.0;
    if (f(m1) <= f(m2))
      hi_t = m2;
    else
      lo_t = m1;
  }
  const double t = 0.5 * (lo_t + hi_t);
  return f(0.0) <= f(t) ? 0.0 : t;
}

}  // namespace hinge
