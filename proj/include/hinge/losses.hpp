// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "hinge/matrix.hpp"

namespace hinge {

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // dL/dlogits, batch-averaged
};

/// Row-wise softmax of logits / temperature.
inline Matrix softmax(const Matrix& logits, double temperature = 1.0) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const double mx = *std::max_element(z.begin(), z.end()) / temperature;
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += (p(r, k) = std::exp(z[k] / temperature - mx));
    for (std::size_t k = 0; k < z.size(); ++k) p(r, k) /= s;
  }
  return p;
}

inline Matrix log_softmax(const Matrix& logits, double temperature = 1.0) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const double mx = *std::max_element(z.begin(), z.end()) / temperature;
    double s = 0.0;
    for (double v : z) s += std::exp(v / temperature - mx);
    const double lse = mx + std::log(s);
    for (std::size_t k = 0; k < z.size(); ++k) out(r, k) = z[k] / temperature - lse;
  }
  return out;
}

/// Mean negative log-likelihood of the labels.
inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw DimensionError("cross_entropy: label count mismatch");
  const std::size_t n = logits.rows();
  const Matrix lp = log_softmax(logits);
  LossResult out{0.0, softmax(logits)};
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw DimensionError("cross_entropy: label out of range");
    out.loss -= lp(r, static_cast<std::size_t>(y));
    out.grad(r, static_cast<std::size_t>(y)) -= 1.0;
  }
  out.loss /= static_cast<double>(n);
  for (auto& v : out.grad.data()) v /= static_cast<double>(n);
  return out;
}

struct DistillConfig {
  double balance = 0.4;      // weight of the soft term
  double temperature = 4.0;
};

inline void validate(const DistillConfig& c) {
  if (!(c.balance >= 0.0 && c.balance <= 1.0)) throw ParameterError("distill balance must be in [0, 1]");
  if (!(c.temperature > 0.0)) throw ParameterError("distill temperature must be > 0");
}

/// (1 - a) * CE(y, softmax(zs)) + 2 a T² * CE(softmax(zt / T), softmax(zs / T)),
/// where the soft term uses the teacher distribution as the target. Teacher
/// logits are constants.
inline LossResult distill_loss(const Matrix& student, const Matrix& teacher,
                               std::span<const int> labels, const DistillConfig& cfg) {
  if (student.rows() != teacher.rows() || student.cols() != teacher.cols())
    throw DimensionError("distill_loss: student " + shape_str(student) + " vs teacher " +
                         shape_str(teacher));
  LossResult hard = cross_entropy(student, labels);
  const double a = cfg.balance, t = cfg.temperature;
  LossResult out{(1.0 - a) * hard.loss, hard.grad};
  for (auto& v : out.grad.data()) v *= (1.0 - a);
  if (a == 0.0) return out;
  const double w = 2.0 * a * t * t;
  const std::size_t n = student.rows();
  const Matrix ps = softmax(student, t);
  const Matrix pt = softmax(teacher, t);
  const Matrix lps = log_softmax(student, t);
  double soft = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < student.cols(); ++k) {
      soft -= pt(r, k) * lps(r, k);
      out.grad(r, k) += w / t * (ps(r, k) - pt(r, k)) / static_cast<double>(n);
    }
  out.loss += w * soft / static_cast<double>(n);
  return out;
}

}  // namespace hinge
