// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "hinge/dataset.hpp"
#include "hinge/losses.hpp"
#include "hinge/network.hpp"
#include "hinge/nn.hpp"

namespace hinge {

struct TrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::size_t> milestones;  // epochs at which lr *= lr_decay
  double lr_decay = 0.1;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
};

/// Either plain cross-entropy or distillation against precomputed teacher
/// logits (one row per training sample).
struct LossSpec {
  std::optional<DistillConfig> distill;
  const Matrix* teacher_logits = nullptr;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

inline std::size_t count_correct(const Matrix& logits, std::span<const int> labels) {
  std::size_t ok = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const auto best = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    ok += best == labels[r] ? 1 : 0;
  }
  return ok;
}

/// Shuffled mini-batches; the permutation depends only on (seed, epoch).
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 1000003ULL + epoch);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<long>(i),
                     order.begin() + static_cast<long>(std::min(n, i + batch_size)));
  return out;
}

inline LossResult batch_loss(const Matrix& logits, std::span<const int> labels,
                             std::span<const std::size_t> ids, const LossSpec& loss) {
  if (!loss.distill) return cross_entropy(logits, labels);
  if (!loss.teacher_logits) throw std::logic_error("distillation needs teacher logits");
  const Matrix teacher = select_rows(*loss.teacher_logits, ids);
  return distill_loss(logits, teacher, labels, *loss.distill);
}

/// Mini-batch SGD with momentum. Weight decay applies to weights, not biases.
/// Group masks of a hinged network are re-applied after every step.
inline TrainResult train(Network& net, const Split& data, const TrainConfig& cfg,
                         const LossSpec& loss, std::uint64_t seed) {
  if (cfg.batch_size == 0) throw ParameterError("batch_size must be > 0");
  TrainResult result;
  Gradients velocity = zero_gradients(net);
  double lr = cfg.lr;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (std::find(cfg.milestones.begin(), cfg.milestones.end(), epoch) != cfg.milestones.end())
      lr *= cfg.lr_decay;
    double total = 0.0;
    std::size_t correct = 0;
    for (const auto& ids : make_batches(data.size(), cfg.batch_size, seed, epoch)) {
      const Matrix x = data.batch(ids);
      const auto y = data.batch_labels(ids);
      ForwardCache cache;
      const Matrix logits = forward(net, x, ids.size(), &cache);
      const LossResult l = batch_loss(logits, y, ids, loss);
      if (!std::isfinite(l.loss)) throw NumericError("train: loss diverged");
      total += l.loss * static_cast<double>(ids.size());
      correct += count_correct(logits, y);
      Gradients g = backward(net, cache, l.grad);
      const auto params = param_views(net);
      const auto grads = grad_views(net, g);
      const auto vels = grad_views(net, velocity);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const auto p = params[k].values;
        const double wd = params[k].info.role == ParamRole::bias ? 0.0 : cfg.weight_decay;
        for (std::size_t i = 0; i < p.size(); ++i) {
          vels[k][i] = cfg.momentum * vels[k][i] + grads[k][i] + wd * p[i];
          p[i] -= lr * vels[k][i];
        }
      }
      apply_all_masks(net);
    }
    result.history.push_back({epoch + 1, total / static_cast<double>(data.size()),
                              static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  return result;
}

/// Logits for every sample of a split, in order.
inline Matrix predict_logits(const Network& net, const Split& data, std::size_t batch_size = 64) {
  Matrix out(data.size(), net.classes());
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    ids.clear();
    for (std::size_t j = i; j < std::min(data.size(), i + batch_size); ++j) ids.push_back(j);
    const Matrix logits = forward(net, data.batch(ids), ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r)
      std::copy(logits.row(r).begin(), logits.row(r).end(), out.row(ids[r]).begin());
  }
  return out;
}

/// Top-1 accuracy and mean cross-entropy over a split.
inline EvalResult evaluate(const Network& net, const Split& data) {
  const Matrix logits = predict_logits(net, data);
  const LossResult l = cross_entropy(logits, data.labels);
  return {static_cast<double>(count_correct(logits, data.labels)) / static_cast<double>(data.size()),
          l.loss};
}

}  // namespace hinge
