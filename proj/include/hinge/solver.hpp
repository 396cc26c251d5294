// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "hinge/cost_model.hpp"
#include "hinge/dataset.hpp"
#include "hinge/losses.hpp"
#include "hinge/network.hpp"
#include "hinge/nn.hpp"
#include "hinge/regularizers.hpp"
#include "hinge/train.hpp"

namespace hinge {

struct CompressionConfig {
  double target_ratio = 0.5;
  double stop_margin = 0.1;
  double nullify_threshold = 0.005;
  RegularizerSpec regularizer{};
  /// Learning rate of the sparse matrices.
  double eta = 0.1;
  /// SGD learning rate of the other weights relative to eta.
  double lr_ratio = 0.01;
  /// Exponent of the gradient ratio in the learning-rate adjustment.
  double m = 1.35;
  double weight_decay = 1e-4;
  double anneal_decay = 0.5;
  /// Negative selects 2 × nullify_threshold.
  double anneal_trigger = -1.0;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 32;
  double search_criterion = 0.005;
  std::size_t search_max_iter = 200;

  double trigger() const { return anneal_trigger < 0.0 ? 2.0 * nullify_threshold : anneal_trigger; }
};

inline void validate(const CompressionConfig& c) {
  validate(c.regularizer);
  if (!(c.target_ratio > 0.0 && c.target_ratio < 1.0))
    throw ParameterError("target_ratio must lie in (0, 1)");
  if (!(c.stop_margin > 0.0)) throw ParameterError("stop_margin must be > 0");
  if (!(c.nullify_threshold >= 0.0)) throw ParameterError("nullify_threshold must be >= 0");
  if (!(c.eta >= 0.0) || !(c.lr_ratio >= 0.0)) throw ParameterError("learning rates must be >= 0");
  if (!(c.weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
  if (!(c.anneal_decay > 0.0 && c.anneal_decay <= 1.0))
    throw ParameterError("anneal_decay must lie in (0, 1]");
  if (c.batch_size == 0) throw ParameterError("batch_size must be > 0");
  if (!(c.search_criterion > 0.0)) throw ParameterError("search_criterion must be > 0");
}

/// A (block, target) pair; targets are visited in this flattened order.
struct TargetIndex {
  std::size_t block = 0;
  std::size_t target = 0;
};

inline std::vector<TargetIndex> target_indices(const Network& net) {
  std::vector<TargetIndex> out;
  for (std::size_t b = 0; b < net.blocks.size(); ++b)
    for (std::size_t t = 0; t < net.blocks[b].targets.size(); ++t) out.push_back({b, t});
  return out;
}

struct CompressionState {
  std::size_t epoch = 0;
  double gamma_c = 1.0;
  std::vector<double> base_lambda;   // per target, after annealing
  std::vector<double> layer_lambda;  // per target, balanced
  std::vector<double> lr;            // per target
  std::size_t anneal_count = 0;
  std::vector<std::vector<double>> rho_history;  // per epoch, per basic block
  std::vector<double> gamma_history;
  std::vector<std::vector<double>> lambda_history;  // base lambda per epoch
  bool converged = false;
};

// ---------------------------------------------------------------------------
// Single steps.

inline void sgd_step(std::span<double> w, std::span<const double> grad, double eta_s, double mu) {
  if (w.size() != grad.size())
    throw DimensionError("sgd_step: " + std::to_string(w.size()) + " vs " +
                         std::to_string(grad.size()));
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta_s * (grad[i] + mu * w[i]);
}

inline Matrix sgd_step_W(const Matrix& w, const Matrix& grad, double eta_s, double mu) {
  if (w.rows() != grad.rows() || w.cols() != grad.cols())
    throw DimensionError("sgd_step_W: " + shape_str(w) + " vs " + shape_str(grad));
  Matrix out = w;
  sgd_step(out.data(), grad.data(), eta_s, mu);
  return out;
}

/// Gradient step on the sparse matrices of one target followed by the group
/// prox with step lambda_l · eta. Dead groups stay zero.
inline void prox_step(std::span<Matrix* const> mats, std::span<const Matrix* const> grads,
                      const GroupScheme& scheme, const Mask& alive, const RegularizerSpec& spec,
                      double lambda_l, double eta) {
  if (mats.size() != grads.size()) throw DimensionError("prox_step: slot count");
  for (std::size_t k = 0; k < mats.size(); ++k) {
    Matrix& a = *mats[k];
    const Matrix& g = *grads[k];
    if (a.rows() != g.rows() || a.cols() != g.cols())
      throw DimensionError("prox_step: " + shape_str(a) + " vs " + shape_str(g));
    for (std::size_t i = 0; i < a.data().size(); ++i) {
      if (!std::isfinite(g.data()[i])) throw NumericError("prox_step: non-finite gradient");
      a.data()[i] -= eta * g.data()[i];
    }
  }
  if (!alive.empty()) apply_mask(mats, scheme, alive);
  prox_inplace(mats, scheme, spec, lambda_l * eta);
  if (!alive.empty()) apply_mask(mats, scheme, alive);
}

inline Matrix prox_step_A(const Matrix& a, const Matrix& grad, const GroupScheme& scheme,
                          const Mask& alive, const RegularizerSpec& spec, double lambda_l,
                          double eta) {
  Matrix out = a;
  Matrix* m[] = {&out};
  const Matrix* g[] = {&grad};
  prox_step(m, g, scheme, alive, spec, lambda_l, eta);
  return out;
}

struct LrAdjustment {
  double rho = 1.0;
  double lr_first = 0.0;
  double lr_second = 0.0;
  bool rho_updated = false;
};

/// Learning rates of the two sparse matrices of a basic block from the mean
/// group-gradient norms of each. A zero denominator keeps `previous_rho`.
inline LrAdjustment adjust_learning_rates(double mean_grad_first, double mean_grad_second,
                                          double eta, double m, double previous_rho = 1.0) {
  LrAdjustment r;
  if (mean_grad_second > 0.0 && std::isfinite(mean_grad_first) && mean_grad_first > 0.0) {
    r.rho = mean_grad_first / mean_grad_second;
    r.rho_updated = true;
  } else {
    r.rho = previous_rho;
  }
  r.lr_first = eta / std::pow(r.rho, m);
  r.lr_second = eta;
  return r;
}

inline double balance_lambda(double mean_group_norm, double base_lambda) {
  return base_lambda * mean_group_norm;
}

inline double balance_lambda(const GroupStats& stats, double base_lambda) {
  return balance_lambda(stats.mean_norm, base_lambda);
}

/// Returns the annealed base lambda; `annealed` reports whether decay fired.
inline double anneal(double base_lambda, double mean_alive_norm, double trigger, double decay,
                     bool* annealed = nullptr) {
  const bool fire = mean_alive_norm < trigger;
  if (annealed) *annealed = fire;
  return fire ? base_lambda * decay : base_lambda;
}

// ---------------------------------------------------------------------------
// Epoch loop.

namespace detail {

inline GroupStats target_stats(const Network& net, TargetIndex ti) {
  const Block& b = net.blocks[ti.block];
  const SparseTarget& t = b.targets[ti.target];
  return group_stats(target_matrices(b, t), t.scheme, t.alive);
}

inline std::vector<const Matrix*> target_grads(const SparseTarget& t,
                                               const std::vector<LayerGrad>& g) {
  std::vector<const Matrix*> out;
  for (const auto& r : t.slots) out.push_back(r.hinge ? &g[r.layer].hinge : &g[r.layer].weight);
  return out;
}

/// Mean ℓ2 norm of the gradient over the alive groups of a target.
inline double mean_group_grad(const SparseTarget& t, const std::vector<LayerGrad>& g) {
  const auto grads = target_grads(t, g);
  return group_stats(grads, t.scheme, t.alive).mean_norm;
}

/// Index pairs (flattened target ids) of the two sparse matrices of every
/// basic block.
inline std::vector<std::pair<std::size_t, std::size_t>> basic_pairs(
    const Network& net, const std::vector<TargetIndex>& ids) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
    const Block& b = net.blocks[ids[k].block];
    if (b.kind != BlockKind::basic || ids[k].target != 0) continue;
    out.emplace_back(k, k + 1);
  }
  return out;
}

}  // namespace detail

/// Masks every alive group with norm strictly below `threshold`, keeping the
/// largest group of each target alive.
inline void nullify(Network& net, double threshold) {
  set_masks(net, threshold_masks(net, threshold));
}

/// Proximal-gradient compression of a hinged network. Each epoch: balance
/// λ per target, then per batch an SGD step on the ordinary weights and a
/// prox step on the sparse matrices; at the end, nullify below the
/// threshold, recompute γ_c, adjust learning rates and anneal. Progress is
/// written as one JSON object per epoch to `log` when given.
inline CompressionState run_compression(Network& net, const Split& data,
                                        const CompressionConfig& cfg, std::uint64_t seed,
                                        std::ostream* log = nullptr) {
  validate(cfg);
  if (!is_hinged(net)) throw LegalityError("run_compression: network has no sparse targets");
  if (data.size() == 0) throw ParameterError("run_compression: empty dataset");
  const auto ids = target_indices(net);
  const auto pairs = detail::basic_pairs(net, ids);
  CompressionState st;
  st.base_lambda.assign(ids.size(), cfg.regularizer.lambda);
  st.layer_lambda.assign(ids.size(), 0.0);
  st.lr.assign(ids.size(), cfg.eta);
  std::vector<double> rho(pairs.size(), 1.0);
  const double eta_s = cfg.eta * cfg.lr_ratio;
  apply_all_masks(net);
  st.gamma_c = cost_for_masks(net, current_masks(net)).gamma;

  do {
    for (std::size_t k = 0; k < ids.size(); ++k)
      st.layer_lambda[k] = balance_lambda(detail::target_stats(net, ids[k]), st.base_lambda[k]);
    std::vector<double> grad_acc(ids.size(), 0.0);

    for (const auto& batch : make_batches(data.size(), cfg.batch_size, seed, st.epoch)) {
      const Matrix x = data.batch(batch);
      const auto y = data.batch_labels(batch);
      ForwardCache cache;
      const Matrix logits = forward(net, x, batch.size(), &cache);
      const LossResult l = cross_entropy(logits, y);
      if (!std::isfinite(l.loss)) throw NumericError("run_compression: loss diverged");
      Gradients g = backward(net, cache, l.grad);

      const auto params = param_views(net);
      const auto grads = grad_views(net, g);
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].info.role == ParamRole::sparse) continue;
        const double mu = params[p].info.role == ParamRole::bias ? 0.0 : cfg.weight_decay;
        sgd_step(params[p].values, grads[p], eta_s, mu);
      }
      for (std::size_t k = 0; k < ids.size(); ++k) {
        Block& b = net.blocks[ids[k].block];
        const SparseTarget& t = b.targets[ids[k].target];
        const auto& gl = g.blocks[ids[k].block];
        grad_acc[k] += detail::mean_group_grad(t, gl);
        prox_step(target_matrices(b, t), detail::target_grads(t, gl), t.scheme, t.alive,
                  cfg.regularizer, st.layer_lambda[k], st.lr[k]);
      }
      apply_all_masks(net);
    }
    ++st.epoch;

    nullify(net, cfg.nullify_threshold);
    st.gamma_c = cost_for_masks(net, current_masks(net)).gamma;
    st.gamma_history.push_back(st.gamma_c);

    auto& rh = st.rho_history.emplace_back();
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [a, b] = pairs[p];
      const auto adj = adjust_learning_rates(grad_acc[a], grad_acc[b], cfg.eta, cfg.m,
                                             rho[p]);
      if (!adj.rho_updated && log)
        *log << nlohmann::json{{"warning", "zero gradient denominator, rho kept"},
                               {"epoch", st.epoch}}
                    .dump()
             << '\n';
      rho[p] = adj.rho;
      st.lr[a] = adj.lr_first;
      st.lr[b] = adj.lr_second;
      rh.push_back(adj.rho);
    }

    std::vector<double> means(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      means[k] = detail::target_stats(net, ids[k]).mean_norm;
      bool fired = false;
      st.base_lambda[k] =
          anneal(st.base_lambda[k], means[k], cfg.trigger(), cfg.anneal_decay, &fired);
      st.anneal_count += fired ? 1 : 0;
    }
    st.lambda_history.push_back(st.base_lambda);

    if (log) {
      *log << nlohmann::json{{"epoch", st.epoch},
                             {"gamma_c", st.gamma_c},
                             {"mean_group_norms", means},
                             {"lambda_l", st.layer_lambda},
                             {"rho", rh}}
                  .dump()
           << '\n';
    }
  } while (st.gamma_c - cfg.target_ratio > cfg.stop_margin && st.epoch < cfg.max_epochs);

  st.converged = st.gamma_c - cfg.target_ratio <= cfg.stop_margin;
  return st;
}

// ---------------------------------------------------------------------------
// Threshold search.

struct SearchStep {
  double threshold = 0.0;
  double gamma = 0.0;
};

struct SearchResult {
  double threshold = 0.0;
  double gamma = 0.0;
  bool exact = false;
  /// Target lies below the ratio reachable with every target at one group.
  bool below_floor = false;
  double floor = 0.0;
  std::vector<SearchStep> visited;
};

/// Median norm over all alive groups of all targets.
inline double median_alive_norm(const Network& net) {
  std::vector<double> all;
  for (const auto& b : net.blocks)
    for (const auto& t : b.targets) {
      const auto n = group_norms(target_matrices(b, t), t.scheme);
      for (std::size_t g = 0; g < n.size(); ++g)
        if (t.alive[g]) all.push_back(n[g]);
    }
  if (all.empty()) return 0.0;
  const auto mid = all.begin() + static_cast<long>(all.size() / 2);
  std::nth_element(all.begin(), mid, all.end());
  return *mid;
}

/// Threshold just above every alive group norm: γ there is the floor.
inline double floor_threshold(const Network& net) {
  double hi = 0.0;
  for (const auto& b : net.blocks)
    for (const auto& t : b.targets)
      for (double n : group_norms(target_matrices(b, t), t.scheme)) hi = std::max(hi, n);
  return std::nextafter(hi, std::numeric_limits<double>::infinity());
}

/// Step search on the monotone staircase γ = g(T): move T up while γ is
/// above the target and down otherwise, halving the step at every crossing.
/// Returns the visited threshold closest to the target.
inline SearchResult binary_search_threshold(const Network& net, double target, double criterion,
                                            double t0, double s0, std::size_t max_iter = 200) {
  if (!(criterion > 0.0)) throw ParameterError("search criterion must be > 0");
  SearchResult r;
  const double t_floor = floor_threshold(net);
  r.floor = compression_ratio(net, t_floor);
  if (target < r.floor - criterion) {
    r.threshold = t_floor;
    r.gamma = r.floor;
    r.below_floor = true;
    r.visited.push_back({t_floor, r.floor});
    return r;
  }
  double t = std::max(t0, 0.0);
  double s = s0;
  std::optional<double> prev;
  double best_dev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iter; ++it) {
    const double gamma = compression_ratio(net, t);
    r.visited.push_back({t, gamma});
    const double dev = std::abs(gamma - target);
    if (dev < best_dev) {
      best_dev = dev;
      r.threshold = t;
      r.gamma = gamma;
    }
    if (dev <= criterion) {
      r.exact = true;
      return r;
    }
    if (prev && ((*prev >= target) == (gamma < target))) s /= 2.0;
    t = std::max(0.0, gamma > target ? t + s : t - s);
    prev = gamma;
  }
  return r;
}

inline SearchResult binary_search_threshold(const Network& net, double target, double criterion) {
  const double t0 = median_alive_norm(net);
  return binary_search_threshold(net, target, criterion, t0, t0 / 2.0);
}

}  // namespace hinge
