// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hinge/compaction.hpp"
#include "hinge/cost_model.hpp"
#include "hinge/losses.hpp"
#include "hinge/network.hpp"
#include "hinge/nn.hpp"
#include "hinge/regularizers.hpp"
#include "hinge/solver.hpp"

namespace hinge {

struct CheckResult {
  std::string name;
  std::size_t cases = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  /// Inputs of the worst failing case, for reproduction.
  std::string failure;
};

inline bool all_passed(const std::vector<CheckResult>& rs) {
  for (const auto& r : rs)
    if (!r.passed) return false;
  return true;
}

namespace detail {

/// Records one case; keeps the first failure's description.
inline void record(CheckResult& r, double dev, const std::function<std::string()>& describe) {
  ++r.cases;
  if (!(dev <= r.tolerance)) {
    if (r.passed) r.failure = describe();
    r.passed = false;
  }
  if (std::isnan(dev) || dev > r.max_deviation)
    r.max_deviation = std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline std::string fmt(std::span<const double> v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i]);
  return out + "]";
}

/// Multistart projected gradient descent on
/// step * (Σ t - ‖t‖) + ‖t - y‖² / 2 over t ≥ 0.
inline std::vector<double> l1_minus_2_oracle(std::span<const double> y, double step,
                                             std::mt19937_64& rng) {
  const std::size_t n = y.size();
  const auto objective = [&](const std::vector<double>& t) {
    double s = 0.0, sq = 0.0, d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += t[i];
      sq += t[i] * t[i];
      d += (t[i] - y[i]) * (t[i] - y[i]);
    }
    return step * (s - std::sqrt(sq)) + 0.5 * d;
  };
  double ymax = 0.0;
  for (double v : y) ymax = std::max(ymax, v);
  std::uniform_real_distribution<double> u(0.0, 2.0 * ymax + step);
  std::vector<std::vector<double>> starts{{y.begin(), y.end()}};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(n, 0.0);
    e[i] = y[i] + step;
    starts.push_back(e);
  }
  for (int k = 0; k < 8; ++k) {
    std::vector<double> t(n);
    for (auto& v : t) v = u(rng);
    starts.push_back(t);
  }
  std::vector<double> best;
  double best_f = std::numeric_limits<double>::infinity();
  for (auto t : starts) {
    for (int it = 0; it < 20000; ++it) {
      double norm = 0.0;
      for (double v : t) norm += v * v;
      norm = std::sqrt(norm);
      double moved = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double g = step * (1.0 - (norm > 0.0 ? t[i] / norm : 0.0)) + (t[i] - y[i]);
        const double next = std::max(0.0, t[i] - 0.5 * g);
        moved = std::max(moved, std::abs(next - t[i]));
        t[i] = next;
      }
      if (moved < 1e-15) break;
    }
    const double f = objective(t);
    if (f < best_f) {
      best_f = f;
      best = t;
    }
  }
  return best;
}

}  // namespace detail

using ProxNorms =
    std::function<std::vector<double>(std::span<const double>, const RegularizerSpec&, double)>;

/// Closed-form proxes against brute-force oracles, thresholding constants,
/// and the group-vector composition rule. `impl` replaces the closed forms
/// under test.
inline std::vector<CheckResult> verify_prox(std::uint64_t seed = 1, std::size_t cases = 1000,
                                            const ProxNorms& impl = prox_norms) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const RegularizerKind scalar_kinds[] = {RegularizerKind::l1, RegularizerKind::l_half,
                                          RegularizerKind::logsum};
  for (auto kind : scalar_kinds) {
    CheckResult r{std::string("prox_") + to_string(kind), 0, 0.0, 1e-6};
    for (std::size_t i = 0; i < cases; ++i) {
      const double step = 0.01 + 2.0 * unit(rng);
      RegularizerSpec spec{kind, 1.0, 0.0};
      if (kind == RegularizerKind::logsum) spec.epsilon = (0.05 + 0.9 * unit(rng)) * std::sqrt(step);
      const double x = 4.0 * std::max(step, std::sqrt(step)) * unit(rng);
      const double got = impl(std::span(&x, 1), spec, step).at(0);
      const double want = prox_oracle(x, spec, step);
      detail::record(r, std::abs(got - want), [&] {
        return "x=" + detail::fmt(x) + " step=" + detail::fmt(step) +
               " eps=" + detail::fmt(spec.epsilon) + " got=" + detail::fmt(got) +
               " oracle=" + detail::fmt(want);
      });
    }
    out.push_back(r);
  }
  {
    CheckResult r{"prox_l1_minus_2", 0, 0.0, 1e-6};
    std::uniform_int_distribution<std::size_t> groups(2, 8);
    for (std::size_t i = 0; i < cases; ++i) {
      const double step = 0.01 + 0.5 * unit(rng);
      std::vector<double> y(groups(rng));
      double ymax = 0.0;
      do {
        for (auto& v : y) v = 2.0 * unit(rng);
        ymax = *std::max_element(y.begin(), y.end());
      } while (ymax <= step + 0.05);
      const RegularizerSpec spec{RegularizerKind::l1_minus_2, 1.0, 0.0};
      const auto got = impl(y, spec, step);
      const auto want = detail::l1_minus_2_oracle(y, step, rng);
      double dev = 0.0;
      for (std::size_t g = 0; g < y.size(); ++g) dev = std::max(dev, std::abs(got.at(g) - want[g]));
      detail::record(r, dev, [&] {
        return "y=" + detail::fmt(y) + " step=" + detail::fmt(step) + " got=" + detail::fmt(got) +
               " oracle=" + detail::fmt(want);
      });
    }
    out.push_back(r);
  }
  {
    CheckResult r{"cutoff_l_half", 0, 0.0, 1e-9};
    const RegularizerSpec spec{RegularizerKind::l_half, 1.0, 0.0};
    const double expect = std::cbrt(54.0) / 4.0;
    detail::record(r, std::abs(l_half_cutoff(1.0) - expect), [] { return std::string("step=1"); });
    // The operator must zero just below the cutoff and keep just above it.
    const double below = expect - 1e-9, above = expect + 1e-9;
    const double zb = impl(std::span(&below, 1), spec, 1.0).at(0);
    const double za = impl(std::span(&above, 1), spec, 1.0).at(0);
    detail::record(r, zb == 0.0 && za > 0.0 ? 0.0 : 1.0, [&] {
      return "below=" + detail::fmt(zb) + " above=" + detail::fmt(za);
    });
    out.push_back(r);
  }
  {
    CheckResult r{"cutoff_l1", 0, 0.0, 0.0};
    const RegularizerSpec spec{RegularizerKind::l1, 1.0, 0.0};
    for (std::size_t i = 0; i < cases; ++i) {
      const double step = 0.01 + 2.0 * unit(rng);
      const double at = step, above = std::nextafter(step, 10.0);
      const double z_at = impl(std::span(&at, 1), spec, step).at(0);
      const double z_above = impl(std::span(&above, 1), spec, step).at(0);
      detail::record(r, z_at == 0.0 && z_above > 0.0 ? 0.0 : 1.0, [&] {
        return "step=" + detail::fmt(step) + " prox(step)=" + detail::fmt(z_at) +
               " prox(next)=" + detail::fmt(z_above);
      });
    }
    out.push_back(r);
  }
  for (auto kind : {RegularizerKind::l1, RegularizerKind::l_half, RegularizerKind::l1_minus_2,
                    RegularizerKind::logsum}) {
    CheckResult r{std::string("composition_") + to_string(kind), 0, 0.0, 1e-12};
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> dim(1, 12);
    for (std::size_t i = 0; i < cases; ++i) {
      const std::size_t n = dim(rng);
      Matrix a(n, 1);
      for (auto& v : a.data()) v = nd(rng);
      const double norm = frobenius_norm(a);
      const double step = kind == RegularizerKind::l1_minus_2 ? 0.9 * norm * unit(rng)
                                                              : 0.01 + 2.0 * unit(rng);
      const RegularizerSpec spec{kind, 1.0, 0.0};
      const GroupScheme scheme = column_scheme(n, 1);
      const Matrix got = prox(a, scheme, spec, step);
      const double scalar = impl(std::span(&norm, 1), spec, step).at(0);
      double dev = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        dev = std::max(dev, std::abs(got.data()[k] - scalar * a.data()[k] / norm));
      detail::record(r, dev, [&] {
        return "v=" + detail::fmt(a.data()) + " step=" + detail::fmt(step);
      });
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradients.

/// Small network covering every layer type: plain, basic with projection
/// shortcut, bottleneck, grouped bottleneck, all hinged.
inline Network gradcheck_network(std::uint64_t seed) {
  ArchSpec a;
  a.input = {3, 6, 6};
  a.classes = 4;
  a.blocks = {{BlockKind::plain, 4, 3, 1},
              {BlockKind::basic, 6, 3, 2},
              {BlockKind::bottleneck, 6, 3, 1, 4, 1, 0},
              {BlockKind::grouped_bottleneck, 8, 3, 1, 4, 2, 2}};
  Network net = build_network(a, seed);
  attach_hinges(net, {HingeInit::svd, SchemeKind::rows, SchemeKind::columns});
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& p : param_views(net))
    if (p.info.role != ParamRole::weight)
      for (auto& v : p.values) v += nd(rng);
  return net;
}

/// Central finite differences against backward() for both the plain and the
/// distillation loss.
inline std::vector<CheckResult> verify_grad(std::uint64_t seed = 3, std::size_t n_params = 50,
                                            double h = 1e-5) {
  std::vector<CheckResult> out;
  Network net = gradcheck_network(seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t batch = 3;
  Matrix x(batch * net.input.height * net.input.width, net.input.channels);
  for (auto& v : x.data()) v = nd(rng);
  const std::vector<int> labels{0, 3, 1};
  Matrix teacher(batch, net.classes());
  for (auto& v : teacher.data()) v = 2.0 * nd(rng);
  const DistillConfig dc{0.4, 4.0};

  for (int use_distill = 0; use_distill < 2; ++use_distill) {
    const auto loss_of = [&](const Matrix& logits) {
      return use_distill ? distill_loss(logits, teacher, labels, dc) : cross_entropy(logits, labels);
    };
    ForwardCache cache;
    const LossResult l = loss_of(forward(net, x, batch, &cache));
    Gradients g = backward(net, cache, l.grad);
    auto params = param_views(net);
    const auto grads = grad_views(net, g);

    // One entry of every tensor, the rest uniformly at random.
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t k = 0; k < params.size(); ++k)
      picks.emplace_back(k, std::uniform_int_distribution<std::size_t>(0, params[k].values.size() - 1)(rng));
    std::uniform_int_distribution<std::size_t> which(0, params.size() - 1);
    while (picks.size() < n_params) {
      const std::size_t k = which(rng);
      picks.emplace_back(k, std::uniform_int_distribution<std::size_t>(0, params[k].values.size() - 1)(rng));
    }

    CheckResult r{use_distill ? "grad_distill" : "grad_cross_entropy", 0, 0.0, 1e-4};
    for (const auto& [k, i] : picks) {
      double& p = params[k].values[i];
      const double saved = p;
      p = saved + h;
      const double up = loss_of(forward(net, x, batch)).loss;
      p = saved - h;
      const double down = loss_of(forward(net, x, batch)).loss;
      p = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = grads[k][i];
      const double dev = std::abs(an - fd) / (std::abs(an) + 1e-8);
      detail::record(r, dev, [&, k = k, i = i] {
        return params[k].info.name + "[" + std::to_string(i) + "] analytic=" + detail::fmt(an) +
               " fd=" + detail::fmt(fd) + " seed=" + std::to_string(seed);
      });
    }
    out.push_back(r);

    // Logit gradient of the loss itself.
    CheckResult rl{use_distill ? "grad_logits_distill" : "grad_logits_cross_entropy", 0, 0.0, 1e-4};
    Matrix z = forward(net, x, batch);
    const LossResult lz = loss_of(z);
    for (std::size_t j = 0; j < z.data().size(); ++j) {
      const double saved = z.data()[j];
      z.data()[j] = saved + h;
      const double up = loss_of(z).loss;
      z.data()[j] = saved - h;
      const double down = loss_of(z).loss;
      z.data()[j] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = lz.grad.data()[j];
      detail::record(rl, std::abs(an - fd) / (std::abs(an) + 1e-8), [&] {
        return "logit " + std::to_string(j) + " analytic=" + detail::fmt(an) + " fd=" + detail::fmt(fd);
      });
    }
    out.push_back(rl);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compaction.

/// Random architecture mixing every block kind, hinged, with random biases.
inline Network random_masked_network(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::size_t> ch(2, 6);
  ArchSpec a;
  a.input = {ch(rng), 6 + 2 * static_cast<std::size_t>(coin(rng)), 6};
  a.classes = 3;
  const std::size_t n_blocks = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    const int kind = std::uniform_int_distribution<int>(0, 3)(rng);
    BlockConfig b;
    b.kind = static_cast<BlockKind>(kind);
    b.out_channels = ch(rng) * 2;
    b.kernel = coin(rng) ? 3 : 1;
    b.stride = coin(rng) && i > 0 ? 2 : 1;
    if (b.kind == BlockKind::bottleneck) b.mid_channels = ch(rng);
    if (b.kind == BlockKind::grouped_bottleneck) {
      b.cardinality = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
      b.width = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
      b.mid_channels = b.cardinality * b.width;
    }
    a.blocks.push_back(b);
  }
  Network net = build_network(a, rng());
  AttachOptions o;
  o.init = coin(rng) ? HingeInit::svd : HingeInit::identity;
  o.basic_first = coin(rng) ? SchemeKind::rows : SchemeKind::columns;
  attach_hinges(net, o);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto& p : param_views(net))
    if (p.info.role == ParamRole::bias)
      for (auto& v : p.values) v = nd(rng);
  return net;
}

/// Compaction against the masked model on random architectures and masks,
/// half drawn directly and half from a random threshold.
inline std::vector<CheckResult> verify_compaction(std::uint64_t seed = 5, std::size_t models = 100) {
  CheckResult eq{"compaction_equivalence", 0, 0.0, 1e-10};
  CheckResult gm{"compaction_gamma", 0, 0.0, 1e-12};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < models; ++i) {
    const std::uint64_t case_seed = rng();
    std::mt19937_64 crng(case_seed);
    Network net = random_masked_network(crng);
    double hypothetical = 0.0;
    if (i % 2 == 0) {
      MaskSet m = current_masks(net);
      std::bernoulli_distribution dead(std::uniform_real_distribution<double>(0.0, 0.9)(crng));
      for (auto& bm : m)
        for (auto& mm : bm) {
          for (auto& v : mm) v = dead(crng) ? 0 : 1;
          if (!alive_count(mm)) mm[std::uniform_int_distribution<std::size_t>(0, mm.size() - 1)(crng)] = 1;
        }
      hypothetical = cost_for_masks(net, m).gamma;
      set_masks(net, m);
    } else {
      const double t = median_alive_norm(net) * std::uniform_real_distribution<double>(0.0, 2.0)(crng);
      hypothetical = compression_ratio(net, t);
      set_masks(net, threshold_masks(net, t));
    }
    const CompactModel c = compact(net);
    const double dev = verify_equivalence(net, c.net, 32, case_seed);
    detail::record(eq, dev, [&] { return "case seed " + std::to_string(case_seed); });
    detail::record(gm, std::abs(c.report.gamma - hypothetical),
                   [&] { return "case seed " + std::to_string(case_seed); });
  }
  return {eq, gm};
}

}  // namespace hinge
