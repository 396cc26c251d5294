// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit 1 on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "hinge/compaction.hpp"
#include "hinge/config.hpp"
#include "hinge/serialize.hpp"
#include "hinge/train.hpp"
#include "hinge/verify.hpp"

using namespace hinge;

namespace {

struct Outcome {
  std::string title;
  bool pass = false;
  std::string detail;
};

std::map<int, Outcome> outcomes;

void record(int id, std::string title, bool pass, std::string detail) {
  outcomes[id] = {std::move(title), pass, std::move(detail)};
  std::cerr << "[" << id << "] " << (pass ? "pass" : "FAIL") << ": " << outcomes[id].detail << '\n';
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

bool suite_passed(const std::vector<CheckResult>& rs, const std::string& prefix, std::string& detail) {
  bool ok = true;
  std::size_t n = 0;
  for (const auto& r : rs) {
    if (r.name.rfind(prefix, 0) != 0) continue;
    ++n;
    ok = ok && r.passed;
    detail += r.name + " n=" + std::to_string(r.cases) + " dev=" + num(r.max_deviation) + "; ";
    if (!r.passed) detail += "failing: " + r.failure + "; ";
  }
  return ok && n > 0;
}

std::string checkpoint_bytes(const Network& net, const std::vector<LayerMode>* modes = nullptr) {
  return encode_hngw(to_tensors(net, modes));
}

bool dead_groups_zero(const Network& net) {
  for (const auto& b : net.blocks)
    for (const auto& t : b.targets) {
      const auto n = group_norms(target_matrices(b, t), t.scheme);
      for (std::size_t g = 0; g < n.size(); ++g)
        if (!t.alive[g] && n[g] != 0.0) return false;
    }
  return true;
}

std::vector<double> distinct_norms(const Network& net) {
  std::vector<double> out;
  for (const auto& b : net.blocks)
    for (const auto& t : b.targets) {
      const auto n = group_norms(target_matrices(b, t), t.scheme);
      for (std::size_t g = 0; g < n.size(); ++g)
        if (t.alive[g]) out.push_back(n[g]);
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct Compressed {
  Network hinged;
  CompressionState state;
  SearchResult search;
  CompactModel compact;
};

Compressed compress_pipeline(const Network& baseline, const RunConfig& cfg, const Split& train) {
  Compressed c;
  c.hinged = baseline;
  attach_hinges(c.hinged, cfg.attach);
  c.state = run_compression(c.hinged, train, cfg.compress, cfg.seed);
  const Network solved = c.hinged;
  c.search = binary_search_threshold(solved, cfg.compress.target_ratio,
                                     cfg.compress.search_criterion);
  Network masked = solved;
  set_masks(masked, threshold_masks(masked, c.search.threshold));
  c.compact = compact(masked);
  c.hinged = solved;
  return c;
}

void criteria_oracles() {
  Stopwatch sw;
  const auto prox = verify_prox(1, 1000);
  const double prox_secs = sw.seconds();
  std::string d1, d2, d3;
  const bool p1 = suite_passed(prox, "prox_", d1) && prox_secs < 30.0;
  record(1, "prox-oracle equivalence", p1, d1 + "time=" + num(prox_secs) + "s");

  bool p2 = suite_passed(prox, "cutoff_", d2);
  const double cutoff = l_half_cutoff(1.0);
  const double expect = std::cbrt(54.0) / 4.0;
  p2 = p2 && std::abs(cutoff - expect) <= 1e-9;
  bool l1_exact = true;
  for (double step : {1e-3, 0.1, 0.37, 1.0, 2.5}) {
    l1_exact = l1_exact && prox_norm_l1(step, step) == 0.0 &&
               prox_norm_l1(std::nextafter(step, 1e300), step) > 0.0;
  }
  p2 = p2 && l1_exact;
  record(2, "thresholding constants", p2,
         d2 + "l_half cutoff(1)=" + num(cutoff) + " expected " + num(expect) +
             "; l1 cutoff exact=" + (l1_exact ? "yes" : "no"));

  const bool p3 = suite_passed(prox, "composition_", d3);
  record(3, "vector prox composition", p3, d3);

  std::string d4;
  const auto grad = verify_grad(3, 50, 1e-5);
  const bool p4 = suite_passed(grad, "grad_", d4);
  record(4, "gradient correctness", p4, d4);

  std::string d5;
  const auto comp = verify_compaction(5, 100);
  const bool p5 = suite_passed(comp, "compaction_", d5);
  record(5, "compaction equivalence", p5, d5);

  // Criterion 9: distillation sanity.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 2.0);
  bool zero_soft = true;
  double ce_dev = 0.0;
  for (int i = 0; i < 200; ++i) {
    Matrix z(4, 5), t(4, 5);
    for (auto& v : z.data()) v = nd(rng);
    for (auto& v : t.data()) v = nd(rng);
    const std::vector<int> y{0, 1, 2, i % 5};
    const auto hard = cross_entropy(z, y);
    const auto same = distill_loss(z, z, y, {0.4, 4.0});
    Matrix expect_grad = hard.grad;
    for (auto& v : expect_grad.data()) v *= 0.6;
    zero_soft = zero_soft && same.grad == expect_grad;
    const auto plain = distill_loss(z, t, y, {0.0, 4.0});
    ce_dev = std::max({ce_dev, std::abs(plain.loss - hard.loss), max_abs_diff(plain.grad, hard.grad)});
  }
  record(9, "distillation sanity", zero_soft && ce_dev <= 1e-12,
         std::string("soft gradient at z_c=z_o exactly zero: ") + (zero_soft ? "yes" : "no") +
             "; alpha=0 vs cross-entropy dev=" + num(ce_dev));
}

void criteria_pipeline() {
  Stopwatch total;
  const RunConfig cfg = load_run_config(HINGE_SOURCE_DIR "/configs/toy_resnet.json");
  const auto data = make_synthetic_dataset(cfg.data);

  Network baseline = build_network(cfg.arch, cfg.seed);
  train(baseline, data.train, cfg.train, {}, cfg.seed);
  baseline = round_to_f32(baseline);
  Network baseline2 = build_network(cfg.arch, cfg.seed);
  train(baseline2, data.train, cfg.train, {}, cfg.seed);
  baseline2 = round_to_f32(baseline2);
  const double base_acc = evaluate(baseline, data.test).accuracy;
  std::cerr << "baseline accuracy " << base_acc << " after " << total.seconds() << "s\n";

  const Compressed run = compress_pipeline(baseline, cfg, data.train);
  const Compressed again = compress_pipeline(baseline2, cfg, data.train);
  const Network student0 = round_to_f32(run.compact.net);
  const double compressed_acc = evaluate(student0, data.test).accuracy;
  std::cerr << "compressed gamma " << run.compact.report.gamma << " accuracy " << compressed_acc
            << " after " << total.seconds() << "s\n";

  // Criterion 6: threshold search on the trained toy model.
  {
    Stopwatch sw;
    const Network& net = run.hinged;
    std::vector<double> sweep{compression_ratio(net, 0.0)};
    for (double n : distinct_norms(net)) sweep.push_back(compression_ratio(net, std::nextafter(n, 1e300)));
    bool ok = true;
    std::string detail;
    for (double target : {0.75, 0.5, 0.25}) {
      const auto r = binary_search_threshold(net, target, 0.005);
      double best = std::numeric_limits<double>::infinity();
      for (double g : sweep) best = std::min(best, std::abs(g - target));
      const double dev = std::abs(r.gamma - target);
      const bool hit = dev <= 0.005;
      const bool closest = !r.exact && dev == best;
      ok = ok && (hit || closest) && r.gamma == compression_ratio(net, r.threshold);
      detail += "target " + num(target) + " -> gamma " + num(r.gamma) +
                (hit ? " (within 0.005)" : closest ? " (closest step)" : " (MISSED, best " + num(best) + ")") +
                " in " + std::to_string(r.visited.size()) + " steps; ";
    }
    const double secs = sw.seconds();
    record(6, "threshold search", ok && secs < 60.0,
           detail + "sweep of " + std::to_string(sweep.size()) + " thresholds; time=" + num(secs) + "s");
  }

  // Criterion 8: solver invariants and determinism.
  {
    const auto& st = run.state;
    bool gamma_mono = true, lambda_mono = true;
    for (std::size_t e = 1; e < st.gamma_history.size(); ++e)
      gamma_mono = gamma_mono && st.gamma_history[e] <= st.gamma_history[e - 1];
    for (std::size_t e = 1; e < st.lambda_history.size(); ++e)
      for (std::size_t k = 0; k < st.lambda_history[e].size(); ++k)
        lambda_mono = lambda_mono && st.lambda_history[e][k] <= st.lambda_history[e - 1][k];
    const bool zeros = dead_groups_zero(run.hinged);
    const bool gamma_exact =
        std::abs(cost_for_masks(run.hinged, current_masks(run.hinged)).gamma - st.gamma_c) <= 1e-12;
    const bool same_base = checkpoint_bytes(baseline) == checkpoint_bytes(baseline2);
    const bool same_hinged = checkpoint_bytes(run.hinged) == checkpoint_bytes(again.hinged);
    const bool same_compact =
        checkpoint_bytes(round_to_f32(run.compact.net), &run.compact.modes) ==
        checkpoint_bytes(round_to_f32(again.compact.net), &again.compact.modes);
    record(8, "solver invariants",
           gamma_mono && lambda_mono && zeros && gamma_exact && same_base && same_hinged && same_compact,
           "epochs=" + std::to_string(st.epoch) + " gamma non-increasing=" + (gamma_mono ? "yes" : "no") +
               " lambda non-increasing=" + (lambda_mono ? "yes" : "no") +
               " masked groups zero=" + (zeros ? "yes" : "no") +
               " gamma recompute=" + (gamma_exact ? "yes" : "no") +
               " identical checkpoints (baseline/solver/compact)=" + (same_base ? "y" : "n") +
               (same_hinged ? "y" : "n") + (same_compact ? "y" : "n"));
  }

  // Criterion 7: end to end with distillation.
  {
    LoadedNetwork student{student0, run.compact.modes};
    const Matrix teacher_logits = predict_logits(baseline, data.train);
    LossSpec loss;
    loss.distill = cfg.finetune.distill;
    loss.teacher_logits = &teacher_logits;
    TrainConfig tc = cfg.train;
    tc.epochs = cfg.finetune.epochs;
    tc.lr = cfg.finetune.lr;
    tc.milestones.clear();
    train(student.net, data.train, tc, loss, cfg.seed);
    const double final_acc = evaluate(round_to_f32(student.net), data.test).accuracy;
    const double secs = total.seconds();
    const double gamma = run.compact.report.gamma;
    const bool ok = base_acc >= 0.95 && base_acc - final_acc <= 0.02 && secs < 300.0 &&
                    (run.search.exact || std::abs(gamma - 0.5) <= 0.1);
    record(7, "end-to-end desk-scale run", ok,
           "baseline acc=" + num(base_acc) + " gamma=" + num(gamma) + " (search exact=" +
               (run.search.exact ? "yes" : "no") + ") compacted acc=" + num(compressed_acc) +
               " finetuned acc=" + num(final_acc) + " total time=" + num(secs) + "s");
  }
}

}  // namespace

int main() {
  try {
    criteria_oracles();
    criteria_pipeline();
  } catch (const std::exception& e) {
    std::cerr << "acceptance run aborted: " << e.what() << '\n';
  }
  bool all = true;
  for (int id = 1; id <= 9; ++id) {
    auto it = outcomes.find(id);
    const bool pass = it != outcomes.end() && it->second.pass;
    all = all && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id;
    if (it != outcomes.end())
      std::cout << " " << it->second.title << ": " << it->second.detail;
    else
      std::cout << ": not run";
    std::cout << '\n';
  }
  return all ? 0 : 1;
}
