// SPDX-License-Identifier: Apache-2.0
// hinge: train, compress, finetune, evaluate and verify toy CNNs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hinge/compaction.hpp"
#include "hinge/config.hpp"
#include "hinge/serialize.hpp"
#include "hinge/solver.hpp"
#include "hinge/train.hpp"
#include "hinge/verify.hpp"

namespace {

using nlohmann::json;
using namespace hinge;

enum Exit : int { kOk = 0, kVerify = 1, kUsage = 2, kNumeric = 3, kInfeasible = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw UsageError("cannot write " + path);
  f << j.dump(2) << '\n';
}

std::string metrics_path(const std::string& out) {
  return std::filesystem::path(out).replace_extension(".metrics.json").string();
}

void log_line(const json& j) { std::cerr << j.dump() << '\n'; }

json history_json(const TrainResult& r) {
  json h = json::array();
  for (const auto& e : r.history)
    h.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}});
  return h;
}

json cost_json(const CostReport& r) {
  json layers = json::array();
  for (const auto& l : r.per_layer) {
    const double orig = static_cast<double>(l.flops_original);
    layers.push_back({{"name", l.name},
                      {"mode", to_string(l.mode)},
                      {"alive_in", l.alive_in},
                      {"alive_out", l.alive_out},
                      {"rank", l.rank},
                      {"flops", l.flops},
                      {"flops_original", l.flops_original},
                      {"params", l.params},
                      {"ratio", orig > 0 ? static_cast<double>(l.flops) / orig : 1.0}});
  }
  return {{"flops_original", r.flops_original},
          {"flops_compressed", r.flops_compressed},
          {"params_original", r.params_original},
          {"params_compressed", r.params_compressed},
          {"gamma", r.gamma},
          {"per_layer", layers}};
}

Network load_plain(const std::string& path, const RunConfig& cfg) {
  Network net = load_network(path).net;
  if (!(net.input == cfg.arch.input))
    throw UsageError(path + ": input shape does not match the config");
  return net;
}

int cmd_train(const std::string& config, const std::string& out) {
  const RunConfig cfg = load_run_config(config);
  const auto data = make_synthetic_dataset(cfg.data);
  Network net = build_network(cfg.arch, cfg.seed);
  const TrainResult r = train(net, data.train, cfg.train, {}, cfg.seed);
  for (const auto& e : r.history)
    log_line({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}});
  const Network saved = round_to_f32(net);
  const EvalResult ev = evaluate(saved, data.test);
  save_network(out, saved);
  write_json(metrics_path(out), {{"command", "train"},
                                 {"seed", cfg.seed},
                                 {"history", history_json(r)},
                                 {"test_accuracy", ev.accuracy},
                                 {"test_loss", ev.loss}});
  return kOk;
}

int cmd_compress(const std::string& config, const std::string& ckpt, double target,
                 const std::string& out, const std::string& report_path) {
  RunConfig cfg = load_run_config(config);
  if (!(target > 0.0 && target < 1.0)) throw UsageError("--target-ratio must lie in (0, 1)");
  cfg.compress.target_ratio = target;
  Network net = load_plain(ckpt, cfg);
  if (is_hinged(net)) throw UsageError(ckpt + ": expected an uncompressed checkpoint");
  const auto data = make_synthetic_dataset(cfg.data);
  const double base_acc = evaluate(net, data.test).accuracy;
  attach_hinges(net, cfg.attach);

  json report = {{"command", "compress"},
                 {"target_ratio", target},
                 {"criterion", cfg.compress.search_criterion},
                 {"regularizer", to_string(cfg.compress.regularizer.kind)},
                 {"lambda", cfg.compress.regularizer.lambda},
                 {"baseline_accuracy", base_acc}};
  const double floor = compression_ratio(net, floor_threshold(net));
  report["floor_ratio"] = floor;
  if (target < floor - cfg.compress.search_criterion) {
    report["status"] = "infeasible";
    write_json(report_path, report);
    std::cerr << "target ratio " << target << " is below the reachable floor " << floor << '\n';
    return kInfeasible;
  }

  const CompressionState st = run_compression(net, data.train, cfg.compress, cfg.seed, &std::cerr);
  const double t0 = median_alive_norm(net);
  const SearchResult sr = binary_search_threshold(net, target, cfg.compress.search_criterion, t0,
                                                  t0 / 2.0, cfg.compress.search_max_iter);
  set_masks(net, threshold_masks(net, sr.threshold));
  const CompactModel cm = compact(net);
  const double dev = verify_equivalence(net, cm.net, 32);
  const Network saved = round_to_f32(cm.net);
  const EvalResult ev = evaluate(saved, data.test);

  report["status"] = sr.exact ? "ok" : (sr.below_floor ? "infeasible" : "closest_step");
  report["exact"] = sr.exact;
  report["threshold"] = sr.threshold;
  report["gamma"] = cm.report.gamma;
  report["search_iterations"] = sr.visited.size();
  report["solver"] = {{"epochs", st.epoch},
                      {"converged", st.converged},
                      {"gamma_c", st.gamma_c},
                      {"gamma_history", st.gamma_history},
                      {"anneal_count", st.anneal_count}};
  report["equivalence_max_deviation"] = dev;
  report["accuracy"] = ev.accuracy;
  report["cost"] = cost_json(cm.report);
  save_network(out, saved, &cm.modes);
  write_json(report_path, report);
  if (!(dev <= 1e-10)) {
    std::cerr << "compaction changed the network output by " << dev << '\n';
    return kVerify;
  }
  return sr.below_floor ? kInfeasible : kOk;
}

int cmd_finetune(const std::string& config, const std::string& ckpt, const std::string& teacher_path,
                 const std::string& out, bool distill) {
  const RunConfig cfg = load_run_config(config);
  LoadedNetwork student = load_network(ckpt);
  const Network teacher = load_plain(teacher_path, cfg);
  if (!(student.net.input == cfg.arch.input)) throw UsageError(ckpt + ": input shape mismatch");
  if (student.net.classes() != teacher.classes())
    throw UsageError("student has " + std::to_string(student.net.classes()) +
                     " classes, teacher has " + std::to_string(teacher.classes()));
  const auto data = make_synthetic_dataset(cfg.data);
  const Matrix teacher_logits = predict_logits(teacher, data.train);
  LossSpec loss;
  if (distill) {
    loss.distill = cfg.finetune.distill;
    loss.teacher_logits = &teacher_logits;
  }
  TrainConfig tc = cfg.train;
  tc.epochs = cfg.finetune.epochs;
  tc.lr = cfg.finetune.lr;
  tc.milestones.clear();
  const double before = evaluate(student.net, data.test).accuracy;
  const TrainResult r = train(student.net, data.train, tc, loss, cfg.seed);
  for (const auto& e : r.history)
    log_line({{"epoch", e.epoch}, {"loss", e.loss}, {"train_accuracy", e.train_accuracy}});
  const Network saved = round_to_f32(student.net);
  const EvalResult ev = evaluate(saved, data.test);
  save_network(out, saved, student.modes.empty() ? nullptr : &student.modes);
  json m = {{"command", "finetune"},
            {"distill", distill},
            {"balance", distill ? cfg.finetune.distill.balance : 0.0},
            {"temperature", cfg.finetune.distill.temperature},
            {"soft_term", "cross_entropy(target=softmax(z_o/T), prediction=softmax(z_c/T))"},
            {"soft_term_as_written", "L_ce(softmax(z_c/T), softmax(z_o/T))"},
            {"teacher_accuracy", evaluate(teacher, data.test).accuracy},
            {"accuracy_before", before},
            {"history", history_json(r)},
            {"test_accuracy", ev.accuracy},
            {"test_loss", ev.loss}};
  write_json(metrics_path(out), m);
  return kOk;
}

int cmd_evaluate(const std::string& config, const std::string& ckpt) {
  const RunConfig cfg = load_run_config(config);
  const Network net = load_network(ckpt).net;
  if (!(net.input == cfg.arch.input)) throw UsageError(ckpt + ": input shape mismatch");
  const auto data = make_synthetic_dataset(cfg.data);
  const EvalResult ev = evaluate(net, data.test);
  std::cout << json{{"accuracy", ev.accuracy}, {"loss", ev.loss}}.dump() << '\n';
  return kOk;
}

int cmd_verify(bool prox, bool grad, bool equiv) {
  if (!prox && !grad && !equiv) prox = grad = equiv = true;
  std::vector<CheckResult> all;
  if (prox) {
    auto r = verify_prox();
    all.insert(all.end(), r.begin(), r.end());
  }
  if (grad) {
    auto r = verify_grad();
    all.insert(all.end(), r.begin(), r.end());
  }
  if (equiv) {
    auto r = verify_compaction();
    all.insert(all.end(), r.begin(), r.end());
  }
  for (const auto& r : all) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " cases=" << r.cases
              << " max_dev=" << r.max_deviation << " tol=" << r.tolerance << '\n';
    if (!r.passed) std::cout << "  failing case: " << r.failure << '\n';
  }
  return all_passed(all) ? kOk : kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hinge network compression on toy CNNs"};
  app.require_subcommand(1);

  std::string config, out, ckpt, teacher, report;
  double target = 0.0;
  bool distill = false, prox = false, grad = false, equiv = false;

  auto* train = app.add_subcommand("train", "Train a baseline network");
  train->add_option("--config", config, "Run configuration (JSON)")->required();
  train->add_option("--out", out, "Output checkpoint")->required();

  auto* compress = app.add_subcommand("compress", "Compress to a target FLOP ratio");
  compress->add_option("--config", config)->required();
  compress->add_option("--ckpt", ckpt, "Baseline checkpoint")->required();
  compress->add_option("--target-ratio", target, "Target FLOP ratio in (0, 1)")->required();
  compress->add_option("--out", out, "Compacted checkpoint")->required();
  compress->add_option("--report", report, "Cost report (JSON)")->required();

  auto* finetune = app.add_subcommand("finetune", "Finetune a compacted network");
  finetune->add_option("--config", config)->required();
  finetune->add_option("--ckpt", ckpt, "Student checkpoint")->required();
  finetune->add_option("--teacher", teacher, "Teacher checkpoint")->required();
  finetune->add_option("--out", out)->required();
  finetune->add_flag("--distill", distill, "Use the distillation loss");

  auto* eval = app.add_subcommand("evaluate", "Test accuracy of a checkpoint");
  eval->add_option("--config", config)->required();
  eval->add_option("--ckpt", ckpt)->required();

  auto* verify = app.add_subcommand("verify", "Run the oracle suites");
  verify->add_flag("--prox", prox, "Proximal operators");
  verify->add_flag("--grad", grad, "Finite-difference gradients");
  verify->add_flag("--equiv", equiv, "Compaction equivalence");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  const auto start = std::chrono::steady_clock::now();
  int rc = kOk;
  try {
    if (*train) rc = cmd_train(config, out);
    else if (*compress) rc = cmd_compress(config, ckpt, target, out, report);
    else if (*finetune) rc = cmd_finetune(config, ckpt, teacher, out, distill);
    else if (*eval) rc = cmd_evaluate(config, ckpt);
    else if (*verify) rc = cmd_verify(prox, grad, equiv);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << json{{"elapsed_seconds", secs}, {"exit", rc}}.dump() << '\n';
  return rc;
}
