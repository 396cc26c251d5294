// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "hinge/dataset.hpp"
#include "hinge/losses.hpp"
#include "hinge/network.hpp"
#include "hinge/solver.hpp"
#include "hinge/train.hpp"

namespace hinge {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FinetuneConfig {
  DistillConfig distill;
  std::size_t epochs = 4;
  double lr = 0.01;
};

struct RunConfig {
  std::uint64_t seed = 42;
  ArchSpec arch = toy_resnet_arch();
  DatasetSpec data;
  TrainConfig train;
  CompressionConfig compress;
  AttachOptions attach;
  FinetuneConfig finetune;
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline void read_count(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + ": expected a count");
  out = v.get<std::size_t>();
}

inline SchemeKind scheme_from_string(const std::string& s, const std::string& where) {
  if (s == "rows") return SchemeKind::rows;
  if (s == "columns") return SchemeKind::columns;
  throw ConfigError(where + ": scheme must be 'rows' or 'columns'");
}

inline InputSpec parse_input(const json& j, const std::string& where) {
  check_keys(j, where, {"channels", "height", "width"});
  InputSpec in;
  read_count(j, "channels", in.channels, where);
  read_count(j, "height", in.height, where);
  read_count(j, "width", in.width, where);
  if (!in.channels || !in.height || !in.width) throw ConfigError(where + ": zero extent");
  return in;
}

inline void parse_arch(const json& j, ArchSpec& a) {
  check_keys(j, "arch", {"input", "classes", "blocks"});
  if (j.contains("input")) a.input = parse_input(j.at("input"), "arch.input");
  read_count(j, "classes", a.classes, "arch");
  if (a.classes < 2) throw ConfigError("arch.classes must be >= 2");
  if (!j.contains("blocks")) return;
  if (!j.at("blocks").is_array() || j.at("blocks").empty())
    throw ConfigError("arch.blocks: expected a non-empty array");
  a.blocks.clear();
  for (std::size_t i = 0; i < j.at("blocks").size(); ++i) {
    const auto& bj = j.at("blocks")[i];
    const std::string w = "arch.blocks[" + std::to_string(i) + "]";
    check_keys(bj, w, {"kind", "out_channels", "kernel", "stride", "mid_channels",
                       "cardinality", "width"});
    BlockConfig b;
    std::string kind = "plain";
    read(bj, "kind", kind, w);
    try {
      b.kind = block_kind_from_string(kind);
    } catch (const std::exception&) {
      throw ConfigError(w + ".kind: unknown block kind '" + kind + "'");
    }
    read_count(bj, "out_channels", b.out_channels, w);
    read_count(bj, "kernel", b.kernel, w);
    read_count(bj, "stride", b.stride, w);
    read_count(bj, "mid_channels", b.mid_channels, w);
    read_count(bj, "cardinality", b.cardinality, w);
    read_count(bj, "width", b.width, w);
    if (!b.out_channels || !b.kernel || !b.stride) throw ConfigError(w + ": zero extent");
    a.blocks.push_back(b);
  }
}

}  // namespace detail

/// Parses a run configuration. Every section and key is optional; unknown
/// keys are errors.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  using detail::read_count;
  RunConfig c;
  check_keys(j, "config", {"seed", "arch", "data", "train", "compress", "distill"});
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("arch")) detail::parse_arch(j.at("arch"), c.arch);

  c.data.seed = c.seed;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"n_train", "n_test", "noise"});
    read_count(d, "n_train", c.data.n_train, "data");
    read_count(d, "n_test", c.data.n_test, "data");
    read(d, "noise", c.data.noise, "data");
    if (!c.data.n_train || !c.data.n_test) throw ConfigError("data: sample counts must be > 0");
    if (!(c.data.noise >= 0.0)) throw ConfigError("data.noise must be >= 0");
  }
  c.data.classes = c.arch.classes;
  c.data.input = c.arch.input;

  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train", {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                            "milestones", "lr_decay"});
    read_count(t, "epochs", c.train.epochs, "train");
    read_count(t, "batch_size", c.train.batch_size, "train");
    read(t, "lr", c.train.lr, "train");
    read(t, "momentum", c.train.momentum, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "milestones", c.train.milestones, "train");
    read(t, "lr_decay", c.train.lr_decay, "train");
    if (!c.train.batch_size) throw ConfigError("train.batch_size must be > 0");
    if (!(c.train.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  }

  if (j.contains("compress")) {
    const auto& s = j.at("compress");
    check_keys(s, "compress",
               {"target_ratio", "stop_margin", "nullify_threshold", "regularizer", "lambda",
                "epsilon", "eta", "lr_ratio", "m", "weight_decay", "anneal_decay",
                "anneal_trigger", "max_epochs", "batch_size", "search_criterion",
                "search_max_iter", "init", "basic_first", "plain_scheme"});
    auto& cc = c.compress;
    read(s, "target_ratio", cc.target_ratio, "compress");
    read(s, "stop_margin", cc.stop_margin, "compress");
    read(s, "nullify_threshold", cc.nullify_threshold, "compress");
    if (s.contains("regularizer")) {
      std::string r;
      read(s, "regularizer", r, "compress");
      try {
        cc.regularizer.kind = regularizer_from_string(r);
      } catch (const std::exception&) {
        throw ConfigError("compress.regularizer: unknown regularizer '" + r + "'");
      }
      cc.regularizer.lambda = default_lambda(cc.regularizer.kind);
    }
    read(s, "lambda", cc.regularizer.lambda, "compress");
    read(s, "epsilon", cc.regularizer.epsilon, "compress");
    read(s, "eta", cc.eta, "compress");
    read(s, "lr_ratio", cc.lr_ratio, "compress");
    read(s, "m", cc.m, "compress");
    read(s, "weight_decay", cc.weight_decay, "compress");
    read(s, "anneal_decay", cc.anneal_decay, "compress");
    read(s, "anneal_trigger", cc.anneal_trigger, "compress");
    read_count(s, "max_epochs", cc.max_epochs, "compress");
    read_count(s, "batch_size", cc.batch_size, "compress");
    read(s, "search_criterion", cc.search_criterion, "compress");
    read_count(s, "search_max_iter", cc.search_max_iter, "compress");
    if (s.contains("init")) {
      std::string init;
      read(s, "init", init, "compress");
      if (init == "svd") c.attach.init = HingeInit::svd;
      else if (init == "identity") c.attach.init = HingeInit::identity;
      else throw ConfigError("compress.init must be 'svd' or 'identity'");
    }
    if (s.contains("basic_first")) {
      std::string k;
      read(s, "basic_first", k, "compress");
      c.attach.basic_first = detail::scheme_from_string(k, "compress.basic_first");
    }
    if (s.contains("plain_scheme")) {
      std::string k;
      read(s, "plain_scheme", k, "compress");
      c.attach.plain = detail::scheme_from_string(k, "compress.plain_scheme");
    }
    try {
      validate(cc);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("compress: ") + e.what());
    }
  }

  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    check_keys(d, "distill", {"balance", "temperature", "epochs", "lr"});
    read(d, "balance", c.finetune.distill.balance, "distill");
    read(d, "temperature", c.finetune.distill.temperature, "distill");
    read_count(d, "epochs", c.finetune.epochs, "distill");
    read(d, "lr", c.finetune.lr, "distill");
    try {
      validate(c.finetune.distill);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("distill: ") + e.what());
    }
    if (!(c.finetune.lr > 0.0)) throw ConfigError("distill.lr must be > 0");
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace hinge
