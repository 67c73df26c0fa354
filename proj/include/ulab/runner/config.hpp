#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ulab/analysis/attack.hpp"
#include "ulab/analysis/relearn.hpp"
#include "ulab/databench/io.hpp"
#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/model/transformer.hpp"
#include "ulab/unlearn/training.hpp"

// One JSON document configures every pipeline stage. Defaults live in
// default_config_json(); a user file may only name keys that exist there, and
// `--set a.b=value` overrides go through the same check.

namespace ulab::runner {

using json = nlohmann::json;

inline json default_config_json() {
  json gen;
  data::to_json(gen, data::GenConfig{});
  const model::LMConfig m{};
  return {
      {"benchmark", gen},
      {"model", {{"d_model", m.d_model}, {"n_layers", m.n_layers}, {"n_heads", m.n_heads}, {"max_seq_len", m.max_seq_len},
                 {"seed", 7}}},
      {"pretrain", {{"epochs", 30}, {"lr", 3e-3}, {"batch_size", 8}, {"seed", 1}}},
      {"unlearn",
       {{"npo", {{"lambda", 1.0}, {"beta", 0.1}, {"lr", 2e-2}, {"base_epochs", 5.0}, {"batch_size", 3},
                 {"control_seed", 99}, {"order_seed", 0}, {"max_steps", nullptr}}},
        {"rmu", {{"lambda", 1.0}, {"c", 20.0}, {"layer", nullptr}, {"lr", 1.5e-2}, {"base_epochs", 10.0},
                 {"batch_size", 3}, {"control_seed", 99}, {"order_seed", 0}, {"max_steps", nullptr}}}}},
      {"select", {{"grand_snapshots", 10}, {"mink_k_percent", 40.0}, {"moderate_seed", 0}, {"random_seed", 0}}},
      {"eval", {{"verbmem", true}, {"prompt_len", 0}}},
      {"sweep",
       {{"ratios", {0.01, 0.05, 0.1, 1.0}}, {"selectors", {"random"}}, {"methods", {"npo", "rmu"}}, {"trials", 5},
        {"workers", 1}}},
      {"attack", {{"prefix_len", 8}, {"iterations", 50}, {"top_k", 16}, {"seed", 0}}},
      {"relearn", {{"counts", {0, 50, 100, 200, 400, 600}}, {"seeds", {0, 1, 2}}, {"epochs", 3}, {"lr", 1e-3},
                   {"batch_size", 8}}},
  };
}

namespace detail {

inline void merge_strict(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [k, v] : patch.items()) {
    const std::string here = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown config key '" + here + "'");
    json& slot = base[k];
    if (slot.is_object()) {
      merge_strict(slot, v, here);
    } else {
      slot = v;
    }
  }
}

}  // namespace detail

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("cannot override a whole section: " + path);
  *node = std::move(value);
}

/// Defaults, then the optional file, then overrides.
inline json resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& sets) {
  json cfg = default_config_json();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw DataError("cannot open config file " + file->string());
    json user;
    try {
      in >> user;
    } catch (const json::exception& e) {
      throw DataError("malformed config file " + file->string() + ": " + e.what());
    }
    detail::merge_strict(cfg, user, "");
  }
  for (const auto& s : sets) apply_override(cfg, s);
  return cfg;
}

template <class T>
T get_as(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

inline data::GenConfig gen_config(const json& cfg) {
  try {
    return cfg.at("benchmark").get<data::GenConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad benchmark config: ") + e.what());
  }
}

inline model::LMConfig model_config(const json& cfg, std::uint32_t vocab_size) {
  const auto& m = cfg.at("model");
  model::LMConfig c;
  c.vocab_size = vocab_size;
  c.d_model = get_as<std::uint32_t>(m, "d_model", "model");
  c.n_layers = get_as<std::uint32_t>(m, "n_layers", "model");
  c.n_heads = get_as<std::uint32_t>(m, "n_heads", "model");
  c.max_seq_len = get_as<std::uint32_t>(m, "max_seq_len", "model");
  c.seed = get_as<std::uint64_t>(m, "seed", "model");
  try {
    c.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline unlearn::TrainConfig pretrain_config(const json& cfg) {
  const auto& p = cfg.at("pretrain");
  return {get_as<long>(p, "epochs", "pretrain"), get_as<double>(p, "lr", "pretrain"),
          get_as<std::size_t>(p, "batch_size", "pretrain"), get_as<std::uint64_t>(p, "seed", "pretrain")};
}

inline unlearn::UnlearnConfig unlearn_config(const json& cfg, unlearn::Method method, double ratio = 1.0) {
  const std::string name = unlearn::method_name(method);
  const auto& u = cfg.at("unlearn").at(name);
  const std::string sec = "unlearn." + name;
  unlearn::UnlearnConfig c;
  c.method = method;
  c.lambda = get_as<double>(u, "lambda", sec);
  if (method == unlearn::Method::npo) c.beta = get_as<double>(u, "beta", sec);
  if (method == unlearn::Method::rmu) {
    c.c = get_as<double>(u, "c", sec);
    if (!u.at("layer").is_null()) c.layer = get_as<std::uint32_t>(u, "layer", sec);
  }
  c.lr = get_as<double>(u, "lr", sec);
  c.base_epochs = get_as<double>(u, "base_epochs", sec);
  c.batch_size = get_as<std::size_t>(u, "batch_size", sec);
  c.control_seed = get_as<std::uint64_t>(u, "control_seed", sec);
  c.order_seed = get_as<std::uint64_t>(u, "order_seed", sec);
  if (!u.at("max_steps").is_null()) c.max_steps = get_as<long>(u, "max_steps", sec);
  c.ratio = ratio;
  c.validate();
  return c;
}

inline eval::EvalOptions eval_options(const json& cfg) {
  const auto& e = cfg.at("eval");
  return {get_as<bool>(e, "verbmem", "eval"), get_as<std::size_t>(e, "prompt_len", "eval")};
}

inline analysis::AttackConfig attack_config(const json& cfg) {
  const auto& a = cfg.at("attack");
  analysis::AttackConfig c{get_as<std::size_t>(a, "prefix_len", "attack"), get_as<std::size_t>(a, "iterations", "attack"),
                           get_as<std::size_t>(a, "top_k", "attack"), get_as<std::uint64_t>(a, "seed", "attack")};
  c.validate();
  return c;
}

struct RelearnSettings {
  std::vector<std::size_t> counts;
  std::vector<std::uint64_t> seeds;
  analysis::FinetuneConfig finetune;
};

inline RelearnSettings relearn_settings(const json& cfg) {
  const auto& r = cfg.at("relearn");
  RelearnSettings s;
  s.counts = get_as<std::vector<std::size_t>>(r, "counts", "relearn");
  s.seeds = get_as<std::vector<std::uint64_t>>(r, "seeds", "relearn");
  s.finetune = {get_as<long>(r, "epochs", "relearn"), get_as<double>(r, "lr", "relearn"),
                get_as<std::size_t>(r, "batch_size", "relearn")};
  return s;
}

}  // namespace ulab::runner
