#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "ulab/databench/benchmark.hpp"
#include "ulab/error.hpp"

// Benchmark file schema (benchmark.json):
//   format: "ulab-benchmark", version: 1
//   config: GenConfig fields
//   vocab: [string]                        token id -> display name
//   period: int, filler: [int], keywords: [int]
//   facts: [{subject, relation, object, domain: "forget"|"retain"}]
//   forget_records | retain_records | holdout_records | finetune_records:
//       [{tokens: [int], facts: [int]}]
//   forget_eval | utility_eval: [{question: [int], options: [[int] x4], answer: int}]

namespace ulab::data {

inline constexpr const char* kBenchmarkFormat = "ulab-benchmark";
inline constexpr int kBenchmarkVersion = 1;

inline void to_json(nlohmann::json& j, const GenConfig& c) {
  j = {{"n_forget_facts", c.n_forget_facts},
       {"n_retain_facts", c.n_retain_facts},
       {"paraphrases_per_fact", c.paraphrases_per_fact},
       {"filler_ratio", c.filler_ratio},
       {"record_len", c.record_len},
       {"n_records", c.n_records},
       {"n_retain_records", c.n_retain_records},
       {"n_relations", c.n_relations},
       {"n_objects", c.n_objects},
       {"n_filler_tokens", c.n_filler_tokens},
       {"n_finetune_records", c.n_finetune_records},
       {"vocab_limit", c.vocab_limit},
       {"seed", c.seed}};
}

/// Strict: unknown keys are rejected, missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, GenConfig& c) {
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  nlohmann::json known;
  to_json(known, GenConfig{});
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown generator config key '" + k + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_forget_facts", c.n_forget_facts);
  get("n_retain_facts", c.n_retain_facts);
  get("paraphrases_per_fact", c.paraphrases_per_fact);
  get("filler_ratio", c.filler_ratio);
  get("record_len", c.record_len);
  get("n_records", c.n_records);
  get("n_retain_records", c.n_retain_records);
  get("n_relations", c.n_relations);
  get("n_objects", c.n_objects);
  get("n_filler_tokens", c.n_filler_tokens);
  get("n_finetune_records", c.n_finetune_records);
  get("vocab_limit", c.vocab_limit);
  get("seed", c.seed);
}

inline nlohmann::json records_json(const std::vector<Record>& recs) {
  auto a = nlohmann::json::array();
  for (const auto& r : recs) a.push_back({{"tokens", r.tokens}, {"facts", r.facts}});
  return a;
}

inline nlohmann::json items_json(const std::vector<MCQItem>& items) {
  auto a = nlohmann::json::array();
  for (const auto& it : items) a.push_back({{"question", it.question}, {"options", it.options}, {"answer", it.answer}});
  return a;
}

inline nlohmann::json benchmark_to_json(const SyntheticBenchmark& b) {
  auto facts = nlohmann::json::array();
  for (const auto& f : b.facts)
    facts.push_back({{"subject", f.subject},
                     {"relation", f.relation},
                     {"object", f.object},
                     {"domain", f.domain == Domain::forget ? "forget" : "retain"}});
  return {{"format", kBenchmarkFormat},
          {"version", kBenchmarkVersion},
          {"config", b.config},
          {"vocab", b.vocab},
          {"period", b.period},
          {"filler", b.filler},
          {"keywords", b.keywords},
          {"facts", facts},
          {"forget_records", records_json(b.forget_records)},
          {"retain_records", records_json(b.retain_records)},
          {"holdout_records", records_json(b.holdout_records)},
          {"finetune_records", records_json(b.finetune_records)},
          {"forget_eval", items_json(b.forget_eval)},
          {"utility_eval", items_json(b.utility_eval)}};
}

inline SyntheticBenchmark benchmark_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != kBenchmarkFormat) throw DataError("not a ulab benchmark file");
    if (j.at("version").get<int>() != kBenchmarkVersion) throw DataError("unsupported benchmark version");
    SyntheticBenchmark b;
    b.config = j.at("config").get<GenConfig>();
    j.at("vocab").get_to(b.vocab);
    j.at("period").get_to(b.period);
    j.at("filler").get_to(b.filler);
    j.at("keywords").get_to(b.keywords);
    for (const auto& f : j.at("facts"))
      b.facts.push_back(Fact{f.at("subject"), f.at("relation"), f.at("object"),
                             f.at("domain") == "forget" ? Domain::forget : Domain::retain});
    auto recs = [&](const char* key) {
      std::vector<Record> out;
      for (const auto& r : j.at(key)) out.push_back(Record{r.at("tokens"), r.at("facts")});
      return out;
    };
    b.forget_records = recs("forget_records");
    b.retain_records = recs("retain_records");
    b.holdout_records = recs("holdout_records");
    b.finetune_records = recs("finetune_records");
    auto items = [&](const char* key) {
      std::vector<MCQItem> out;
      for (const auto& it : j.at(key)) {
        MCQItem m;
        it.at("question").get_to(m.question);
        if (it.at("options").size() != 4) throw DataError("MCQ item must have exactly 4 options");
        it.at("options").get_to(m.options);
        it.at("answer").get_to(m.answer);
        if (m.answer < 0 || m.answer >= 4) throw DataError("MCQ answer index out of range");
        out.push_back(std::move(m));
      }
      return out;
    };
    b.forget_eval = items("forget_eval");
    b.utility_eval = items("utility_eval");
    const int V = static_cast<int>(b.vocab.size());
    auto check = [&](const std::vector<Record>& rs) {
      for (const auto& r : rs)
        for (int t : r.tokens)
          if (t < 0 || t >= V) throw DataError("record token id out of vocabulary range");
    };
    check(b.forget_records);
    check(b.retain_records);
    check(b.holdout_records);
    check(b.finetune_records);
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed benchmark file: ") + e.what());
  }
}

inline std::string benchmark_text(const SyntheticBenchmark& b) { return benchmark_to_json(b).dump() + "\n"; }

inline SyntheticBenchmark load_benchmark(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  if (std::filesystem::is_directory(p)) p /= "benchmark.json";
  std::ifstream f(p);
  if (!f) throw DataError("cannot open benchmark file " + p.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed benchmark file " + p.string() + ": " + e.what());
  }
  return benchmark_from_json(j);
}

}  // namespace ulab::data
