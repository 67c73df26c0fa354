#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulab/coreset/selection.hpp"
#include "ulab/databench/benchmark.hpp"
#include "ulab/error.hpp"
#include "ulab/runner/config.hpp"
#include "ulab/unlearn/training.hpp"

// Glue shared by the CLI and the sweep: corpora, coreset selection by name,
// selection files.

namespace ulab::runner {

using model::LMParams;
using model::Tokens;

/// Pretraining sees both domains; the retrain baseline sees only D_r.
inline std::vector<Tokens> pretrain_corpus(const data::SyntheticBenchmark& b, bool retrain_baseline) {
  std::vector<Tokens> out;
  if (!retrain_baseline) out = data::record_tokens(b.forget_records);
  for (const auto& r : b.retain_records) out.push_back(r.tokens);
  return out;
}

enum class Selector { random, grand, moderate, mink };

inline const char* selector_name(Selector s) {
  switch (s) {
    case Selector::random: return "random";
    case Selector::grand: return "grand";
    case Selector::moderate: return "moderate";
    case Selector::mink: return "mink";
  }
  return "?";
}

inline Selector parse_selector(const std::string& s) {
  if (s == "random") return Selector::random;
  if (s == "grand") return Selector::grand;
  if (s == "moderate") return Selector::moderate;
  if (s == "mink") return Selector::mink;
  throw ConfigError("unknown selection method '" + s + "' (expected random, grand, moderate or mink)");
}

struct SelectSettings {
  long grand_snapshots = 10;
  double mink_k_percent = 40;
  std::uint64_t moderate_seed = 0;
  std::uint64_t random_seed = 0;
};

inline SelectSettings select_settings(const json& cfg) {
  const auto& s = cfg.at("select");
  return {get_as<long>(s, "grand_snapshots", "select"), get_as<double>(s, "mink_k_percent", "select"),
          get_as<std::uint64_t>(s, "moderate_seed", "select"), get_as<std::uint64_t>(s, "random_seed", "select")};
}

/// Score-based selectors are deterministic given θ0, so their scores can be
/// computed once and reused across trials.
struct ScoreCache {
  std::optional<std::vector<double>> mink;
  std::optional<std::vector<double>> grand;
};

/// Picks a p-fraction of the forget set. `trial` offsets the seed of the
/// seeded selectors; GraNd scores come from an unlearning run under `ucfg`.
template <std::floating_point T>
coreset::Selection select_coreset(Selector sel, const LMParams<T>& theta0, std::span<const Tokens> forget,
                                  std::span<const Tokens> retain, double p, const SelectSettings& s,
                                  const unlearn::UnlearnConfig& ucfg, std::uint64_t trial = 0, ScoreCache* cache = nullptr) {
  ScoreCache local;
  ScoreCache& c = cache ? *cache : local;
  switch (sel) {
    case Selector::random:
      return coreset::random_select(forget.size(), p, s.random_seed + trial);
    case Selector::moderate:
      return coreset::moderate_select(theta0, forget, p, s.moderate_seed + trial);
    case Selector::mink: {
      if (!c.mink) c.mink = coreset::mink_prob_scores(theta0, forget, s.mink_k_percent);
      // Higher Min-K% Prob means more memorized.
      return coreset::top_p_select(*c.mink, p, "mink");
    }
    case Selector::grand: {
      if (!c.grand) c.grand = coreset::grand_scores(theta0, forget, retain, ucfg, s.grand_snapshots).scores;
      return coreset::top_p_select(*c.grand, p, "grand");
    }
  }
  throw ConfigError("unhandled selector");
}

inline std::vector<Tokens> gather(std::span<const Tokens> all, const std::vector<std::size_t>& idx) {
  std::vector<Tokens> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    require(i < all.size(), "selection index out of range");
    out.push_back(all[i]);
  }
  return out;
}

inline json selection_to_json(const coreset::Selection& s) {
  return {{"method", s.method}, {"ratio", s.ratio}, {"seed", s.seed}, {"indices", s.indices}, {"scores", s.scores}};
}

inline coreset::Selection selection_from_json(const json& j) {
  try {
    coreset::Selection s;
    j.at("method").get_to(s.method);
    j.at("ratio").get_to(s.ratio);
    j.at("seed").get_to(s.seed);
    j.at("indices").get_to(s.indices);
    j.at("scores").get_to(s.scores);
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed selection file: ") + e.what());
  }
}

}  // namespace ulab::runner
