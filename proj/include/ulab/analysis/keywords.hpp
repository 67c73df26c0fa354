#pragma once

#include <set>
#include <span>
#include <type_traits>
#include <vector>

#include "ulab/databench/benchmark.hpp"
#include "ulab/error.hpp"
#include "ulab/evalsuite/metrics.hpp"
#include "ulab/unlearn/training.hpp"

namespace ulab::analysis {

using model::LMParams;

/// |K_c ∩ K_f| / |K_f|.
inline double keyword_overlap(const std::set<int>& kc, const std::set<int>& kf) {
  require(!kf.empty(), "keyword overlap needs a nonempty K_f");
  std::size_t n = 0;
  for (int t : kc) n += kf.count(t);
  return static_cast<double>(n) / static_cast<double>(kf.size());
}

/// Forget-domain keywords that occur in the given records.
inline std::set<int> keywords_in(std::span<const model::Tokens> records, const std::set<int>& kf) {
  std::set<int> out;
  for (const auto& r : records)
    for (int t : r)
      if (kf.count(t)) out.insert(t);
  return out;
}

/// Keyword-only forget set: each record reduced to its keyword tokens,
/// records left with fewer than two tokens dropped.
inline std::vector<model::Tokens> keyword_forget_set(std::span<const model::Tokens> records,
                                                     const std::set<int>& keywords) {
  if (keywords.empty()) throw ConfigError("keyword set is empty");
  std::vector<model::Tokens> out;
  for (const auto& r : records) {
    auto k = data::keyword_filter(r, keywords);
    if (k.size() >= 2) out.push_back(std::move(k));
  }
  if (out.empty()) throw ConfigError("keyword filtering left no usable record");
  return out;
}

inline constexpr long kKeywordEpochs = 300;

template <std::floating_point T>
struct KeywordRun {
  std::vector<model::Tokens> forget_set;
  LMParams<T> params;
  eval::EvalReport report;
};

/// Unlearns on the keyword-only version of `records` and evaluates. Without
/// an explicit epoch override the run lasts 300 epochs.
template <std::floating_point T>
KeywordRun<T> keyword_unlearn_experiment(const LMParams<T>& theta0, std::span<const model::Tokens> records,
                                         const std::set<int>& keywords, const data::SyntheticBenchmark& bench,
                                         unlearn::UnlearnConfig cfg, const std::type_identity_t<LMParams<T>>* retrain = nullptr,
                                         const eval::EvalOptions& opt = {}) {
  KeywordRun<T> r{keyword_forget_set(records, keywords), theta0, {}};
  if (!cfg.epochs_override) cfg.epochs_override = kKeywordEpochs;
  const auto retain = data::record_tokens(bench.retain_records);
  r.params = unlearn::unlearn(theta0, std::span<const model::Tokens>(r.forget_set),
                              std::span<const model::Tokens>(retain), cfg)
                 .params;
  r.report = eval::evaluate(r.params, bench, retrain, opt);
  return r;
}

}  // namespace ulab::analysis
