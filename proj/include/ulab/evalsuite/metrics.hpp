#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "ulab/coreset/selection.hpp"
#include "ulab/databench/benchmark.hpp"
#include "ulab/error.hpp"
#include "ulab/model/transformer.hpp"

namespace ulab::eval {

using data::MCQItem;
using model::LMParams;
using model::Tokens;

/// Index of the option with the highest length-normalized log-likelihood
/// given the question; ties to the lowest index.
inline int pick_option(const std::array<double, 4>& score) {
  int best = 0;
  for (int o = 1; o < 4; ++o)
    if (score[o] > score[best]) best = o;
  return best;
}

/// Length-normalized option scores for each item, all items batched.
template <std::floating_point T>
std::vector<std::array<double, 4>> option_scores(const LMParams<T>& theta, std::span<const MCQItem> items) {
  std::vector<Tokens> seqs;
  for (const auto& it : items) {
    require(!it.question.empty(), "MCQ question prefix must be nonempty");
    for (const auto& opt : it.options) {
      require(!opt.empty(), "MCQ options must be nonempty");
      Tokens s = it.question;
      s.insert(s.end(), opt.begin(), opt.end());
      seqs.push_back(std::move(s));
    }
  }
  const auto lps = model::batch_sequence_logprobs(theta, std::span<const Tokens>(seqs));
  std::vector<std::array<double, 4>> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (int o = 0; o < 4; ++o) {
      const auto& lp = lps[i * 4 + static_cast<std::size_t>(o)];
      const std::size_t n_opt = items[i].options[static_cast<std::size_t>(o)].size();
      double s = 0;
      for (std::size_t t = lp.size() - n_opt; t < lp.size(); ++t) s += lp[t];
      out[i][static_cast<std::size_t>(o)] = s / static_cast<double>(n_opt);
    }
  }
  return out;
}

inline double accuracy_from_scores(std::span<const std::array<double, 4>> scores, std::span<const MCQItem> items) {
  require(!items.empty(), "MCQ evaluation needs at least one item");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < items.size(); ++i) correct += pick_option(scores[i]) == items[i].answer;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(items.size());
}

template <std::floating_point T>
double mcq_accuracy(const LMParams<T>& theta, std::span<const MCQItem> items) {
  require(!items.empty(), "MCQ evaluation needs at least one item");
  const auto s = option_scores(theta, items);
  return accuracy_from_scores(s, items);
}

template <std::floating_point T>
double unlearning_effectiveness(const LMParams<T>& theta, std::span<const MCQItem> forget_eval) {
  return 100.0 - mcq_accuracy(theta, forget_eval);
}

template <std::floating_point T>
double utility(const LMParams<T>& theta, std::span<const MCQItem> utility_eval) {
  return mcq_accuracy(theta, utility_eval);
}

template <std::floating_point T>
double knowmem(const LMParams<T>& theta, std::span<const MCQItem> qa_items) {
  return mcq_accuracy(theta, qa_items);
}

inline std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS(candidate, truth) / |truth| × 100.
inline double lcs_recall(std::span<const int> candidate, std::span<const int> truth) {
  require(!truth.empty(), "LCS recall needs a nonempty reference");
  return 100.0 * static_cast<double>(lcs_length(candidate, truth)) / static_cast<double>(truth.size());
}

/// Greedy completion of each record from its first prompt_len tokens,
/// scored by LCS recall against the true continuation.
template <std::floating_point T>
double verbmem(const LMParams<T>& theta, std::span<const Tokens> records, std::size_t prompt_len) {
  require(!records.empty(), "VerbMem needs at least one record");
  require(prompt_len >= 1, "VerbMem needs prompt_len >= 1");
  const std::size_t len = records.front().size();
  for (const auto& r : records) require(r.size() == len, "VerbMem records must share one length");
  require(prompt_len < len, "prompt_len must be shorter than the record");
  std::vector<Tokens> prompts;
  for (const auto& r : records) prompts.emplace_back(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(prompt_len));
  const auto cont = model::greedy_decode_batch(theta, std::span<const Tokens>(prompts), len - prompt_len);
  double s = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    s += lcs_recall(cont[i], std::span<const int>(records[i]).subspan(prompt_len));
  return s / static_cast<double>(records.size());
}

/// Rank-sum AUC of positives scoring above negatives; ties count one half.
inline double auc(std::span<const double> positives, std::span<const double> negatives) {
  require(!positives.empty() && !negatives.empty(), "AUC needs both classes");
  std::vector<std::pair<double, int>> all;
  for (double x : positives) all.emplace_back(x, 1);
  for (double x : negatives) all.emplace_back(x, 0);
  std::sort(all.begin(), all.end(), [](auto a, auto b) { return a.first < b.first; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) rank_sum += avg;
    i = j;
  }
  const double np = static_cast<double>(positives.size()), nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

/// 100 (AUC_u − AUC_retrain) / AUC_retrain, or empty when AUC_retrain = 0.
inline std::optional<double> privleak_from_aucs(double auc_u, double auc_retrain) {
  if (auc_retrain == 0.0) return std::nullopt;
  return 100.0 * (auc_u - auc_retrain) / auc_retrain;
}

struct PrivLeakDetail {
  double auc_unlearned = 0;
  double auc_retrain = 0;
  std::optional<double> value;
};

/// Membership score is Min-K% Prob (K = 40); members are D_f, non-members
/// the holdout records.
template <std::floating_point T>
PrivLeakDetail privleak(const LMParams<T>& unlearned, const LMParams<T>& retrain, std::span<const Tokens> forget,
                        std::span<const Tokens> holdout, double k_percent = 40) {
  require(forget.size() == holdout.size(), "PrivLeak needs |D_f| = |holdout|");
  auto auc_of = [&](const LMParams<T>& m) {
    const auto pos = coreset::mink_prob_scores(m, forget, k_percent);
    const auto neg = coreset::mink_prob_scores(m, holdout, k_percent);
    return auc(pos, neg);
  };
  PrivLeakDetail d;
  d.auc_unlearned = auc_of(unlearned);
  d.auc_retrain = auc_of(retrain);
  d.value = privleak_from_aucs(d.auc_unlearned, d.auc_retrain);
  return d;
}

struct EvalReport {
  double ue = 0;
  double ut = 0;
  double verbmem = 0;
  double knowmem = 0;
  /// Empty when no retrain model was given or AUC_retrain = 0.
  std::optional<double> privleak;
};

struct EvalOptions {
  bool with_verbmem = true;
  /// 0 means half the record length.
  std::size_t prompt_len = 0;
};

/// All metrics for one checkpoint on a benchmark.
template <std::floating_point T>
EvalReport evaluate(const LMParams<T>& theta, const data::SyntheticBenchmark& bench,
                    const std::type_identity_t<LMParams<T>>* retrain = nullptr, const EvalOptions& opt = {}) {
  EvalReport r;
  const auto fs = option_scores(theta, std::span<const MCQItem>(bench.forget_eval));
  const double forget_acc = accuracy_from_scores(fs, bench.forget_eval);
  r.ue = 100.0 - forget_acc;
  r.knowmem = forget_acc;
  r.ut = mcq_accuracy(theta, std::span<const MCQItem>(bench.utility_eval));
  const auto forget = data::record_tokens(bench.forget_records);
  if (opt.with_verbmem) {
    const std::size_t pl = opt.prompt_len ? opt.prompt_len : bench.config.record_len / 2;
    r.verbmem = verbmem(theta, std::span<const Tokens>(forget), pl);
  }
  if (retrain) {
    const auto holdout = data::record_tokens(bench.holdout_records);
    r.privleak = privleak(theta, *retrain, std::span<const Tokens>(forget), std::span<const Tokens>(holdout)).value;
  }
  return r;
}

}  // namespace ulab::eval
