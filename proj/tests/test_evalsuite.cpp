#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ulab/databench/benchmark.hpp"
#include "ulab/evalsuite/metrics.hpp"

using namespace ulab;
using data::MCQItem;
using model::Tokens;

namespace {

model::LMConfig tiny(std::uint32_t V = 12) {
  model::LMConfig c;
  c.vocab_size = V;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.seed = 8;
  return c;
}

// All logits zero: every option ties and greedy decoding emits token 0.
model::LMParams<double> flat_model(std::uint32_t V = 12) {
  auto p = model::init_params<double>(tiny(V));
  for (auto& x : p.tensors.at("final_norm").data) x = 0;
  return p;
}

// Exhaustive longest common subsequence for short inputs.
std::size_t lcs_brute(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (mask >> i & 1) sub.push_back(a[i]);
    std::size_t j = 0;
    for (std::size_t i = 0; i < b.size() && j < sub.size(); ++i)
      if (b[i] == sub[j]) ++j;
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

MCQItem mcq(Tokens q, Tokens a, Tokens b, Tokens c, Tokens d, int answer) {
  return MCQItem{std::move(q), {std::move(a), std::move(b), std::move(c), std::move(d)}, answer};
}

double auc_pairs(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0;
  for (double p : pos)
    for (double n : neg) s += p > n ? 1.0 : p == n ? 0.5 : 0.0;
  return s / static_cast<double>(pos.size() * neg.size());
}

}  // namespace

TEST(Lcs, HandExample) {
  const Tokens truth{1, 2, 3, 4}, cand{1, 2, 9, 4};
  EXPECT_DOUBLE_EQ(eval::lcs_recall(cand, truth), 75.0);
  EXPECT_DOUBLE_EQ(eval::lcs_recall(truth, truth), 100.0);
  EXPECT_DOUBLE_EQ(eval::lcs_recall(Tokens{}, truth), 0.0);
  EXPECT_THROW(eval::lcs_recall(truth, Tokens{}), ContractViolation);
}

TEST(Lcs, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    Tokens a(rng() % 11), b(rng() % 11);
    for (auto& x : a) x = static_cast<int>(rng() % 3);
    for (auto& x : b) x = static_cast<int>(rng() % 3);
    EXPECT_EQ(eval::lcs_length(a, b), lcs_brute(a, b));
  }
}

TEST(Auc, RankFormulaMatchesPairCount) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pos(1 + rng() % 15), neg(1 + rng() % 15);
    for (auto& x : pos) x = static_cast<double>(rng() % 6);
    for (auto& x : neg) x = static_cast<double>(rng() % 6);
    EXPECT_NEAR(eval::auc(pos, neg), auc_pairs(pos, neg), 1e-12);
  }
  EXPECT_DOUBLE_EQ(eval::auc(std::vector<double>{2, 3}, std::vector<double>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(eval::auc(std::vector<double>{1}, std::vector<double>{1}), 0.5);
}

TEST(PrivLeak, RelativeAucDifference) {
  EXPECT_NEAR(*eval::privleak_from_aucs(0.6, 0.5), 20.0, 1e-12);
  EXPECT_NEAR(*eval::privleak_from_aucs(0.4, 0.5), -20.0, 1e-12);
  EXPECT_FALSE(eval::privleak_from_aucs(0.7, 0.0).has_value());
}

TEST(PrivLeak, IdenticalModelsGiveZero) {
  const auto p = model::init_params<double>(tiny());
  const std::vector<Tokens> f{{1, 2, 3, 4}, {5, 6, 7, 8}}, h{{2, 2, 3, 3}, {9, 1, 0, 4}};
  const auto d = eval::privleak(p, p, std::span<const Tokens>(f), std::span<const Tokens>(h));
  EXPECT_DOUBLE_EQ(d.auc_unlearned, d.auc_retrain);
  ASSERT_TRUE(d.value.has_value());
  EXPECT_DOUBLE_EQ(*d.value, 0.0);
  EXPECT_THROW(eval::privleak(p, p, std::span<const Tokens>(f), std::span<const Tokens>(h).first(1)),
               ContractViolation);
}

TEST(Mcq, RandomGuessingGivesSeventyFivePercentUe) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 4000;
  std::vector<MCQItem> items(n);
  std::vector<std::array<double, 4>> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    items[i].answer = static_cast<int>(rng() % 4);
    for (auto& s : scores[i]) s = u(rng);
  }
  const double ue = 100.0 - eval::accuracy_from_scores(scores, items);
  EXPECT_NEAR(ue, 75.0, 3.0);
}

TEST(Mcq, UeAndAccuracySumToHundred) {
  const auto p = model::init_params<double>(tiny());
  std::vector<MCQItem> items;
  for (int i = 0; i < 12; ++i) items.push_back(mcq({1, 2, i % 5}, {3}, {4}, {5}, {6}, i % 4));
  const double acc = eval::mcq_accuracy(p, std::span<const MCQItem>(items));
  EXPECT_DOUBLE_EQ(eval::unlearning_effectiveness(p, std::span<const MCQItem>(items)) + acc, 100.0);
  EXPECT_DOUBLE_EQ(eval::knowmem(p, std::span<const MCQItem>(items)), acc);
}

TEST(Mcq, TiesPickFirstOption) {
  const auto p = flat_model();
  const std::vector<MCQItem> right{mcq({1, 2}, {3}, {4}, {5}, {6}, 0)}, wrong{mcq({1, 2}, {3}, {4}, {5}, {6}, 2)};
  EXPECT_DOUBLE_EQ(eval::unlearning_effectiveness(p, std::span<const MCQItem>(right)), 0.0);
  EXPECT_DOUBLE_EQ(eval::unlearning_effectiveness(p, std::span<const MCQItem>(wrong)), 100.0);
}

TEST(Mcq, OptionScoresAreLengthNormalized) {
  const auto p = model::init_params<double>(tiny());
  const MCQItem it = mcq({1, 2, 3}, {4}, {5, 6}, {7, 8, 9}, {10, 11}, 1);
  const auto s = eval::option_scores(p, std::span<const MCQItem>(&it, 1));
  for (std::size_t o = 0; o < 4; ++o) {
    Tokens seq = it.question;
    seq.insert(seq.end(), it.options[o].begin(), it.options[o].end());
    const auto lp = model::sequence_logprobs(p, seq);
    double want = 0;
    for (std::size_t t = lp.size() - it.options[o].size(); t < lp.size(); ++t) want += lp[t];
    EXPECT_NEAR(s[0][o], want / static_cast<double>(it.options[o].size()), 1e-12);
  }
}

TEST(VerbMem, FlatModelRecallCountsZeros) {
  const auto p = flat_model();
  const std::vector<Tokens> recs{{1, 2, 0, 3, 0, 0}, {4, 4, 4, 5, 6, 7}};
  // Continuations {3,0,0} and {5,6,7}; the model emits 0 0 0.
  EXPECT_NEAR(eval::verbmem(p, std::span<const Tokens>(recs), 3), (200.0 / 3 + 0.0) / 2, 1e-12);
  EXPECT_THROW(eval::verbmem(p, std::span<const Tokens>(recs), 6), ContractViolation);
}

TEST(VerbMem, MatchesGreedyDecodeOracle) {
  const auto p = model::init_params<double>(tiny());
  const std::vector<Tokens> recs{{1, 2, 3, 4, 5, 6, 7, 8}, {8, 7, 6, 5, 4, 3, 2, 1}, {0, 0, 1, 1, 2, 2, 3, 3}};
  double want = 0;
  for (const auto& r : recs) {
    const auto out = model::greedy_decode(p, Tokens(r.begin(), r.begin() + 4), 4);
    want += eval::lcs_recall(out, std::span<const int>(r).subspan(4));
  }
  EXPECT_NEAR(eval::verbmem(p, std::span<const Tokens>(recs), 4), want / 3, 1e-12);
}

TEST(Evaluate, ReportFields) {
  data::GenConfig gc;
  gc.n_forget_facts = 8;
  gc.n_retain_facts = 8;
  gc.record_len = 16;
  gc.n_records = 0;
  gc.n_finetune_records = 4;
  const auto b = data::generate_benchmark(gc);
  model::LMConfig mc = tiny(static_cast<std::uint32_t>(b.vocab_size()));
  const auto p = model::init_params<double>(mc);
  const auto r = eval::evaluate(p, b);
  EXPECT_DOUBLE_EQ(r.ue + r.knowmem, 100.0);
  EXPECT_DOUBLE_EQ(r.ut, eval::utility(p, std::span<const MCQItem>(b.utility_eval)));
  EXPECT_FALSE(r.privleak.has_value());
  const auto forget = data::record_tokens(b.forget_records);
  EXPECT_DOUBLE_EQ(r.verbmem, eval::verbmem(p, std::span<const Tokens>(forget), 8));
  const auto with_retrain = eval::evaluate(p, b, &p, {false, 0});
  ASSERT_TRUE(with_retrain.privleak.has_value());
  EXPECT_DOUBLE_EQ(*with_retrain.privleak, 0.0);
  EXPECT_DOUBLE_EQ(with_retrain.verbmem, 0.0);
}
