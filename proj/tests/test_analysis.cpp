#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "ulab/analysis/attack.hpp"
#include "ulab/analysis/connectivity.hpp"
#include "ulab/analysis/keywords.hpp"
#include "ulab/analysis/relearn.hpp"

using namespace ulab;
using data::MCQItem;
using model::LMParams;
using model::Tokens;

namespace {

model::LMConfig tiny(std::uint32_t V = 12) {
  model::LMConfig c;
  c.vocab_size = V;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.seed = 4;
  return c;
}

LMParams<double> two_weights(double a, double b) {
  return LMParams<double>{tiny(), {{"w", num::Tensor<double>({2}, {a, b})}}};
}

MCQItem mcq(Tokens q, int answer) { return MCQItem{std::move(q), {Tokens{3}, Tokens{4}, Tokens{5}, Tokens{6}}, answer}; }

data::SyntheticBenchmark small_bench() {
  data::GenConfig gc;
  gc.n_forget_facts = 8;
  gc.n_retain_facts = 8;
  gc.record_len = 16;
  gc.n_records = 0;
  gc.n_finetune_records = 12;
  return data::generate_benchmark(gc);
}

}  // namespace

TEST(Interpolate, MidpointAndExactEndpoints) {
  const auto a = two_weights(1, -0.0), b = two_weights(3, 4);
  EXPECT_EQ(analysis::interpolate(a, b, 0.5).at("w").data, (std::vector<double>{0.5 + 1.5, -0.0 + 2.0}));
  const auto one = analysis::interpolate(a, b, 1.0);
  EXPECT_TRUE(std::signbit(one.at("w").data[1]));
  EXPECT_EQ(analysis::interpolate(a, b, 0.0), b);
  EXPECT_EQ(one, a);
  EXPECT_THROW(analysis::interpolate(a, b, 1.5), ContractViolation);
}

TEST(Interpolate, GridParsing) {
  EXPECT_EQ(analysis::parse_grid("0:1:0.25"), (std::vector<double>{0, 0.25, 0.5, 0.75, 1}));
  const auto g = analysis::parse_grid("0:1:0.1");
  ASSERT_EQ(g.size(), 11u);
  EXPECT_EQ(g.back(), 1.0);
  for (const char* bad : {"0:1", "0:1:0", "1:0:0.1", "a:b:c", "0:1:0.1x"})
    EXPECT_THROW(analysis::parse_grid(bad), ConfigError) << bad;
}

TEST(Interpolate, SweepEndpointsMatchDirectEvaluation) {
  const auto b = small_bench();
  const auto p = model::init_params<double>(tiny(static_cast<std::uint32_t>(b.vocab_size())));
  auto q = p;
  for (auto& x : q.tensors.at("head").data) x = -x;
  const auto s = analysis::lmc_sweep(p, q, analysis::parse_grid("0:1:0.5"), b);
  ASSERT_EQ(s.ue.size(), 3u);
  EXPECT_DOUBLE_EQ(s.ue.front(), eval::unlearning_effectiveness(q, std::span<const MCQItem>(b.forget_eval)));
  EXPECT_DOUBLE_EQ(s.ue.back(), eval::unlearning_effectiveness(p, std::span<const MCQItem>(b.forget_eval)));
  EXPECT_DOUBLE_EQ(s.ut.back(), eval::utility(p, std::span<const MCQItem>(b.utility_eval)));
  analysis::InterpolationSweep h{{0, 0.5, 1}, {40, 70, 60}, {}};
  EXPECT_DOUBLE_EQ(h.max_ue_deviation(), 20.0);
}

TEST(Keywords, Overlap) {
  const std::set<int> kf{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(analysis::keyword_overlap({1, 2}, kf), 0.5);
  EXPECT_DOUBLE_EQ(analysis::keyword_overlap({}, kf), 0.0);
  EXPECT_DOUBLE_EQ(analysis::keyword_overlap({1, 2, 3, 4, 9}, kf), 1.0);
  EXPECT_THROW(analysis::keyword_overlap({1}, {}), ContractViolation);
  const std::vector<Tokens> recs{{7, 1, 8}, {3, 9}};
  EXPECT_EQ(analysis::keywords_in(std::span<const Tokens>(recs), kf), (std::set<int>{1, 3}));
}

TEST(Keywords, ForgetSetDropsShortRecords) {
  const std::vector<Tokens> recs{{1, 9, 2, 9}, {9, 3, 9}, {4, 4, 9}};
  const auto k = analysis::keyword_forget_set(std::span<const Tokens>(recs), {1, 2, 3, 4});
  EXPECT_EQ(k, (std::vector<Tokens>{{1, 2}, {4, 4}}));
  EXPECT_THROW(analysis::keyword_forget_set(std::span<const Tokens>(recs), {}), ConfigError);
  EXPECT_THROW(analysis::keyword_forget_set(std::span<const Tokens>(recs), {7}), ConfigError);
}

TEST(Spearman, RanksAndCorrelation) {
  EXPECT_EQ(analysis::average_ranks(std::vector<double>{10, 20, 20, 30}), (std::vector<double>{1, 2.5, 2.5, 4}));
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_NEAR(analysis::spearman(x, std::vector<double>{2, 4, 6, 100}), 1.0, 1e-12);
  EXPECT_NEAR(analysis::spearman(x, std::vector<double>{9, 5, 1, 0}), -1.0, 1e-12);
  // No ties: 1 − 6Σd²/(n(n²−1)) with d = (0, 1, −1, 0).
  EXPECT_NEAR(analysis::spearman(x, std::vector<double>{1, 3, 2, 4}), 1.0 - 12.0 / 60.0, 1e-12);
  EXPECT_DOUBLE_EQ(analysis::spearman(x, std::vector<double>{5, 5, 5, 5}), 0.0);
  EXPECT_THROW(analysis::spearman(std::vector<double>{1}, std::vector<double>{1}), ContractViolation);
}

TEST(Attack, ZeroIterationsKeepsInitialPrefix) {
  const auto p = model::init_params<double>(tiny());
  const std::vector<MCQItem> items{mcq({1, 2}, 0), mcq({2, 1}, 3)};
  analysis::AttackConfig c;
  c.prefix_len = 3;
  c.iterations = 0;
  const auto r = analysis::prefix_attack(p, std::span<const MCQItem>(items), 7, c);
  EXPECT_EQ(r.prefix, (Tokens{7, 7, 7}));
  EXPECT_EQ(r.iterations_run, 0u);
  EXPECT_EQ(r.objective.size(), 1u);
  EXPECT_DOUBLE_EQ(r.ue_after, r.ue_init_prefix);
  EXPECT_DOUBLE_EQ(r.ue_before, eval::unlearning_effectiveness(p, std::span<const MCQItem>(items)));
}

TEST(Attack, ObjectiveIsNonIncreasingAndDeterministic) {
  const auto p = model::init_params<double>(tiny());
  const std::vector<MCQItem> items{mcq({1, 2}, 0), mcq({2, 1}, 3), mcq({8, 2}, 2)};
  analysis::AttackConfig c;
  c.prefix_len = 3;
  c.iterations = 6;
  c.top_k = 4;
  const auto r = analysis::prefix_attack(p, std::span<const MCQItem>(items), 7, c);
  ASSERT_GE(r.objective.size(), 2u);
  for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LT(r.objective[i], r.objective[i - 1]);
  EXPECT_NEAR(r.objective.back(), analysis::detail::prefix_objectives(p, std::span<const MCQItem>(items), {r.prefix})[0],
              1e-12);
  const auto again = analysis::prefix_attack(p, std::span<const MCQItem>(items), 7, c);
  EXPECT_EQ(again.prefix, r.prefix);
  c.prefix_len = 14;
  EXPECT_THROW(analysis::prefix_attack(p, std::span<const MCQItem>(items), 7, c), ContractViolation);
}

TEST(Attack, OneHotGradientMatchesEmbeddingPerturbation) {
  // Prefix tokens 9, 10, 11 occur nowhere else, so shifting row t of the
  // embedding by h·E[v] moves only that prefix position along E[v].
  auto p = model::init_params<double>(tiny());
  const std::vector<MCQItem> items{mcq({1, 2}, 0), mcq({2, 1}, 3)};
  const Tokens prefix{9, 10, 11};
  const auto grad = analysis::detail::prefix_onehot_grad(p, std::span<const MCQItem>(items), prefix);
  ASSERT_EQ(grad.shape, (num::Shape{3, 12}));
  const double h = 1e-6;
  auto& E = p.tensors.at("tok_emb").data;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t v : {0u, 5u, 11u}) {
      const auto t = static_cast<std::size_t>(prefix[j]);
      const std::vector<double> row(E.begin() + static_cast<std::ptrdiff_t>(v * 8),
                                    E.begin() + static_cast<std::ptrdiff_t>(v * 8 + 8));
      auto obj = [&](double s) {
        auto q = p;
        for (std::size_t k = 0; k < 8; ++k) q.tensors.at("tok_emb").data[t * 8 + k] += s * row[k];
        return analysis::detail::prefix_objectives(q, std::span<const MCQItem>(items), {prefix})[0];
      };
      EXPECT_NEAR(grad.data[j * 12 + v], (obj(h) - obj(-h)) / (2 * h), 1e-6) << j << "," << v;
    }
}

TEST(Attack, MostFrequentFillerIsAFillerToken) {
  const auto b = small_bench();
  const int f = analysis::most_frequent_filler(b);
  EXPECT_NE(std::find(b.filler.begin(), b.filler.end(), f), b.filler.end());
}

TEST(Relearn, ZeroCountIsTheUnlearnedModel) {
  const auto b = small_bench();
  const auto p = model::init_params<double>(tiny(static_cast<std::uint32_t>(b.vocab_size())));
  const auto pool = data::record_tokens(b.finetune_records);
  const auto c = analysis::relearn_curve(p, std::span<const Tokens>(pool), {0}, {}, b, {0, 1});
  const double ue = eval::unlearning_effectiveness(p, std::span<const MCQItem>(b.forget_eval));
  EXPECT_EQ(c.ue, std::vector<double>{ue});
  EXPECT_EQ(c.ue_per_seed.size(), 2u);
}

TEST(Relearn, DeterministicAndValidated) {
  const auto b = small_bench();
  const auto p = model::init_params<double>(tiny(static_cast<std::uint32_t>(b.vocab_size())));
  const auto pool = data::record_tokens(b.finetune_records);
  const analysis::FinetuneConfig ft{2, 1e-2, 4};
  const auto a = analysis::relearn_curve(p, std::span<const Tokens>(pool), {0, 4, 12}, ft, b, {3});
  const auto again = analysis::relearn_curve(p, std::span<const Tokens>(pool), {0, 4, 12}, ft, b, {3});
  EXPECT_EQ(a.ue, again.ue);
  EXPECT_TRUE(std::isfinite(a.mean_spearman()));
  EXPECT_THROW(analysis::relearn_curve(p, std::span<const Tokens>(pool), {4, 0}, ft, b, {3}), ContractViolation);
  EXPECT_THROW(analysis::relearn_curve(p, std::span<const Tokens>(pool), {13}, ft, b, {3}), ContractViolation);
}
