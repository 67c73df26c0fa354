#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "ulab/databench/benchmark.hpp"
#include "ulab/databench/io.hpp"

using namespace ulab;
using data::GenConfig;
using data::Tokens;

namespace {

std::set<int> keyword_set(const data::SyntheticBenchmark& b) { return {b.keywords.begin(), b.keywords.end()}; }

}  // namespace

TEST(ChunkCorpus, TwoFullRecords) {
  const Tokens s(4094, 1);
  EXPECT_EQ(data::chunk_corpus(s, 2047).size(), 2u);
}

TEST(ChunkCorpus, ExactLengthGivesOneRecord) {
  Tokens s(7);
  for (int i = 0; i < 7; ++i) s[i] = i;
  const auto r = data::chunk_corpus(s, 7);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].tokens, s);
}

TEST(ChunkCorpus, RemainderIsDropped) {
  const std::size_t T = 10;
  Tokens s(2 * T + 5);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<int>(i);
  const auto r = data::chunk_corpus(s, T);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].tokens.front(), 10);
  EXPECT_EQ(r[1].tokens.back(), 19);
}

TEST(ChunkCorpus, ShortStreamIsDataError) { EXPECT_THROW(data::chunk_corpus(Tokens(3, 0), 4), DataError); }

TEST(KeywordFilter, Definition) {
  const std::set<int> K{1, 2};
  EXPECT_TRUE(data::keyword_filter({5, 6, 7}, K).empty());
  EXPECT_EQ(data::keyword_filter({1, 2, 2, 1}, K), (Tokens{1, 2, 2, 1}));
  EXPECT_EQ(data::keyword_filter({1, 9, 2, 9, 1}, K), (Tokens{1, 2, 1}));
}

TEST(Generate, SingleParaphraseNoFillerPutsEachFactInOneRecord) {
  GenConfig c;
  c.n_forget_facts = 12;
  c.n_retain_facts = 12;
  c.paraphrases_per_fact = 1;
  c.filler_ratio = 0;
  c.record_len = 16;
  c.n_records = 0;
  c.n_finetune_records = 4;
  const auto b = data::generate_benchmark(c);
  std::map<std::uint32_t, int> seen;
  for (const auto& r : b.forget_records)
    for (auto f : r.facts) ++seen[f];
  EXPECT_EQ(seen.size(), 12u);
  for (const auto& [f, n] : seen) EXPECT_EQ(n, 1) << f;
}

TEST(Generate, SameSeedIsByteIdentical) {
  const GenConfig c;
  EXPECT_EQ(data::benchmark_text(data::generate_benchmark(c)), data::benchmark_text(data::generate_benchmark(c)));
  GenConfig d = c;
  d.seed = c.seed + 1;
  EXPECT_NE(data::benchmark_text(data::generate_benchmark(c)), data::benchmark_text(data::generate_benchmark(d)));
}

TEST(Generate, KeywordOccurrencesMatchCorpusScan) {
  GenConfig c;
  c.n_forget_facts = 50;
  c.paraphrases_per_fact = 6;
  c.n_records = 0;
  const auto b = data::generate_benchmark(c);
  const auto K = keyword_set(b);
  std::size_t hits = 0;
  for (const auto& r : b.forget_records)
    for (int t : r.tokens) hits += K.count(t);
  EXPECT_EQ(hits, 50u * 6u * 3u);
}

TEST(Generate, StructuralInvariants) {
  const auto b = data::generate_benchmark(GenConfig{});
  const auto& c = b.config;
  const auto V = static_cast<int>(b.vocab_size());
  EXPECT_EQ(b.forget_records.size(), c.n_records);
  EXPECT_EQ(b.holdout_records.size(), b.forget_records.size());
  EXPECT_EQ(b.finetune_records.size(), c.n_finetune_records);
  for (const auto* recs : {&b.forget_records, &b.retain_records, &b.holdout_records, &b.finetune_records})
    for (const auto& r : *recs) {
      ASSERT_EQ(r.tokens.size(), c.record_len);
      for (int t : r.tokens) ASSERT_TRUE(t >= 0 && t < V);
    }
  // Every forget fact appears in at least paraphrases_per_fact records.
  std::map<std::uint32_t, std::uint32_t> count;
  for (const auto& r : b.forget_records)
    for (auto f : r.facts) ++count[f];
  for (const auto& [f, n] : count) EXPECT_GE(n, c.paraphrases_per_fact);
  EXPECT_EQ(count.size(), c.n_forget_facts);
  // Forget and retain entities are disjoint; D_f and D_r share no record.
  std::set<int> fe, re;
  for (const auto& f : b.facts)
    for (int t : {f.subject, f.relation, f.object}) (f.domain == data::Domain::forget ? fe : re).insert(t);
  for (int t : fe) EXPECT_FALSE(re.count(t));
  std::set<Tokens> ft;
  for (const auto& r : b.forget_records) ft.insert(r.tokens);
  for (const auto& r : b.retain_records) EXPECT_FALSE(ft.count(r.tokens));
  EXPECT_EQ(keyword_set(b), fe);
}

TEST(Generate, McqItemsHaveOneCorrectSameDomainOption) {
  const auto b = data::generate_benchmark(GenConfig{});
  ASSERT_EQ(b.forget_eval.size(), b.config.n_forget_facts);
  std::set<int> fobj, robj;
  for (const auto& f : b.facts) (f.domain == data::Domain::forget ? fobj : robj).insert(f.object);
  for (std::size_t i = 0; i < b.forget_eval.size(); ++i) {
    const auto& it = b.forget_eval[i];
    const auto& fact = b.facts[i];
    ASSERT_TRUE(it.answer >= 0 && it.answer < 4);
    EXPECT_EQ(it.options[static_cast<std::size_t>(it.answer)], Tokens{fact.object});
    std::set<Tokens> distinct(it.options.begin(), it.options.end());
    EXPECT_EQ(distinct.size(), 4u);
    EXPECT_EQ(it.question.back(), fact.relation);
    EXPECT_EQ(it.question[it.question.size() - 2], fact.subject);
    for (const auto& o : it.options) EXPECT_FALSE(robj.count(o[0]));
  }
}

TEST(Generate, ForgetAnswersAreStatedInForgetRecords) {
  const auto b = data::generate_benchmark(GenConfig{});
  for (std::size_t i = 0; i < b.forget_eval.size(); ++i) {
    const auto& f = b.facts[i];
    bool found = false;
    for (const auto& r : b.forget_records)
      for (std::size_t t = 0; t + 2 < r.tokens.size() && !found; ++t)
        found = r.tokens[t] == f.subject && r.tokens[t + 1] == f.relation && r.tokens[t + 2] == f.object;
    EXPECT_TRUE(found) << "fact " << i;
  }
}

TEST(Generate, VocabularyOverflowIsConfigError) {
  GenConfig c;
  c.vocab_limit = 20;
  EXPECT_THROW(data::generate_benchmark(c), ConfigError);
  c = GenConfig{};
  c.filler_ratio = 1.0;
  EXPECT_THROW(data::generate_benchmark(c), ConfigError);
  c = GenConfig{};
  c.paraphrases_per_fact = 0;
  EXPECT_THROW(data::generate_benchmark(c), ConfigError);
}

TEST(BenchmarkIo, JsonRoundTrip) {
  const auto b = data::generate_benchmark(GenConfig{});
  const auto back = data::benchmark_from_json(nlohmann::json::parse(data::benchmark_text(b)));
  EXPECT_EQ(back, b);
}

TEST(BenchmarkIo, UnknownGeneratorKeyIsConfigError) {
  EXPECT_THROW(nlohmann::json({{"n_forget_fact", 3}}).get<GenConfig>(), ConfigError);
  const auto c = nlohmann::json({{"record_len", 48}}).get<GenConfig>();
  EXPECT_EQ(c.record_len, 48u);
  EXPECT_EQ(c.n_forget_facts, GenConfig{}.n_forget_facts);
}

TEST(BenchmarkIo, WrongFormatIsDataError) {
  EXPECT_THROW(data::benchmark_from_json({{"format", "other"}}), DataError);
}
