#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ulab/error.hpp"
#include "ulab/rng.hpp"

namespace ulab::data {

using Tokens = std::vector<int>;

enum class Domain { forget, retain };

struct GenConfig {
  std::uint32_t n_forget_facts = 60;
  std::uint32_t n_retain_facts = 60;
  std::uint32_t paraphrases_per_fact = 8;
  /// Minimum share of filler tokens per record.
  double filler_ratio = 0.5;
  std::uint32_t record_len = 32;
  /// Forget record count N; 0 packs records as densely as filler_ratio allows.
  std::uint32_t n_records = 120;
  /// Retain record count; 0 uses the forget set's facts-per-record density.
  std::uint32_t n_retain_records = 0;
  std::uint32_t n_relations = 4;
  /// Objects per domain; 0 means max(4, facts / 2).
  std::uint32_t n_objects = 0;
  std::uint32_t n_filler_tokens = 8;
  std::uint32_t n_finetune_records = 600;
  std::uint32_t vocab_limit = 256;
  std::uint64_t seed = 1234;

  /// Subjects per domain: each subject carries one fact per relation.
  std::uint32_t subjects_for(std::uint32_t n_facts) const { return (n_facts + n_relations - 1) / n_relations; }

  std::uint32_t objects_for(std::uint32_t n_facts) const {
    return n_objects ? n_objects : std::max<std::uint32_t>(4, n_facts / 2);
  }

  void validate() const {
    if (paraphrases_per_fact < 1) throw ConfigError("paraphrases_per_fact must be >= 1");
    if (!(filler_ratio >= 0.0 && filler_ratio < 1.0)) throw ConfigError("filler_ratio must lie in [0, 1)");
    if (n_forget_facts < 1 || n_retain_facts < 1) throw ConfigError("both domains need at least one fact");
    if (n_relations < 1) throw ConfigError("n_relations must be >= 1");
    if (n_filler_tokens < 1) throw ConfigError("n_filler_tokens must be >= 1");
    if (objects_for(n_forget_facts) < 4 || objects_for(n_retain_facts) < 4)
      throw ConfigError("each domain needs at least 4 objects for 4-choice questions");
    if (sentences_per_record() < 1)
      throw ConfigError("record_len and filler_ratio leave no room for a single fact sentence");
  }

  /// Fact sentences that fit in one record under the filler floor.
  std::uint32_t sentences_per_record() const {
    return static_cast<std::uint32_t>(static_cast<double>(record_len) * (1.0 - filler_ratio) / 4.0 + 1e-9);
  }

  bool operator==(const GenConfig&) const = default;
};

struct Fact {
  int subject = 0;
  int relation = 0;
  int object = 0;
  Domain domain = Domain::forget;
  bool operator==(const Fact&) const = default;
};

struct Record {
  Tokens tokens;
  std::vector<std::uint32_t> facts;  // indices into SyntheticBenchmark::facts
  bool operator==(const Record&) const = default;
};

struct MCQItem {
  Tokens question;
  std::array<Tokens, 4> options;
  int answer = 0;
  bool operator==(const MCQItem&) const = default;
};

struct SyntheticBenchmark {
  GenConfig config;
  std::vector<std::string> vocab;
  std::vector<Fact> facts;
  std::vector<Record> forget_records;    // D_f
  std::vector<Record> retain_records;    // D_r
  std::vector<Record> holdout_records;   // forget-domain, never trained on
  std::vector<Record> finetune_records;  // fresh retain-domain records
  std::vector<MCQItem> forget_eval;
  std::vector<MCQItem> utility_eval;
  Tokens keywords;  // K_f, sorted
  int period = 0;
  Tokens filler;

  std::uint32_t vocab_size() const { return static_cast<std::uint32_t>(vocab.size()); }
  bool operator==(const SyntheticBenchmark&) const = default;
};

inline std::vector<Tokens> record_tokens(const std::vector<Record>& recs) {
  std::vector<Tokens> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(r.tokens);
  return out;
}

/// Splits a token stream into floor(len / record_len) non-overlapping
/// records; the remainder is dropped.
inline std::vector<Record> chunk_corpus(const Tokens& stream, std::size_t record_len) {
  require(record_len >= 1, "record_len must be positive");
  if (stream.size() < record_len)
    throw DataError("token stream of length " + std::to_string(stream.size()) + " is shorter than one record (" +
                    std::to_string(record_len) + ")");
  std::vector<Record> out(stream.size() / record_len);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].tokens.assign(stream.begin() + static_cast<std::ptrdiff_t>(i * record_len),
                         stream.begin() + static_cast<std::ptrdiff_t>((i + 1) * record_len));
  return out;
}

/// Keyword tokens of a record in their original order.
inline Tokens keyword_filter(const Tokens& record, const std::set<int>& keywords) {
  Tokens out;
  for (int t : record)
    if (keywords.count(t)) out.push_back(t);
  return out;
}

namespace detail {

struct Layout {
  int period = 0;
  int filler0 = 1;
  int fs0, fr0, fo0, rs0, rr0, ro0, end;
};

inline Layout make_layout(const GenConfig& c) {
  Layout l;
  l.fs0 = l.filler0 + static_cast<int>(c.n_filler_tokens);
  l.fr0 = l.fs0 + static_cast<int>(c.subjects_for(c.n_forget_facts));
  l.fo0 = l.fr0 + static_cast<int>(c.n_relations);
  l.rs0 = l.fo0 + static_cast<int>(c.objects_for(c.n_forget_facts));
  l.rr0 = l.rs0 + static_cast<int>(c.subjects_for(c.n_retain_facts));
  l.ro0 = l.rr0 + static_cast<int>(c.n_relations);
  l.end = l.ro0 + static_cast<int>(c.objects_for(c.n_retain_facts));
  return l;
}

/// Writes fact sentences and filler into exactly record_len tokens. Filler
/// tokens are scattered uniformly over the gaps between sentences.
inline Tokens render_record(const std::vector<std::uint32_t>& fact_ids, const std::vector<Fact>& facts,
                            const GenConfig& c, int period, int filler0, Rng& rng) {
  const std::size_t k = fact_ids.size();
  require(4 * k <= c.record_len, "record overflow");
  std::vector<std::size_t> gaps(k + 1, 0);
  for (std::size_t i = 0; i < c.record_len - 4 * k; ++i) ++gaps[uniform_index(rng, k + 1)];
  Tokens out;
  auto emit_filler = [&](std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(filler0 + static_cast<int>(uniform_index(rng, c.n_filler_tokens)));
  };
  for (std::size_t s = 0; s < k; ++s) {
    emit_filler(gaps[s]);
    const Fact& f = facts[fact_ids[s]];
    out.insert(out.end(), {f.subject, f.relation, f.object, period});
  }
  emit_filler(gaps[k]);
  return out;
}

/// Spreads `copies` instances of every fact over n_records records, never
/// twice in one record, keeping loads balanced.
inline std::vector<std::vector<std::uint32_t>> assign_facts(const std::vector<std::uint32_t>& fact_ids,
                                                            std::uint32_t copies, std::uint32_t n_records,
                                                            std::uint32_t capacity, Rng& rng) {
  if (n_records < copies)
    throw ConfigError("need at least paraphrases_per_fact records per domain (" + std::to_string(copies) + ")");
  if (static_cast<std::uint64_t>(fact_ids.size()) * copies > static_cast<std::uint64_t>(n_records) * capacity)
    throw ConfigError("records too few or too short to hold every fact instance");
  std::vector<std::vector<std::uint32_t>> recs(n_records);
  std::vector<std::uint32_t> order = fact_ids;
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::uint32_t> idx(n_records);
  for (std::uint32_t f : order) {
    for (std::uint32_t i = 0; i < n_records; ++i) idx[i] = i;
    shuffle(idx.begin(), idx.end(), rng);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return recs[a].size() < recs[b].size(); });
    for (std::uint32_t j = 0; j < copies; ++j) recs[idx[j]].push_back(f);
  }
  for (auto& r : recs) shuffle(r.begin(), r.end(), rng);
  return recs;
}

/// Renders records, joins them into one stream and cuts it back into
/// records, so every record is a fixed-length chunk of a corpus stream.
inline std::vector<Record> build_records(const std::vector<std::vector<std::uint32_t>>& assignment,
                                         const std::vector<Fact>& facts, const GenConfig& c, const Layout& l,
                                         Rng& rng) {
  Tokens stream;
  for (const auto& ids : assignment) {
    auto t = render_record(ids, facts, c, l.period, l.filler0, rng);
    stream.insert(stream.end(), t.begin(), t.end());
  }
  auto recs = chunk_corpus(stream, c.record_len);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    recs[i].facts = assignment[i];
    std::sort(recs[i].facts.begin(), recs[i].facts.end());
  }
  return recs;
}

/// Questions read "<filler> . subject relation", i.e. a fact sentence right
/// after a sentence boundary, as facts appear inside records.
inline std::vector<MCQItem> make_items(const std::vector<std::uint32_t>& fact_ids, const std::vector<Fact>& facts,
                                       int obj0, std::uint32_t n_obj, int filler0, int period, Rng& rng) {
  std::vector<MCQItem> items;
  for (std::uint32_t id : fact_ids) {
    const Fact& f = facts[id];
    MCQItem it;
    it.question = {filler0, period, f.subject, f.relation};
    it.answer = static_cast<int>(uniform_index(rng, 4));
    std::vector<int> pool;
    for (std::uint32_t o = 0; o < n_obj; ++o)
      if (obj0 + static_cast<int>(o) != f.object) pool.push_back(obj0 + static_cast<int>(o));
    shuffle(pool.begin(), pool.end(), rng);
    std::size_t next = 0;
    for (int k = 0; k < 4; ++k) it.options[k] = {k == it.answer ? f.object : pool[next++]};
    items.push_back(std::move(it));
  }
  return items;
}

}  // namespace detail

/// Deterministic synthetic fact corpus. Every fact is the sentence
/// "subject relation object ."; each subject carries one fact per relation,
/// and the two domains share only the period and the filler vocabulary.
inline SyntheticBenchmark generate_benchmark(const GenConfig& cfg) {
  cfg.validate();
  const auto L = detail::make_layout(cfg);
  if (cfg.vocab_limit && static_cast<std::uint32_t>(L.end) > cfg.vocab_limit)
    throw ConfigError("vocabulary of " + std::to_string(L.end) + " tokens exceeds vocab_limit " +
                      std::to_string(cfg.vocab_limit));
  SyntheticBenchmark b;
  b.config = cfg;
  b.period = L.period;
  b.vocab.resize(static_cast<std::size_t>(L.end));
  b.vocab[0] = ".";
  auto name_range = [&](int start, std::uint32_t n, const std::string& prefix) {
    for (std::uint32_t i = 0; i < n; ++i) b.vocab[static_cast<std::size_t>(start) + i] = prefix + std::to_string(i);
  };
  name_range(L.filler0, cfg.n_filler_tokens, "w");
  name_range(L.fs0, cfg.subjects_for(cfg.n_forget_facts), "fs");
  name_range(L.fr0, cfg.n_relations, "fr");
  name_range(L.fo0, cfg.objects_for(cfg.n_forget_facts), "fo");
  name_range(L.rs0, cfg.subjects_for(cfg.n_retain_facts), "rs");
  name_range(L.rr0, cfg.n_relations, "rr");
  name_range(L.ro0, cfg.objects_for(cfg.n_retain_facts), "ro");
  for (std::uint32_t i = 0; i < cfg.n_filler_tokens; ++i) b.filler.push_back(L.filler0 + static_cast<int>(i));

  Rng rng(mix_seed(cfg.seed, 1));
  std::vector<std::uint32_t> forget_ids, retain_ids;
  auto make_facts = [&](Domain dom, std::uint32_t n, int s0, int r0, int o0, std::uint32_t n_obj,
                        std::vector<std::uint32_t>& ids) {
    for (std::uint32_t i = 0; i < n; ++i) {
      ids.push_back(static_cast<std::uint32_t>(b.facts.size()));
      b.facts.push_back(Fact{s0 + static_cast<int>(i / cfg.n_relations), r0 + static_cast<int>(i % cfg.n_relations),
                             o0 + static_cast<int>(uniform_index(rng, n_obj)), dom});
    }
  };
  make_facts(Domain::forget, cfg.n_forget_facts, L.fs0, L.fr0, L.fo0, cfg.objects_for(cfg.n_forget_facts), forget_ids);
  make_facts(Domain::retain, cfg.n_retain_facts, L.rs0, L.rr0, L.ro0, cfg.objects_for(cfg.n_retain_facts), retain_ids);

  const std::uint32_t cap = cfg.sentences_per_record();
  const std::uint64_t forget_instances = std::uint64_t{cfg.n_forget_facts} * cfg.paraphrases_per_fact;
  const std::uint32_t n_forget =
      cfg.n_records ? cfg.n_records
                    : std::max(cfg.paraphrases_per_fact, static_cast<std::uint32_t>((forget_instances + cap - 1) / cap));
  const double density = static_cast<double>(forget_instances) / n_forget;
  const std::uint64_t retain_instances = std::uint64_t{cfg.n_retain_facts} * cfg.paraphrases_per_fact;
  const std::uint32_t n_retain =
      cfg.n_retain_records
          ? cfg.n_retain_records
          : std::max(cfg.paraphrases_per_fact, static_cast<std::uint32_t>(std::ceil(retain_instances / density - 1e-9)));

  Rng rec_rng(mix_seed(cfg.seed, 2));
  b.forget_records = detail::build_records(
      detail::assign_facts(forget_ids, cfg.paraphrases_per_fact, n_forget, cap, rec_rng), b.facts, cfg, L, rec_rng);
  b.retain_records = detail::build_records(
      detail::assign_facts(retain_ids, cfg.paraphrases_per_fact, n_retain, cap, rec_rng), b.facts, cfg, L, rec_rng);

  // Holdout: same facts and layout statistics as D_f, fresh arrangement and filler.
  Rng hold_rng(mix_seed(cfg.seed, 3));
  b.holdout_records = detail::build_records(
      detail::assign_facts(forget_ids, cfg.paraphrases_per_fact, n_forget, cap, hold_rng), b.facts, cfg, L, hold_rng);

  // Fine-tuning pool: retain-domain records with the D_r sentence density.
  Rng ft_rng(mix_seed(cfg.seed, 4));
  const auto per_record = static_cast<std::uint32_t>(
      std::min<double>(cap, std::max(1.0, std::round(static_cast<double>(retain_instances) / n_retain))));
  std::vector<std::vector<std::uint32_t>> ft_assign(cfg.n_finetune_records);
  for (auto& ids : ft_assign) {
    std::vector<std::uint32_t> pool = retain_ids;
    shuffle(pool.begin(), pool.end(), ft_rng);
    ids.assign(pool.begin(), pool.begin() + std::min<std::size_t>(per_record, pool.size()));
  }
  if (!ft_assign.empty()) b.finetune_records = detail::build_records(ft_assign, b.facts, cfg, L, ft_rng);

  Rng q_rng(mix_seed(cfg.seed, 5));
  b.forget_eval = detail::make_items(forget_ids, b.facts, L.fo0, cfg.objects_for(cfg.n_forget_facts), L.filler0, L.period, q_rng);
  b.utility_eval = detail::make_items(retain_ids, b.facts, L.ro0, cfg.objects_for(cfg.n_retain_facts), L.filler0, L.period, q_rng);

  std::set<int> kw;
  for (std::uint32_t id : forget_ids) {
    kw.insert(b.facts[id].subject);
    kw.insert(b.facts[id].relation);
    kw.insert(b.facts[id].object);
  }
  b.keywords.assign(kw.begin(), kw.end());
  return b;
}

}  // namespace ulab::data
